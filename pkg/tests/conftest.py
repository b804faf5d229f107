import pytest

_CRITERIA = pytest.StashKey[dict]()
_NOTES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}
    config.stash[_NOTES] = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker and call.when == "call":
        item.config.stash[_CRITERIA][marker.args[0]] = call.excinfo is None


@pytest.fixture
def acceptance_note(request):
    """Text appended here is printed after the acceptance summary."""
    return request.config.stash[_NOTES].append


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_CRITERIA]
    if results:
        terminalreporter.section("acceptance criteria")
        for name, ok in results.items():
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
    for note in config.stash[_NOTES]:
        terminalreporter.write_line(note)
