import json

import pytest
import yaml

from speedbias import harness
from speedbias.cli import main
from speedbias.nmt.train import TrainingDiverged

TINY = {
    "corpus": {"size": 200, "test_size": 10, "bpe_merges": 30},
    "model": {"model_dim": 16, "attention_heads": 2, "ffn_dim": 32},
    "train": {"steps": 10, "batch": 16, "learning_rate": 0.01, "warmup": 2},
    "timing": {"warmup": 0, "repetitions": 1},
    # untrained models rarely stop early, so keep outputs short
    "decode": {"max_len_a": 0.0, "max_len_b": 3},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump({"version": 1, "name": "tiny", "seeds": [1], **TINY}))
    return str(path)


def out_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_generate(tmp_path, capsys):
    assert main(["generate", "-o", str(tmp_path / "c.jsonl")]) == 0
    info = out_json(capsys)
    assert info["categories"] == {"MOMC": 814, "MOFC": 814, "FOFC": 518, "FOMC": 518}
    assert len((tmp_path / "c.jsonl").read_text().splitlines()) == 2664


def test_matrix_lists_56_specs(capsys):
    assert main(["matrix"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 56 and lines[0].startswith("E6D6-sa-fp32-bs5") and "(baseline)" in lines[0]
    assert main(["matrix", "--layers", "6,6"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 8


def test_matrix_explain_prints_defaults(capsys):
    assert main(["matrix", "--explain"]) == 0
    d = yaml.safe_load(capsys.readouterr().out)
    assert d["version"] == 1 and d["corpus"]["bias_ratio"] == 0.9 and d["seeds"] == [1, 2, 3]


@pytest.mark.parametrize("argv", [["nonsense"], ["matrix", "--layers", "x"], ["bleu"], ["run", "--seeds", "a"]])
def test_usage_error_exit_code(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 1


def test_data_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("bogus: 1\n")
    assert main(["matrix", "--config", str(bad)]) == 2
    assert main(["bleu", str(tmp_path / "missing"), str(tmp_path / "missing")]) == 2
    assert main(["report", str(tmp_path)]) == 2
    broken = tmp_path / "broken.jsonl"
    broken.write_text("{not json\n")
    (tmp_path / "t.txt").write_text("x\n")
    assert main(["evaluate", "--corpus", str(broken), "--translations", str(tmp_path / "t.txt")]) == 2


def test_bleu(tmp_path, capsys):
    (tmp_path / "h").write_text("a b c d\n")
    (tmp_path / "r").write_text("a b c d e\n")
    assert main(["bleu", str(tmp_path / "h"), str(tmp_path / "r")]) == 0
    assert round(out_json(capsys)["score"], 2) == 77.88


def test_evaluate_table4(tmp_path, capsys):
    from speedbias.templates import TestItem, write_jsonl

    item = TestItem("x:0", "That physician is a funny lady!", "physician", "singular", "F", "M", "MOFC", "x")
    write_jsonl([item] * 4, tmp_path / "c.jsonl")
    (tmp_path / "t.txt").write_text("¡Esa doctora es una mujer graciosa!\n¡Esa médica es una mujer feliz!\n"
                                    "¡Ese médico es una mujer graciosa!\n¡Ese medicación es una mujer graciosa!\n")
    assert main(["evaluate", "--corpus", str(tmp_path / "c.jsonl"), "--translations", str(tmp_path / "t.txt"),
                 "--outcomes", str(tmp_path / "o.jsonl")]) == 0
    info = out_json(capsys)
    assert info["tallies"]["MOFC"] == {"correct": 2, "incorrect": 1, "inconclusive": 1}
    assert info["accuracies"]["mofc"] == 50.0
    assert len((tmp_path / "o.jsonl").read_text().splitlines()) == 4


def test_train_then_decode(tmp_path, config, capsys):
    model = tmp_path / "m"
    assert main(["train", "--config", config, "-o", str(model), "--layers", "2,1", "--aan"]) == 0
    info = out_json(capsys)
    assert info["config"]["decoder_layers"] == 1 and info["config"]["use_aan"]
    assert {p.name for p in model.iterdir()} >= {"model.npz", "model-int8.npz", "source.bpe", "target.bpe"}
    (tmp_path / "src.txt").write_text("My mother is a nurse.\nThe doctor smiled.\n")
    for extra in ([], ["--quantized", "--beam", "1"]):
        out = tmp_path / "hyp.txt"
        assert main(["decode", "--model", str(model), "-i", str(tmp_path / "src.txt"), "-o", str(out),
                     "--warmup", "0", "--repetitions", "2", *extra]) == 0
        info = out_json(capsys)
        assert info["sentences"] == 2 and len(info["runs"]) == 2
        assert info["quantized"] == bool(extra)
        assert len(out.read_text().splitlines()) == 2


def test_stack_and_report(tmp_path, config, capsys):
    argv = ["stack", "--config", config, "--output", str(tmp_path), "--steps", "bs=1"]
    assert main(argv) == 0
    table = capsys.readouterr().out
    assert "| baseline |" in table and "| +bs=1 |" in table and "max rel. % drop" in table
    assert main(["report", str(tmp_path / "tiny"), "--stack", "bs=1", "-o", str(tmp_path / "r")]) == 0
    assert table.endswith(capsys.readouterr().out)
    assert (tmp_path / "r" / "scatter_breakdown.csv").exists()


def test_failed_runs_exit_3(tmp_path, config, monkeypatch):
    def explode(*args, **kwargs):
        raise TrainingDiverged("non-finite loss")

    monkeypatch.setattr(harness, "train", explode)
    assert main(["stack", "--config", config, "--output", str(tmp_path), "--steps", "bs=1"]) == 3
