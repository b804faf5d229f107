"""Dictionary-based judging of occupation-noun gender in translations."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .templates import CATEGORIES, TestItem

CORRECT = "Correct"
INCORRECT = "Incorrect"
INCONCLUSIVE = "Inconclusive"

_PUNCT = "¡!¿?.,;:\"'«»()"
_NUMBERS = {"sg": "singular", "singular": "singular", "pl": "plural", "plural": "plural"}


class DictionaryError(ValueError):
    pass


def normalize(text: str) -> list[str]:
    """NFC, lowercase, whitespace split, strip punctuation at token edges.

    Diacritics are kept, so ``médico`` and ``medico`` stay distinct.
    """
    text = unicodedata.normalize("NFC", text).lower()
    tokens = (tok.strip(_PUNCT) for tok in text.split())
    return [tok for tok in tokens if tok]


@dataclass(frozen=True)
class Entry:
    masculine: tuple[str, ...]
    feminine: tuple[str, ...]

    def forms(self, gender: str) -> tuple[str, ...]:
        return self.feminine if gender == "F" else self.masculine


@dataclass
class GenderDictionary:
    language: str
    entries: dict[tuple[str, str], Entry] = field(default_factory=dict)

    def lookup(self, lemma: str, number: str) -> Entry:
        try:
            return self.entries[(lemma, _NUMBERS[number])]
        except KeyError:
            raise KeyError(f"{self.language} dictionary has no entry for {lemma!r} ({number})") from None

    def first_form(self, lemma: str, number: str, gender: str) -> str:
        return self.lookup(lemma, number).forms(gender)[0]


def _split_forms(cell: str) -> tuple[str, ...]:
    return tuple(unicodedata.normalize("NFC", f.strip()) for f in cell.split("|") if f.strip())


def parse_dictionary(text: str, language: str) -> GenderDictionary:
    """Parse ``english <TAB> sg|pl <TAB> masculine <TAB> feminine`` rows.

    ``|`` separates accepted synonyms within a cell.
    """
    gd = GenderDictionary(language)
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise DictionaryError(f"line {lineno}: expected 4 tab-separated columns, got {len(cols)}")
        english, number, masc, fem = (c.strip() for c in cols)
        if not english or number not in _NUMBERS:
            raise DictionaryError(f"line {lineno}: bad english/number cell ({english!r}, {number!r})")
        key = (english, _NUMBERS[number])
        if key in gd.entries:
            raise DictionaryError(f"line {lineno}: duplicate entry {key}")
        gd.entries[key] = Entry(_split_forms(masc), _split_forms(fem))
    return gd


def load_dictionary(file: str | Path | None, language: str) -> GenderDictionary:
    """Load a dictionary file; ``None`` loads the bundled table for ``es`` or ``de``."""
    if file is None:
        text = resources.files("speedbias.data").joinpath(f"dictionary_{language}.tsv").read_text(encoding="utf-8")
    else:
        text = Path(file).read_text(encoding="utf-8")
    return parse_dictionary(text, language)


@dataclass(frozen=True)
class EvalOutcome:
    verdict: str
    reason: str
    matched_form: str | None = None


def _find(tokens: Sequence[str], forms: Iterable[str]) -> str | None:
    """First form whose normalized tokens occur as a contiguous run."""
    for form in forms:
        ft = normalize(form)
        n = len(ft)
        if n and any(tokens[i:i + n] == ft for i in range(len(tokens) - n + 1)):
            return form
    return None


def judge(item: TestItem, translation: str, gd: GenderDictionary) -> EvalOutcome:
    entry = gd.lookup(item.occupation_lemma, item.occupation_number)
    ctx = item.context_gender
    other = "M" if ctx == "F" else "F"
    tokens = normalize(translation)

    expected = _find(tokens, entry.forms(ctx))
    opposite = _find(tokens, entry.forms(other))
    if expected and opposite:
        return EvalOutcome(INCONCLUSIVE, "both-genders-found")
    if expected:
        return EvalOutcome(CORRECT, "expected-form-found", expected)
    if opposite:
        return EvalOutcome(INCORRECT, "opposite-form-found", opposite)

    wrong_number = "plural" if _NUMBERS[item.occupation_number] == "singular" else "singular"
    alt = gd.entries.get((item.occupation_lemma, wrong_number))
    if alt is not None:
        form = _find(tokens, alt.masculine + alt.feminine)
        if form:
            return EvalOutcome(INCONCLUSIVE, "number-mismatch", form)
    return EvalOutcome(INCONCLUSIVE, "no-form-found")


@dataclass
class Counts:
    correct: int = 0
    incorrect: int = 0
    inconclusive: int = 0

    @property
    def total(self) -> int:
        return self.correct + self.incorrect + self.inconclusive

    def add(self, verdict: str) -> None:
        if verdict == CORRECT:
            self.correct += 1
        elif verdict == INCORRECT:
            self.incorrect += 1
        else:
            self.inconclusive += 1

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.correct + other.correct, self.incorrect + other.incorrect,
                      self.inconclusive + other.inconclusive)


@dataclass
class SubgroupTally:
    counts: dict[str, Counts] = field(default_factory=lambda: {c: Counts() for c in CATEGORIES})

    def add(self, category: str, verdict: str) -> None:
        self.counts[category].add(verdict)

    @property
    def total(self) -> int:
        return sum(c.total for c in self.counts.values())

    def pool(self, categories: Iterable[str]) -> Counts:
        out = Counts()
        for c in categories:
            out = out + self.counts[c]
        return out

    def to_dict(self) -> dict:
        return {c: {"correct": n.correct, "incorrect": n.incorrect, "inconclusive": n.inconclusive}
                for c, n in self.counts.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SubgroupTally":
        return cls({c: Counts(**d[c]) for c in CATEGORIES})


def judge_all(items: Sequence[TestItem], translations: Sequence[str], gd: GenderDictionary) -> list[EvalOutcome]:
    if len(items) != len(translations):
        raise ValueError(f"{len(items)} items but {len(translations)} translations")
    return [judge(item, tr, gd) for item, tr in zip(items, translations)]


def tally(items: Sequence[TestItem], outcomes: Sequence[EvalOutcome]) -> SubgroupTally:
    t = SubgroupTally()
    for item, outcome in zip(items, outcomes, strict=True):
        t.add(item.category, outcome.verdict)
    return t


def evaluate_corpus(
    items: Sequence[TestItem],
    translations: Sequence[str],
    gd: GenderDictionary,
    audit_path: str | Path | None = None,
) -> SubgroupTally:
    """Judge every translation and aggregate per category.

    When ``audit_path`` is given, per-item outcomes are written there as JSON Lines.
    """
    outcomes = judge_all(items, translations, gd)
    if audit_path is not None:
        write_outcomes(items, outcomes, audit_path)
    return tally(items, outcomes)


def write_outcomes(items: Sequence[TestItem], outcomes: Sequence[EvalOutcome], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for item, o in zip(items, outcomes):
            rec = {"id": item.id, "verdict": o.verdict, "reason": o.reason, "matched_form": o.matched_form}
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
