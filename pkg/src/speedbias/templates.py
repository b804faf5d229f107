"""Template DSL and test-corpus generation.

Templates are written with gender-neutral placeholders such as ``{rel}`` or
``{occ-sg-C}``; the occupation gender and the context gender are supplied when
a template is expanded.  Each expansion is the Cartesian product of the value
lists of its slots.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

GENDERS = ("F", "M")
CATEGORIES = ("MOMC", "MOFC", "FOFC", "FOMC")
PRO_CATEGORIES = ("MOMC", "FOFC")
ANTI_CATEGORIES = ("MOFC", "FOMC")

# Field order of a TestItem in JSON Lines output.
ITEM_FIELDS = (
    "id",
    "source",
    "occupation_lemma",
    "occupation_number",
    "context_gender",
    "stereotype_gender",
    "category",
    "template_id",
)


class TemplateError(ValueError):
    """Raised for malformed templates or lexicon files."""


@dataclass(frozen=True)
class Slot:
    keyword: str
    role: str
    number: str
    phonetic: str = "any"

    @property
    def is_occupation(self) -> bool:
        return self.role == "occupation"

    def lexicon_key(self, gender: str) -> str:
        return f"{gender.lower()}-{self.keyword}"


# Keyword name -> (role, number, phonetic).  ``n`` is the bare modifier noun
# ("female", "women") that only appears next to plural occupations.
KEYWORDS: dict[str, tuple[str, str, str]] = {
    "rel": ("relation", "singular", "any"),
    "n": ("noun", "plural", "any"),
    "n-sg": ("noun", "singular", "any"),
    "n-pl": ("noun", "plural", "any"),
    "sbj-prn": ("subject-pronoun", "singular", "any"),
    "obj-prn": ("object-pronoun", "singular", "any"),
    "pos-prn": ("possessive-pronoun", "singular", "any"),
    "obj-pos-prn": ("object-possessive-pronoun", "singular", "any"),
}
for _num, _short in (("singular", "sg"), ("plural", "pl")):
    KEYWORDS[f"occ-{_short}"] = ("occupation", _num, "any")
    KEYWORDS[f"occ-{_short}-C"] = ("occupation", _num, "consonant-initial")
    KEYWORDS[f"occ-{_short}-V"] = ("occupation", _num, "vowel-initial")


def make_slot(keyword: str) -> Slot:
    try:
        role, number, phonetic = KEYWORDS[keyword]
    except KeyError:
        raise TemplateError(f"unknown keyword {keyword!r}") from None
    return Slot(keyword, role, number, phonetic)


@dataclass(frozen=True)
class Template:
    id: str
    segments: tuple[str | Slot, ...]

    @property
    def slots(self) -> tuple[Slot, ...]:
        return tuple(s for s in self.segments if isinstance(s, Slot))

    @property
    def occupation_slot(self) -> Slot:
        return next(s for s in self.slots if s.is_occupation)

    def text(self) -> str:
        return "".join(s if isinstance(s, str) else "{" + s.keyword + "}" for s in self.segments)


_PLACEHOLDER = re.compile(r"\{([^{}]*)\}")


def parse_template(text: str, template_id: str = "t00") -> Template:
    """Parse one template line into literal segments and slots."""
    segments: list[str | Slot] = []
    pos = 0
    for match in _PLACEHOLDER.finditer(text):
        literal = text[pos:match.start()]
        if "{" in literal or "}" in literal:
            raise TemplateError(f"unbalanced braces in {text!r}")
        if literal:
            segments.append(literal)
        segments.append(make_slot(match.group(1).strip()))
        pos = match.end()
    tail = text[pos:]
    if "{" in tail or "}" in tail:
        raise TemplateError(f"unbalanced braces in {text!r}")
    if tail:
        segments.append(tail)

    n_occ = sum(1 for s in segments if isinstance(s, Slot) and s.is_occupation)
    if n_occ != 1:
        raise TemplateError(f"template must contain exactly one occupation slot, found {n_occ}: {text!r}")
    return Template(template_id, tuple(segments))


def load_templates(path: str | Path | None = None) -> list[Template]:
    """Read a template file; ids are ``t01``, ``t02``... in file order."""
    text = _read_text(path, "templates.txt")
    templates = []
    for line in text.splitlines():
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        templates.append(parse_template(line, f"t{len(templates) + 1:02d}"))
    return templates


class Lexicon:
    """Values for every gendered keyword, e.g. ``f-rel`` -> [wife, mother, ...].

    Occupation values optionally carry an English lemma (``nannies`` -> ``nanny``)
    so that plural items can be looked up in the evaluation dictionary.
    """

    def __init__(self, values: dict[str, list[str]], lemmas: dict[str, list[str]] | None = None):
        for key, vals in values.items():
            for v in vals:
                if not v or "{" in v or "}" in v:
                    raise TemplateError(f"invalid lexicon value {v!r} for {key}")
        self.values = {k: list(v) for k, v in values.items()}
        self.lemmas = {k: list(v) for k, v in (lemmas or {}).items()}
        for key, lem in self.lemmas.items():
            if len(lem) != len(self.values.get(key, [])):
                raise TemplateError(f"lemma list for {key} does not align with its values")

    def get(self, slot: Slot, gender: str) -> list[str]:
        key = slot.lexicon_key(gender)
        if key not in self.values:
            raise TemplateError(f"lexicon has no entry for {key}")
        return self.values[key]

    def lemma(self, slot: Slot, gender: str, index: int) -> str:
        key = slot.lexicon_key(gender)
        if key in self.lemmas:
            return self.lemmas[key][index]
        return self.values[key][index]

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Lexicon":
        values: dict[str, list[str]] = {}
        lemmas: dict[str, list[str]] = {}
        for lineno, line in enumerate(_read_text(path, "lexicon.tsv").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) not in (1, 2, 3):
                raise TemplateError(f"line {lineno}: expected 2 or 3 tab-separated columns")
            key = cols[0].strip()
            if key in values:
                raise TemplateError(f"line {lineno}: duplicate keyword {key}")
            values[key] = _split_values(cols[1] if len(cols) > 1 else "")
            if len(cols) == 3:
                lemmas[key] = _split_values(cols[2])
        return cls(values, lemmas)


def _split_values(cell: str) -> list[str]:
    return [v.strip() for v in cell.split(",") if v.strip()]


@dataclass(frozen=True)
class TestItem:
    __test__ = False  # keep pytest from collecting this class

    id: str
    source: str
    occupation_lemma: str
    occupation_number: str
    context_gender: str
    stereotype_gender: str
    category: str
    template_id: str

    @property
    def is_pro(self) -> bool:
        return self.category in PRO_CATEGORIES

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps({k: d[k] for k in ITEM_FIELDS}, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "TestItem":
        return cls(**{k: d[k] for k in ITEM_FIELDS})


def category_of(stereotype_gender: str, context_gender: str) -> str:
    return f"{stereotype_gender}O{context_gender}C"


_SPACE_BEFORE_PUNCT = re.compile(r"\s+([.,!?;:])")
_MULTI_SPACE = re.compile(r"\s{2,}")


def normalize_sentence(text: str) -> str:
    """Collapse runs of spaces, drop space before punctuation, capitalize."""
    text = _MULTI_SPACE.sub(" ", text.strip())
    text = _SPACE_BEFORE_PUNCT.sub(r"\1", text)
    return text[:1].upper() + text[1:]


@dataclass(frozen=True)
class Binding:
    """One concrete choice of values for every slot of a template."""

    template: Template
    values: tuple[str, ...]
    indices: tuple[int, ...]
    occupation_gender: str
    context_gender: str

    def raw_text(self) -> str:
        it = iter(self.values)
        return "".join(s if isinstance(s, str) else next(it) for s in self.template.segments)


def iter_bindings(tmpl: Template, lex: Lexicon, occ_gender: str, ctx_gender: str) -> Iterator[Binding]:
    if occ_gender not in GENDERS or ctx_gender not in GENDERS:
        raise ValueError(f"genders must be F or M, got {occ_gender!r}, {ctx_gender!r}")
    pools = [
        lex.get(slot, occ_gender if slot.is_occupation else ctx_gender)
        for slot in tmpl.slots
    ]
    for indices in itertools.product(*(range(len(p)) for p in pools)):
        values = tuple(pool[i] for pool, i in zip(pools, indices))
        yield Binding(tmpl, values, indices, occ_gender, ctx_gender)


def item_from_binding(b: Binding, lex: Lexicon) -> TestItem:
    slots = b.template.slots
    occ_pos = next(i for i, s in enumerate(slots) if s.is_occupation)
    occ_slot = slots[occ_pos]
    lemma = lex.lemma(occ_slot, b.occupation_gender, b.indices[occ_pos])
    idx = "-".join(str(i) for i in b.indices)
    return TestItem(
        id=f"{b.template.id}:{b.occupation_gender}{b.context_gender}:{idx}",
        source=normalize_sentence(b.raw_text()),
        occupation_lemma=lemma,
        occupation_number="singular" if occ_slot.number == "singular" else "plural",
        context_gender=b.context_gender,
        stereotype_gender=b.occupation_gender,
        category=category_of(b.occupation_gender, b.context_gender),
        template_id=b.template.id,
    )


def expand_template(tmpl: Template, lex: Lexicon, occ_gender: str, ctx_gender: str) -> list[TestItem]:
    return [item_from_binding(b, lex) for b in iter_bindings(tmpl, lex, occ_gender, ctx_gender)]


def generate_corpus(templates: Sequence[Template], lex: Lexicon) -> list[TestItem]:
    """All four gender pairings of every template, in (M,M) (M,F) (F,F) (F,M) order."""
    items: list[TestItem] = []
    for occ, ctx in (("M", "M"), ("M", "F"), ("F", "F"), ("F", "M")):
        for tmpl in templates:
            items.extend(expand_template(tmpl, lex, occ, ctx))
    return items


def default_corpus() -> list[TestItem]:
    return generate_corpus(load_templates(), Lexicon.load())


def category_counts(items: Iterable[TestItem]) -> dict[str, int]:
    counts = dict.fromkeys(CATEGORIES, 0)
    for item in items:
        counts[item.category] += 1
    return counts


def write_jsonl(items: Iterable[TestItem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for item in items:
            f.write(item.to_json() + "\n")


def read_jsonl(path: str | Path) -> list[TestItem]:
    with open(path, encoding="utf-8") as f:
        return [TestItem.from_dict(json.loads(line)) for line in f if line.strip()]


def _read_text(path: str | Path | None, default_name: str) -> str:
    if path is None:
        return resources.files("speedbias.data").joinpath(default_name).read_text(encoding="utf-8")
    return Path(path).read_text(encoding="utf-8")
