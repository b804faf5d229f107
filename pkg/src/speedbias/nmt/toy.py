"""Synthetic parallel data: English template sentences and a rule-based
translation into a small gendered target language (Spanish-like glosses).

Occupation nouns are rendered with the evaluation dictionary's first form for
the context gender, and determiners agree with the noun they introduce.  The
only bias in the data is frequency: ``bias_ratio`` of the training pairs are
pro-stereotypical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from ..evaluator import GenderDictionary, load_dictionary
from ..templates import (
    PRO_CATEGORIES,
    Lexicon,
    Template,
    TestItem,
    generate_corpus,
    load_templates,
)

_TOKEN = re.compile(r"\w+(?:'\w+)?|[^\w\s]")

GLOSS = {
    "about": "sobre", "alex's": "de_alex", "also": "también", "always": "siempre", "and": "y",
    "applauded": "aplaudió", "are": "son", "argued": "discutió", "arrived": "llegó", "arrives": "llega",
    "as": "como", "ask": "pregunta", "at": "de", "back": "espalda", "be": "ser", "became": "se_hizo",
    "because": "porque", "behind": "detrás", "being": "siendo", "busy": "ocupado", "carefully": "cuidadosamente",
    "chooses": "elige", "city": "ciudad", "colleagues": "colegas", "competent": "competente",
    "counterparts": "homólogos", "drove": "condujo", "dynamic": "dinámico", "early": "temprano", "earn": "ganan",
    "enjoys": "disfruta", "ethiopia": "etiopía", "everyone": "todos", "excels": "destaca",
    "experience": "experiencia", "fast": "rápido", "finished": "terminó", "for": "para", "friends": "amigos",
    "from": "de", "funny": "gracioso", "good": "bueno", "happens": "resulta", "hard": "duro", "hella": "muy",
    "helped": "ayudó", "here": "aquí", "highest": "mayor", "i": "yo", "in": "en", "is": "es", "job": "trabajo",
    "keys": "llaves", "kind": "amable", "knows": "sabe", "last": "pasado", "laughed": "se_rieron",
    "less": "menos", "live": "viven", "lost": "perdió", "lot": "mucha", "loves": "ama", "many": "muchos",
    "met": "conocí", "mouse": "ratón", "moved": "se_mudó", "my": "mi", "new": "nuevo", "not": "no", "of": "de",
    "on": "a", "our": "nuestro", "out": "cuidado", "people": "gente", "per": "según", "performed": "rindieron",
    "polls": "encuestas", "praised": "elogiaron", "predisposed": "predispuestos", "promotion": "promoción",
    "qualified": "calificado", "rare": "raros", "rate": "tasa", "respect": "respetan", "respectful": "respetuoso",
    "retired": "se_jubiló", "said": "dijo", "saw": "vimos", "screamed": "gritó", "self": "auto",
    "shift": "turno", "smart": "listo", "smiled": "sonrió", "strict": "estricto", "success": "éxito",
    "talented": "talentoso", "talked": "hablé", "than": "que", "thanked": "agradeció", "their": "su",
    "they": "ellos", "though": "aunque", "time": "hora", "tired": "cansado", "to": "a", "town": "pueblo",
    "us": "nos", "very": "muy", "wants": "quiere", "was": "estaba", "watch": "ten", "we": "nosotros",
    "well": "bien", "were": "eran", "when": "cuando", "where": "donde", "with": "con", "words": "palabras",
    "work": "trabajo", "worked": "trabajé", "works": "trabaja", "year": "año", "young": "jóvenes",
    "his": "su",
}

# English context word -> (target form, gender, number)
CONTEXT = {
    "wife": ("esposa", "F", "sg"), "husband": ("esposo", "M", "sg"),
    "mother": ("madre", "F", "sg"), "father": ("padre", "M", "sg"),
    "sister": ("hermana", "F", "sg"), "brother": ("hermano", "M", "sg"),
    "girlfriend": ("novia", "F", "sg"), "boyfriend": ("novio", "M", "sg"),
    "woman": ("mujer", "F", "sg"), "man": ("hombre", "M", "sg"),
    "gal": ("chica", "F", "sg"), "guy": ("chico", "M", "sg"),
    "lady": ("dama", "F", "sg"), "fellow": ("tipo", "M", "sg"),
    "women": ("mujeres", "F", "pl"), "men": ("hombres", "M", "pl"),
    "ladies": ("damas", "F", "pl"), "guys": ("chicos", "M", "pl"),
    "females": ("féminas", "F", "pl"), "males": ("varones", "M", "pl"),
    "gals": ("chicas", "F", "pl"), "fellows": ("tipos", "M", "pl"),
    "female": ("mujeres", "F", "pl"), "male": ("hombres", "M", "pl"),
    "she": ("ella", "F", "sg"), "he": ("él", "M", "sg"), "him": ("lo", "M", "sg"),
}

DETERMINERS = {
    # word: {(gender, number): form}
    "a": {("M", "sg"): "un", ("F", "sg"): "una"},
    "an": {("M", "sg"): "un", ("F", "sg"): "una"},
    "the": {("M", "sg"): "el", ("F", "sg"): "la", ("M", "pl"): "los", ("F", "pl"): "las"},
    "that": {("M", "sg"): "ese", ("F", "sg"): "esa"},
    "this": {("M", "sg"): "este", ("F", "sg"): "esta"},
    "those": {("M", "pl"): "esos", ("F", "pl"): "esas"},
    "these": {("M", "pl"): "estos", ("F", "pl"): "estas"},
}


def tokenize_english(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class RuleTranslator:
    """English template sentence -> gendered target sentence (space-tokenized)."""

    def __init__(self, lexicon: Lexicon | None = None, dictionary: GenderDictionary | None = None):
        self.lexicon = lexicon or Lexicon.load()
        self.dictionary = dictionary or load_dictionary(None, "es")
        # English occupation surface (as a token tuple) -> (lemma, number)
        self.occupations: dict[tuple[str, ...], tuple[str, str]] = {}
        for key, values in self.lexicon.values.items():
            if "-occ-" not in key:
                continue
            number = "plural" if "-pl" in key else "singular"
            lemmas = self.lexicon.lemmas.get(key, values)
            for v, lem in zip(values, lemmas):
                self.occupations[tuple(v.lower().split())] = (lem, number)
        self._max_occ = max(len(k) for k in self.occupations)

    def find_occupation(self, tokens: Sequence[str]) -> tuple[int, int, str, str] | None:
        for i in range(len(tokens)):
            for n in range(self._max_occ, 0, -1):
                hit = self.occupations.get(tuple(tokens[i:i + n]))
                if hit:
                    return i, i + n, hit[0], hit[1]
        return None

    @staticmethod
    def context_gender(tokens: Sequence[str]) -> str | None:
        for tok in tokens:
            if tok in CONTEXT:
                return CONTEXT[tok][1]
            if tok == "her":
                return "F"
        # a bare "his" is the weakest signal: templates may start with a literal "His"
        return "M" if "his" in tokens else None

    def translate(self, text: str) -> str:
        tokens = tokenize_english(text)
        occ = self.find_occupation(tokens)
        gender = self.context_gender(tokens) or "M"
        # noun positions with (gender, number) for determiner agreement
        nouns: dict[int, tuple[str, str]] = {}
        out: list[str | None] = [None] * len(tokens)
        if occ:
            start, end, lemma, number = occ
            num = "sg" if number == "singular" else "pl"
            nouns[start] = (gender, num)
            out[start] = self.dictionary.first_form(lemma, number, gender)
            for j in range(start + 1, end):
                out[j] = ""
        for i, tok in enumerate(tokens):
            if out[i] is not None:
                continue
            if tok in CONTEXT and tok not in ("she", "he", "him"):
                form, g, num = CONTEXT[tok]
                nouns[i] = (g, num)
                out[i] = form
        for i, tok in enumerate(tokens):
            if out[i] is not None:
                continue
            if tok in DETERMINERS:
                out[i] = self._determiner(tok, i, nouns)
            elif tok == "her":
                nxt = tokens[i + 1] if i + 1 < len(tokens) else "."
                out[i] = "su" if nxt.isalpha() else "la"
            elif tok in CONTEXT:
                out[i] = CONTEXT[tok][0]
            else:
                out[i] = GLOSS.get(tok, tok)
        return " ".join(t for t in out if t)

    @staticmethod
    def _determiner(word: str, pos: int, nouns: dict[int, tuple[str, str]]) -> str:
        forms = DETERMINERS[word]
        for j in range(pos + 1, pos + 4):
            if j in nouns and nouns[j] in forms:
                return forms[nouns[j]]
        return next(iter(forms.values()))


def source_text(english: str) -> str:
    """Model-side source: lowercased, punctuation split off."""
    return " ".join(tokenize_english(english))


@dataclass
class ToyCorpus:
    train: list[tuple[str, str]]
    test: list[tuple[str, str]]
    translator: RuleTranslator
    train_templates: list[str]
    test_templates: list[str]
    stats: dict = field(default_factory=dict)


def load_train_templates() -> list[Template]:
    path = resources.files("speedbias.data").joinpath("train_templates.txt")
    templates = load_templates(str(path))
    return [Template(f"train-{t.id}", t.segments) for t in templates]


def toy_corpus(bias_ratio: float, size: int, seed: int = 0, test_size: int = 300,
               test_every: int = 5, lexicon: Lexicon | None = None) -> ToyCorpus:
    """Biased training pairs plus a template-disjoint held-out set for BLEU.

    Every ``test_every``-th training template is held out; the rest feed the
    training pool, from which ``round(bias_ratio * size)`` pro-stereotypical
    and the remaining anti-stereotypical sentences are drawn.
    """
    if not 0.0 <= bias_ratio <= 1.0:
        raise ValueError(f"bias_ratio must be in [0, 1], got {bias_ratio}")
    lexicon = lexicon or Lexicon.load()
    translator = RuleTranslator(lexicon)
    templates = load_train_templates()
    held_out = [t for i, t in enumerate(templates) if i % test_every == test_every - 1]
    train_tmpl = [t for t in templates if t not in held_out]

    pool = generate_corpus(train_tmpl, lexicon)
    pro = [it for it in pool if it.category in PRO_CATEGORIES]
    anti = [it for it in pool if it.category not in PRO_CATEGORIES]
    n_pro = int(round(bias_ratio * size))
    n_anti = size - n_pro
    rng = np.random.default_rng(seed)

    def draw(items: list[TestItem], n: int) -> list[TestItem]:
        if n == 0 or not items:
            return []
        idx = rng.choice(len(items), size=n, replace=n > len(items))
        return [items[i] for i in idx]

    chosen = draw(pro, n_pro) + draw(anti, n_anti)
    order = rng.permutation(len(chosen))
    chosen = [chosen[i] for i in order]
    train = [(source_text(it.source), translator.translate(it.source)) for it in chosen]

    test_pool = generate_corpus(held_out, lexicon)
    tidx = rng.choice(len(test_pool), size=min(test_size, len(test_pool)), replace=False)
    test_items = [test_pool[i] for i in sorted(tidx)]
    test = [(source_text(it.source), translator.translate(it.source)) for it in test_items]
    stats = {
        "pro": sum(it.category in PRO_CATEGORIES for it in chosen),
        "anti": sum(it.category not in PRO_CATEGORIES for it in chosen),
        "train_pool": len(pool),
        "test_pool": len(test_pool),
    }
    return ToyCorpus(train, test, translator, [t.id for t in train_tmpl], [t.id for t in held_out], stats)
