"""Byte-pair encoding: greedy most-frequent-pair merge learning.

Words are split into characters followed by an end-of-word marker on the last
symbol, e.g. ``low`` -> ``l o w</w>``.  Ties between equally frequent pairs go
to the lexicographically smallest pair.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

EOW = "</w>"
EOS, PAD, UNK = "</s>", "<pad>", "<unk>"
SPECIALS = (EOS, PAD, UNK)
EOS_ID, PAD_ID, UNK_ID = 0, 1, 2


def _initial(word: str) -> tuple[str, ...]:
    chars = list(word)
    chars[-1] = chars[-1] + EOW
    return tuple(chars)


def _merge_word(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    a, b = pair
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


@dataclass
class BpeModel:
    merges: list[tuple[str, str]]
    vocabulary: set[str]
    _ids: dict[str, int] = field(init=False, repr=False)
    _units: list[str] = field(init=False, repr=False)
    _cache: dict[str, tuple[str, ...]] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        self._units = list(SPECIALS) + sorted(self.vocabulary)
        self._ids = {u: i for i, u in enumerate(self._units)}

    def __len__(self) -> int:
        return len(self._units)

    def unit(self, idx: int) -> str:
        return self._units[idx]

    def segment(self, word: str) -> tuple[str, ...]:
        if word not in self._cache:
            symbols = _initial(word)
            for pair in self.merges:
                if len(symbols) == 1:
                    break
                symbols = _merge_word(symbols, pair)
            self._cache[word] = symbols
        return self._cache[word]

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            for sym in self.segment(word):
                ids.append(self._ids.get(sym, UNK_ID))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        pieces: list[str] = []
        for i in ids:
            if i in (EOS_ID, PAD_ID):
                continue
            pieces.append(self._units[i] if i != UNK_ID else UNK + EOW)
        return "".join(pieces).replace(EOW, " ").strip()

    def save(self, path: str | Path) -> None:
        """One merge pair per line; the character alphabet follows a ``#chars`` line."""
        chars = sorted(u for u in self.vocabulary if not any(u == a + b for a, b in self.merges))
        with open(path, "w", encoding="utf-8") as f:
            f.write("#version 1\n")
            for a, b in self.merges:
                f.write(f"{a} {b}\n")
            f.write("#chars\n")
            for c in chars:
                f.write(c + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BpeModel":
        merges: list[tuple[str, str]] = []
        vocab: set[str] = set()
        in_chars = False
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line == "#chars":
                in_chars = True
                continue
            if line.startswith("#version") or not line:
                continue
            if in_chars:
                vocab.add(line)
            else:
                a, b = line.split(" ")
                merges.append((a, b))
                vocab.add(a + b)
        return cls(merges, vocab)


def bpe_learn(corpus: Mapping[str, int], num_merges: int) -> BpeModel:
    """Learn ``num_merges`` merges from a word -> count mapping."""
    if not corpus:
        raise ValueError("empty corpus")
    words = {_initial(w): c for w, c in corpus.items() if w}
    vocab = {s for w in words for s in w}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pairs: Counter = Counter()
        for symbols, count in words.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += count
        if not pairs:
            break
        top = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == top)
        merges.append(best)
        vocab.add(best[0] + best[1])
        words = {_merge_word(w, best): c for w, c in words.items()}
    return BpeModel(merges, vocab)


def word_counts(lines: Iterable[str]) -> Counter:
    counts: Counter = Counter()
    for line in lines:
        counts.update(line.split())
    return counts


def bpe_apply(model: BpeModel, text: str) -> list[int]:
    return model.encode(text)


def bpe_decode(model: BpeModel, ids: Iterable[int]) -> str:
    return model.decode(ids)
