"""Greedy and beam search over the incremental decoder.

Scores are summed token log-probabilities (float64, no length normalization).
Ties are broken deterministically: greedy takes the lowest token id, beam
search orders equal scores by the lexicographic order of the token sequence.
A hypothesis is complete when it emits EOS (id 0) or reaches ``max_len``
tokens; with ``beam_size=1`` both searches perform identical arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .bpe import EOS_ID
from .model import ModelConfig, Params, decoder_step, encode, init_state, pad_batch


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    log_probability: float

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS_ID

    def output(self) -> list[int]:
        """Tokens without the trailing EOS."""
        return list(self.tokens[:-1] if self.finished else self.tokens)


def _log_probs(logits: torch.Tensor) -> np.ndarray:
    return torch.log_softmax(logits, dim=-1).to(torch.float64).numpy()


def _prepare(cfg: ModelConfig, params: Params, sources: Sequence[Sequence[int]], record: bool = False):
    src = pad_batch(sources)
    memory, pad = encode(cfg, params, src)
    return init_state(cfg, params, memory, pad, record_inputs=record)


def _check(max_len: int, beam_size: int = 1) -> None:
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")


@torch.inference_mode()
def greedy_search(cfg: ModelConfig, params: Params, source_ids: Sequence[int], max_len: int) -> BeamHypothesis:
    _check(max_len)
    state = _prepare(cfg, params, [source_ids])
    tokens: list[int] = []
    score = 0.0
    prev = torch.tensor([EOS_ID])
    for _ in range(max_len):
        cand = score + _log_probs(decoder_step(cfg, params, state, prev))[0]
        v = int(np.argmax(cand))  # first maximum = lowest id
        score = cand[v]
        tokens.append(v)
        if v == EOS_ID:
            break
        prev = torch.tensor([v])
    return BeamHypothesis(tuple(tokens), float(score))


def decode_greedy(cfg: ModelConfig, params: Params, source_ids: Sequence[int], max_len: int) -> list[int]:
    return greedy_search(cfg, params, source_ids, max_len).output()


def _select(scores: np.ndarray, seqs: Sequence[tuple[int, ...]], k: int) -> list[tuple[int, int, float]]:
    """Top-k (beam, token, score) by score, ties by lexicographic sequence order."""
    n_beams, vocab = scores.shape
    flat = scores.ravel()
    n = min(k, flat.size)
    thresh = np.partition(flat, flat.size - n)[flat.size - n]
    idx = np.flatnonzero(flat >= thresh)
    lexrank = np.empty(n_beams, dtype=np.int64)
    lexrank[sorted(range(n_beams), key=lambda b: seqs[b])] = np.arange(n_beams)
    beams, toks = idx // vocab, idx % vocab
    order = np.lexsort((toks, lexrank[beams], -flat[idx]))[:n]
    return [(int(beams[o]), int(toks[o]), float(flat[idx[o]])) for o in order]


class _BeamSet:
    """Search bookkeeping for one source sentence."""

    def __init__(self, beam_size: int, max_len: int):
        self.k = beam_size
        self.max_len = max_len
        self.alive: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
        self.complete: list[BeamHypothesis] = []
        self.done = False

    def advance(self, lp: np.ndarray, step: int) -> list[int]:
        """Consume (n_alive, V) log-probs; returns parent rows of the new alive set."""
        seqs = [s for s, _ in self.alive]
        scores = np.array([sc for _, sc in self.alive])[:, None] + lp
        parents: list[int] = []
        alive: list[tuple[tuple[int, ...], float]] = []
        for b, v, sc in _select(scores, seqs, self.k):
            seq = seqs[b] + (v,)
            if v == EOS_ID or step == self.max_len:
                self.complete.append(BeamHypothesis(seq, sc))
            else:
                alive.append((seq, sc))
                parents.append(b)
        self.alive = alive
        if not alive:
            self.done = True
        elif self.complete and max(h.log_probability for h in self.complete) >= alive[0][1]:
            # extensions can only lower a score
            self.done = True
        return parents

    def ranked(self) -> list[BeamHypothesis]:
        return sorted(self.complete, key=lambda h: (-h.log_probability, h.tokens))


@torch.inference_mode()
def beam_search(cfg: ModelConfig, params: Params, source_ids: Sequence[int], beam_size: int,
                max_len: int) -> list[BeamHypothesis]:
    """All complete hypotheses found, best first."""
    _check(max_len, beam_size)
    state = _prepare(cfg, params, [source_ids])
    beams = _BeamSet(beam_size, max_len)
    prev = torch.tensor([EOS_ID])
    for step in range(1, max_len + 1):
        lp = _log_probs(decoder_step(cfg, params, state, prev))
        parents = beams.advance(lp, step)
        if beams.done:
            break
        state.reorder(torch.tensor(parents, dtype=torch.long))
        prev = torch.tensor([s[-1] for s, _ in beams.alive])
    return beams.ranked()


def decode_beam(cfg: ModelConfig, params: Params, source_ids: Sequence[int], beam_size: int,
                max_len: int) -> list[int]:
    return beam_search(cfg, params, source_ids, beam_size, max_len)[0].output()


# -- batched decoding across sentences --------------------------------------

@torch.inference_mode()
def batch_greedy(cfg: ModelConfig, params: Params, sources: Sequence[Sequence[int]],
                 max_lens: Sequence[int]) -> list[list[int]]:
    if not sources:
        return []
    state = _prepare(cfg, params, sources)
    rows = list(range(len(sources)))  # sentence index of each state row
    outputs: list[list[int]] = [[] for _ in sources]
    scores = [0.0] * len(sources)
    prev = torch.full((len(sources),), EOS_ID, dtype=torch.long)
    step = 0
    while rows:
        step += 1
        lp = _log_probs(decoder_step(cfg, params, state, prev))
        keep, nxt = [], []
        for r, sent in enumerate(rows):
            cand = scores[sent] + lp[r]
            v = int(np.argmax(cand))
            scores[sent] = cand[v]
            outputs[sent].append(v)
            if v != EOS_ID and step < max_lens[sent]:
                keep.append(r)
                nxt.append(v)
        rows = [rows[r] for r in keep]
        if rows and len(keep) < lp.shape[0]:
            state.reorder(torch.tensor(keep, dtype=torch.long))
        prev = torch.tensor(nxt, dtype=torch.long)
    return [o[:-1] if o and o[-1] == EOS_ID else o for o in outputs]


@torch.inference_mode()
def batch_beam(cfg: ModelConfig, params: Params, sources: Sequence[Sequence[int]], beam_size: int,
               max_lens: Sequence[int]) -> list[list[int]]:
    if not sources:
        return []
    _check(min(max_lens), beam_size)
    state = _prepare(cfg, params, sources)
    sets = [_BeamSet(beam_size, m) for m in max_lens]
    # state rows are grouped by sentence; row_start[s] is the first row of sentence s
    active = list(range(len(sources)))
    row_start = {s: s for s in active}
    prev = torch.full((len(sources),), EOS_ID, dtype=torch.long)
    step = 0
    while active:
        step += 1
        lp = _log_probs(decoder_step(cfg, params, state, prev))
        index: list[int] = []
        nxt: list[int] = []
        still = []
        new_start = {}
        for s in active:
            bs = sets[s]
            start = row_start[s]
            parents = bs.advance(lp[start:start + len(bs.alive)], step)
            if bs.done:
                continue
            new_start[s] = len(index)
            index.extend(start + p for p in parents)
            nxt.extend(seq[-1] for seq, _ in bs.alive)
            still.append(s)
        active = still
        row_start = new_start
        if active:
            state.reorder(torch.tensor(index, dtype=torch.long))
            prev = torch.tensor(nxt, dtype=torch.long)
    return [bs.ranked()[0].output() for bs in sets]

