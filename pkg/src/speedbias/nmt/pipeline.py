"""Text-level translation: BPE encode, batched decode, BPE decode."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .bpe import EOS_ID, BpeModel
from .model import ModelConfig, Params
from .search import batch_beam, batch_greedy


@dataclass(frozen=True)
class DecodeOptions:
    beam_size: int = 5
    max_len_a: float = 1.5
    max_len_b: int = 5
    batch_size: int = 128

    def max_len(self, src_len: int) -> int:
        return max(1, int(self.max_len_a * src_len + self.max_len_b))


def decode_corpus(cfg: ModelConfig, params: Params, sources: Sequence[Sequence[int]],
                  options: DecodeOptions) -> list[list[int]]:
    """Decode every source; batches are formed over length-sorted sentences."""
    order = sorted(range(len(sources)), key=lambda i: (len(sources[i]), i))
    out: list[list[int]] = [[] for _ in sources]
    for start in range(0, len(order), options.batch_size):
        chunk = order[start:start + options.batch_size]
        srcs = [sources[i] for i in chunk]
        lens = [options.max_len(len(s)) for s in srcs]
        if options.beam_size == 1:
            hyps = batch_greedy(cfg, params, srcs, lens)
        else:
            hyps = batch_beam(cfg, params, srcs, options.beam_size, lens)
        for i, h in zip(chunk, hyps):
            out[i] = h
    return out


@dataclass
class Translator:
    config: ModelConfig
    params: Params
    source_bpe: BpeModel
    target_bpe: BpeModel

    def encode_sources(self, texts: Sequence[str]) -> list[list[int]]:
        # every source ends with EOS so no sentence is empty
        return [self.source_bpe.encode(t) + [EOS_ID] for t in texts]

    def translate_ids(self, sources: Sequence[Sequence[int]], options: DecodeOptions) -> list[str]:
        return [self.target_bpe.decode(h) for h in decode_corpus(self.config, self.params, sources, options)]

    def translate(self, texts: Sequence[str], options: DecodeOptions) -> list[str]:
        return self.translate_ids(self.encode_sources(texts), options)
