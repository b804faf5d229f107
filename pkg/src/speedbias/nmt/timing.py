"""Wall-clock decode timing with warmup passes and repetitions."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import torch

from .model import ModelConfig, Params
from .pipeline import DecodeOptions, decode_corpus


@dataclass(frozen=True)
class DecodeTiming:
    seconds: float  # median over repetitions
    runs: tuple[float, ...] = ()
    sentences: int = 0

    @property
    def mean(self) -> float:
        return statistics.fmean(self.runs) if self.runs else 0.0


def time_calls(fn: Callable[[], object], warmup: int = 3, repetitions: int = 5,
               threads: int | None = 1) -> tuple[float, ...]:
    """Run ``fn`` ``warmup`` times untimed, then time ``repetitions`` calls.

    Torch is pinned to ``threads`` intra-op threads while timing.
    """
    prev = torch.get_num_threads()
    if threads:
        torch.set_num_threads(threads)
    try:
        for _ in range(warmup):
            fn()
        runs = []
        for _ in range(max(repetitions, 1)):
            start = time.perf_counter()
            fn()
            runs.append(time.perf_counter() - start)
    finally:
        torch.set_num_threads(prev)
    return tuple(runs)


def measure_decode_time(cfg: ModelConfig, params: Params, corpus: Sequence[Sequence[int]],
                        options: DecodeOptions = DecodeOptions(), warmup: int = 3,
                        repetitions: int = 5, threads: int | None = 1) -> DecodeTiming:
    """Decode-only time over the whole corpus (token ids in, token ids out)."""
    if not corpus:
        return DecodeTiming(0.0, (), 0)
    runs = time_calls(lambda: decode_corpus(cfg, params, corpus, options), warmup, repetitions, threads)
    return DecodeTiming(statistics.median(runs), runs, len(corpus))
