"""Teacher-forced cross-entropy training with Adam."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .bpe import EOS_ID, PAD_ID
from .model import ModelConfig, Params, decode_full, encode, init_params, pad_batch

log = logging.getLogger(__name__)

Pair = tuple[Sequence[int], Sequence[int]]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainHyperparams:
    steps: int = 1500
    batch: int = 64
    learning_rate: float = 2e-3
    warmup: int = 100
    seed: int = 0
    clip_norm: float = 1.0


def make_batch(pairs: Sequence[Pair]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Source ids, decoder inputs (EOS-prefixed) and targets (EOS-suffixed, PAD elsewhere)."""
    src = pad_batch([s for s, _ in pairs])
    dec_in = pad_batch([[EOS_ID, *t] for _, t in pairs])
    dec_out = pad_batch([[*t, EOS_ID] for _, t in pairs])
    return src, dec_in, dec_out


def loss_fn(cfg: ModelConfig, params: Params, src: torch.Tensor, dec_in: torch.Tensor,
            dec_out: torch.Tensor) -> torch.Tensor:
    memory, pad = encode(cfg, params, src)
    logits = decode_full(cfg, params, memory, pad, dec_in)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), dec_out.reshape(-1), ignore_index=PAD_ID)


def token_accuracy(cfg: ModelConfig, params: Params, pairs: Sequence[Pair]) -> float:
    """Teacher-forced next-token accuracy over non-pad targets."""
    src, dec_in, dec_out = make_batch(pairs)
    with torch.no_grad():
        memory, pad = encode(cfg, params, src)
        pred = decode_full(cfg, params, memory, pad, dec_in).argmax(-1)
    mask = dec_out != PAD_ID
    return float((pred[mask] == dec_out[mask]).float().mean())


def _lr_factor(step: int, hp: TrainHyperparams) -> float:
    """Linear warmup, then cosine decay to zero."""
    warm = min(1.0, (step + 1) / hp.warmup) if hp.warmup else 1.0
    return warm * 0.5 * (1.0 + math.cos(math.pi * step / hp.steps))


def train(cfg: ModelConfig, corpus: Sequence[Pair], hp: TrainHyperparams,
          params: Params | None = None) -> Params:
    """Minimize teacher-forced cross-entropy; deterministic for a given seed.

    Raises TrainingDiverged when the loss becomes non-finite.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    torch.manual_seed(hp.seed)
    params = init_params(cfg) if params is None else params
    params = {k: v.clone().requires_grad_(True) for k, v in params.items()}
    if hp.steps == 0:
        return {k: v.detach() for k, v in params.items()}

    opt = torch.optim.Adam(params.values(), lr=hp.learning_rate, betas=(0.9, 0.98))
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: _lr_factor(s, hp))
    rng = np.random.default_rng(hp.seed)
    for step in range(hp.steps):
        idx = rng.choice(len(corpus), size=min(hp.batch, len(corpus)), replace=False)
        src, dec_in, dec_out = make_batch([corpus[i] for i in idx])
        loss = loss_fn(cfg, params, src, dec_in, dec_out)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss.item()} at step {step} (lr={sched.get_last_lr()[0]:.2e})")
        opt.zero_grad()
        loss.backward()
        if hp.clip_norm:
            torch.nn.utils.clip_grad_norm_(params.values(), hp.clip_norm)
        opt.step()
        sched.step()
        if step % 200 == 0 or step == hp.steps - 1:
            log.debug("step %d loss %.4f", step, loss.item())
    return {k: v.detach() for k, v in params.items()}
