"""Symmetric per-tensor INT8 weight quantization.

``scale = max|w| / 127`` and ``q = round_half_away(w / scale)``, so every
reconstructed weight is within ``scale / 2`` of the original.  Activations
are never quantized; decoding multiplies with the dequantized weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import Params, linear_weight_names


@dataclass(frozen=True)
class QuantizedTensor:
    values: np.ndarray  # int8
    scale: float
    original_shape: tuple[int, ...]

    @property
    def nbytes(self) -> int:
        return self.values.nbytes + 8


def quantize_tensor(w) -> QuantizedTensor:
    arr = np.asarray(w.detach().cpu().numpy() if isinstance(w, torch.Tensor) else w, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize a tensor with non-finite entries")
    peak = float(np.max(np.abs(arr))) if arr.size else 0.0
    scale = peak / 127.0 if peak > 0 else 1.0
    scaled = arr / scale
    q = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    q = np.clip(q, -127, 127).astype(np.int8)
    return QuantizedTensor(q, scale, tuple(arr.shape))


def dequantize(q: QuantizedTensor, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    return torch.from_numpy(q.values.astype(np.float64) * q.scale).reshape(q.original_shape).to(dtype)


def quantize_params(params: Params) -> dict[str, QuantizedTensor]:
    return {name: quantize_tensor(params[name]) for name in linear_weight_names(params)}


def dequantized_params(params: Params, quantized: dict[str, QuantizedTensor] | None = None) -> Params:
    """Copy of ``params`` where every linear weight is replaced by its INT8 reconstruction."""
    quantized = quantize_params(params) if quantized is None else quantized
    out = dict(params)
    dtype = next(iter(params.values())).dtype if params else torch.float32
    for name, q in quantized.items():
        out[name] = dequantize(q, params[name].dtype if name in params else dtype)
    return out
