"""Parameter checkpoints as ``.npz`` containers with JSON metadata.

Float checkpoints hold one array per parameter.  Quantized checkpoints hold
the INT8 payload of every linear weight plus its scale; all other tensors
stay floating point.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, Params
from .quant import QuantizedTensor

FORMAT_VERSION = 1


def params_hash(params: Params) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = params[name].detach().cpu().contiguous().numpy()
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def _atomic_savez(path: Path, arrays: dict[str, np.ndarray]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: Params,
                    quantized: dict[str, QuantizedTensor] | None = None, extra: dict | None = None) -> str:
    """Write a checkpoint; returns the hash of the floating-point parameters."""
    path = Path(path)
    digest = params_hash(params)
    meta = {
        "version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "params_hash": digest,
        "quantized": sorted(quantized) if quantized else [],
        "shapes": {k: list(v.shape) for k, v in params.items()},
        **(extra or {}),
    }
    arrays: dict[str, np.ndarray] = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for name, t in params.items():
        if quantized and name in quantized:
            q = quantized[name]
            arrays[f"{name}::int8"] = q.values
            arrays[f"{name}::scale"] = np.array(q.scale, dtype=np.float64)
        else:
            arrays[name] = t.detach().cpu().numpy()
    _atomic_savez(path, arrays)
    return digest


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, Params, dict[str, QuantizedTensor], dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = ModelConfig(**meta["config"])
        params: Params = {}
        quantized: dict[str, QuantizedTensor] = {}
        for name, shape in meta["shapes"].items():
            if name in meta["quantized"]:
                q = QuantizedTensor(data[f"{name}::int8"].copy(), float(data[f"{name}::scale"]), tuple(shape))
                quantized[name] = q
            else:
                params[name] = torch.from_numpy(data[name].copy())
    return cfg, params, quantized, meta
