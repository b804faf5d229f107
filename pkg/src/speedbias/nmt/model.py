"""A small pre-norm transformer encoder-decoder written as pure functions.

Parameters live in a flat ``dict[str, Tensor]``; every linear projection is
stored as ``<name>.w`` with shape ``(in, out)`` plus ``<name>.b``.  Decoder
layers use either masked self-attention or an average-attention (AAN) block:
a cumulative mean of the layer inputs, a feed-forward transform of that mean,
and sigmoid input/forget gates mixing it with the current input.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F

from .bpe import PAD_ID

Params = dict[str, torch.Tensor]

PAPER_LAYER_CONFIGS = ((6, 6), (8, 4), (10, 2), (11, 1), (6, 4), (6, 2), (6, 1))


@dataclass(frozen=True)
class ModelConfig:
    encoder_layers: int = 6
    decoder_layers: int = 6
    model_dim: int = 64
    attention_heads: int = 4
    ffn_dim: int = 128
    use_aan: bool = False
    source_vocab: int = 256
    target_vocab: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("encoder_layers", "decoder_layers", "model_dim", "attention_heads", "ffn_dim",
                     "source_vocab", "target_vocab"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.model_dim % self.attention_heads:
            raise ValueError("model_dim must be divisible by attention_heads")

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _linear_shapes(prefix: str, n_in: int, n_out: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.w": (n_in, n_out), f"{prefix}.b": (n_out,)}


def _norm_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.g": (d,), f"{prefix}.b": (d,)}


def _attn_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    out: dict[str, tuple[int, ...]] = {}
    for p in "qkvo":
        out.update(_linear_shapes(f"{prefix}.{p}", d, d))
    return out


def _ffn_shapes(prefix: str, d: int, f: int) -> dict[str, tuple[int, ...]]:
    return {**_linear_shapes(f"{prefix}.1", d, f), **_linear_shapes(f"{prefix}.2", f, d)}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.model_dim, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "src_emb": (cfg.source_vocab, d),
        "tgt_emb": (cfg.target_vocab, d),
    }
    for i in range(cfg.encoder_layers):
        p = f"enc.{i}"
        shapes.update(_norm_shapes(f"{p}.ln1", d))
        shapes.update(_attn_shapes(f"{p}.self", d))
        shapes.update(_norm_shapes(f"{p}.ln2", d))
        shapes.update(_ffn_shapes(f"{p}.ffn", d, f))
    shapes.update(_norm_shapes("enc.ln", d))
    for i in range(cfg.decoder_layers):
        p = f"dec.{i}"
        shapes.update(_norm_shapes(f"{p}.ln1", d))
        if cfg.use_aan:
            shapes.update(_ffn_shapes(f"{p}.aan.ffn", d, f))
            shapes.update(_linear_shapes(f"{p}.aan.gate", 2 * d, 2 * d))
        else:
            shapes.update(_attn_shapes(f"{p}.self", d))
        shapes.update(_norm_shapes(f"{p}.ln2", d))
        shapes.update(_attn_shapes(f"{p}.cross", d))
        shapes.update(_norm_shapes(f"{p}.ln3", d))
        shapes.update(_ffn_shapes(f"{p}.ffn", d, f))
    shapes.update(_norm_shapes("dec.ln", d))
    shapes.update(_linear_shapes("out", d, cfg.target_vocab))
    return shapes


def parameter_count(params: Params) -> int:
    return sum(t.numel() for t in params.values())


def init_params(cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> Params:
    gen = torch.Generator().manual_seed(cfg.seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            t = torch.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            t = torch.zeros(shape, dtype=dtype)
        elif name.endswith("_emb"):
            t = torch.randn(shape, generator=gen, dtype=dtype) * cfg.model_dim ** -0.5
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            t = (torch.rand(shape, generator=gen, dtype=dtype) * 2 - 1) * bound
        params[name] = t
    return params


def linear_weight_names(params: Params) -> list[str]:
    """Names of every linear projection matrix (the quantization targets)."""
    return [n for n, t in params.items() if n.endswith(".w") and t.dim() == 2]


# -- building blocks ---------------------------------------------------------

def _lin(x: torch.Tensor, p: Params, name: str) -> torch.Tensor:
    return x @ p[f"{name}.w"] + p[f"{name}.b"]


def _norm(x: torch.Tensor, p: Params, name: str) -> torch.Tensor:
    return F.layer_norm(x, x.shape[-1:], p[f"{name}.g"], p[f"{name}.b"], eps=1e-5)


def _ffn(x: torch.Tensor, p: Params, name: str) -> torch.Tensor:
    return _lin(torch.relu(_lin(x, p, f"{name}.1")), p, f"{name}.2")


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, t, d = x.shape
    return x.view(b, t, heads, d // heads).transpose(1, 2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, t, dh = x.shape
    return x.transpose(1, 2).reshape(b, t, h * dh)


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    """q: (B,H,Tq,dh); k, v: (B,H,Tk,dh); mask broadcastable to (B,H,Tq,Tk), True = blocked."""
    if q.shape[-2] > 1:
        return F.scaled_dot_product_attention(q, k, v, attn_mask=None if mask is None else ~mask)
    # a single query row is cheaper without the fused kernel
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(mask, float("-inf"))
    return torch.softmax(scores, dim=-1) @ v


def _mha(x: torch.Tensor, kv: torch.Tensor, p: Params, name: str, heads: int,
         mask: torch.Tensor | None) -> torch.Tensor:
    q = _split_heads(_lin(x, p, f"{name}.q"), heads)
    k = _split_heads(_lin(kv, p, f"{name}.k"), heads)
    v = _split_heads(_lin(kv, p, f"{name}.v"), heads)
    return _lin(_merge_heads(_attend(q, k, v, mask)), p, f"{name}.o")


def sinusoidal_positions(length: int, dim: int, offset: int = 0, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    pos = torch.arange(offset, offset + length, dtype=torch.float64).unsqueeze(1)
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe.to(dtype)


def _embed(ids: torch.Tensor, table: torch.Tensor, offset: int = 0) -> torch.Tensor:
    d = table.shape[1]
    return table[ids] * math.sqrt(d) + sinusoidal_positions(ids.shape[1], d, offset, table.dtype)


def aan_context(inputs: torch.Tensor) -> torch.Tensor:
    """Cumulative mean along the time axis: out[k] = mean(inputs[:k+1]).

    Accepts ``(T, d)`` or ``(B, T, d)``.
    """
    if inputs.shape[-2] == 0:
        raise ValueError("aan_context needs at least one time step")
    t = inputs.shape[-2]
    steps = torch.arange(1, t + 1, dtype=inputs.dtype).unsqueeze(-1)
    return torch.cumsum(inputs, dim=-2) / steps


def _aan_mix(a: torch.Tensor, avg: torch.Tensor, p: Params, name: str) -> torch.Tensor:
    g = _ffn(avg, p, f"{name}.ffn")
    gates = torch.sigmoid(_lin(torch.cat([a, g], dim=-1), p, f"{name}.gate"))
    i_gate, f_gate = gates.chunk(2, dim=-1)
    return i_gate * a + f_gate * g


# -- full-sequence forward ---------------------------------------------------

def _as_batch(ids) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(ids, dtype=torch.long)
    if t.dim() == 1:
        return t.unsqueeze(0), True
    return t, False


def encode(cfg: ModelConfig, p: Params, src: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns encoder memory (B,S,d) and the source padding mask (B,1,1,S)."""
    pad = (src == PAD_ID)[:, None, None, :]
    x = _embed(src, p["src_emb"])
    for i in range(cfg.encoder_layers):
        n = f"enc.{i}"
        h = _norm(x, p, f"{n}.ln1")
        x = x + _mha(h, h, p, f"{n}.self", cfg.attention_heads, pad)
        x = x + _ffn(_norm(x, p, f"{n}.ln2"), p, f"{n}.ffn")
    return _norm(x, p, "enc.ln"), pad


def decode_full(cfg: ModelConfig, p: Params, memory: torch.Tensor, src_pad: torch.Tensor,
                tgt: torch.Tensor) -> torch.Tensor:
    t = tgt.shape[1]
    causal = torch.triu(torch.ones(t, t, dtype=torch.bool), diagonal=1)
    x = _embed(tgt, p["tgt_emb"])
    for i in range(cfg.decoder_layers):
        n = f"dec.{i}"
        h = _norm(x, p, f"{n}.ln1")
        if cfg.use_aan:
            x = x + _aan_mix(h, aan_context(h), p, f"{n}.aan")
        else:
            x = x + _mha(h, h, p, f"{n}.self", cfg.attention_heads, causal)
        x = x + _mha(_norm(x, p, f"{n}.ln2"), memory, p, f"{n}.cross", cfg.attention_heads, src_pad)
        x = x + _ffn(_norm(x, p, f"{n}.ln3"), p, f"{n}.ffn")
    return _lin(_norm(x, p, "dec.ln"), p, "out")


def forward(cfg: ModelConfig, params: Params, source_ids, target_prefix_ids) -> torch.Tensor:
    """Next-token logits for every prefix position.

    ``target_prefix_ids`` are decoder inputs (they start with the EOS/BOS id 0).
    Unbatched 1-D inputs give ``(T, V)``; batched inputs give ``(B, T, V)``.
    """
    src, single = _as_batch(source_ids)
    tgt, single_t = _as_batch(target_prefix_ids)
    if single != single_t or src.shape[0] != tgt.shape[0]:
        raise ValueError("source and target batch shapes do not match")
    if src.max() >= cfg.source_vocab or tgt.max() >= cfg.target_vocab:
        raise ValueError("token id outside the vocabulary")
    memory, pad = encode(cfg, params, src)
    logits = decode_full(cfg, params, memory, pad, tgt)
    return logits[0] if single else logits


# -- incremental decoding ----------------------------------------------------

@dataclass
class DecoderState:
    """Per-layer caches for step-by-step decoding.

    Self-attention layers cache projected keys/values; AAN layers keep the
    running sum of their inputs so the average costs O(1) per step.
    """

    layers: list[dict]
    cross: list[tuple[torch.Tensor, torch.Tensor]]
    src_pad: torch.Tensor
    step: int = 0
    trace: list[list[torch.Tensor]] | None = field(default=None, repr=False)

    def reorder(self, index: torch.Tensor) -> None:
        for layer in self.layers:
            for key, value in layer.items():
                if isinstance(value, torch.Tensor):
                    layer[key] = value.index_select(0, index)
        self.cross = [(k.index_select(0, index), v.index_select(0, index)) for k, v in self.cross]
        self.src_pad = self.src_pad.index_select(0, index)
        if self.trace is not None:
            self.trace = [[x.index_select(0, index) for x in layer] for layer in self.trace]


def init_state(cfg: ModelConfig, p: Params, memory: torch.Tensor, src_pad: torch.Tensor,
               record_inputs: bool = False) -> DecoderState:
    cross = []
    layers: list[dict] = []
    for i in range(cfg.decoder_layers):
        n = f"dec.{i}.cross"
        cross.append((_split_heads(_lin(memory, p, f"{n}.k"), cfg.attention_heads),
                      _split_heads(_lin(memory, p, f"{n}.v"), cfg.attention_heads)))
        b = memory.shape[0]
        if cfg.use_aan:
            layers.append({"sum": torch.zeros(b, cfg.model_dim, dtype=memory.dtype), "t": 0})
        else:
            layers.append({})
    trace = [[] for _ in range(cfg.decoder_layers)] if record_inputs else None
    return DecoderState(layers, cross, src_pad, 0, trace)


def decoder_step(cfg: ModelConfig, p: Params, state: DecoderState, tokens: torch.Tensor) -> torch.Tensor:
    """Feed one token per row, advance the state, return (B, V) logits."""
    x = _embed(tokens.unsqueeze(1), p["tgt_emb"], offset=state.step)
    heads = cfg.attention_heads
    for i in range(cfg.decoder_layers):
        n = f"dec.{i}"
        cache = state.layers[i]
        h = _norm(x, p, f"{n}.ln1")
        if cfg.use_aan:
            cache["sum"] = cache["sum"] + h[:, 0]
            cache["t"] += 1
            avg = (cache["sum"] / cache["t"]).unsqueeze(1)
            if state.trace is not None:
                state.trace[i].append(h[:, 0])
            x = x + _aan_mix(h, avg, p, f"{n}.aan")
        else:
            q = _split_heads(_lin(h, p, f"{n}.self.q"), heads)
            k = _split_heads(_lin(h, p, f"{n}.self.k"), heads)
            v = _split_heads(_lin(h, p, f"{n}.self.v"), heads)
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
            x = x + _lin(_merge_heads(_attend(q, k, v, None)), p, f"{n}.self.o")
        ck, cv = state.cross[i]
        q = _split_heads(_lin(_norm(x, p, f"{n}.ln2"), p, f"{n}.cross.q"), heads)
        x = x + _lin(_merge_heads(_attend(q, ck, cv, state.src_pad)), p, f"{n}.cross.o")
        x = x + _ffn(_norm(x, p, f"{n}.ln3"), p, f"{n}.ffn")
    state.step += 1
    return _lin(_norm(x, p, "dec.ln"), p, "out")[:, 0]


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = PAD_ID) -> torch.Tensor:
    width = max((len(s) for s in seqs), default=0)
    out = torch.full((len(seqs), max(width, 1)), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        if len(s):
            out[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out
