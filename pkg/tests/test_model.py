import pytest
import torch
from hypothesis import given, settings, strategies as st

from speedbias.nmt.bpe import EOS_ID
from speedbias.nmt.model import (
    PAPER_LAYER_CONFIGS,
    ModelConfig,
    aan_context,
    decoder_step,
    encode,
    forward,
    init_params,
    init_state,
    param_shapes,
    parameter_count,
)


def tiny(e=2, d=2, aan=False, dim=16, vocab=11, seed=0):
    return ModelConfig(e, d, dim, 4, 2 * dim, aan, vocab, vocab + 2, seed)


def closed_form_count(cfg: ModelConfig) -> int:
    d, f, vs, vt = cfg.model_dim, cfg.ffn_dim, cfg.source_vocab, cfg.target_vocab
    norm, attn, ffn = 2 * d, 4 * (d * d + d), 2 * d * f + f + d
    enc = 2 * norm + attn + ffn
    if cfg.use_aan:
        dec = 3 * norm + attn + ffn + ffn + (2 * d) * (2 * d) + 2 * d
    else:
        dec = 3 * norm + 2 * attn + ffn
    return vs * d + vt * d + cfg.encoder_layers * enc + norm + cfg.decoder_layers * dec + norm + d * vt + vt


@pytest.mark.parametrize("aan", [False, True])
@pytest.mark.parametrize("layers", [(6, 1), (2, 3), (11, 1)])
def test_parameter_count_closed_form(layers, aan):
    cfg = ModelConfig(*layers, model_dim=32, attention_heads=4, ffn_dim=64, use_aan=aan,
                      source_vocab=50, target_vocab=60)
    assert parameter_count(init_params(cfg)) == closed_form_count(cfg)


def test_single_decoder_block():
    names = param_shapes(ModelConfig(6, 1))
    assert {n.split(".")[1] for n in names if n.startswith("dec.") and n[4].isdigit()} == {"0"}


def _blocks(cfg):
    parts = (n.split(".") for n in param_shapes(cfg))
    return {f"{p[0]}.{p[1]}" for p in parts if len(p) > 2 and p[1].isdigit()}


def test_layer_config_parameter_ordering():
    def count(e, d):
        return parameter_count(init_params(ModelConfig(e, d, 32, 4, 64)))

    base = count(6, 6)
    for e, d in PAPER_LAYER_CONFIGS:
        if e == 6 and d < 6:
            assert count(e, d) < base
        if e + d == 12:
            assert len(_blocks(ModelConfig(e, d))) == len(_blocks(ModelConfig(6, 6))) == 12
            # encoder blocks carry no cross-attention, so moving depth there never adds parameters
            assert count(e, d) <= base


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(model_dim=30, attention_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(encoder_layers=0)


def test_init_deterministic():
    a, b = init_params(tiny(seed=3)), init_params(tiny(seed=3))
    assert all(torch.equal(a[k], b[k]) for k in a)


@pytest.mark.parametrize("aan", [False, True])
def test_causal_masking(aan):
    cfg = tiny(aan=aan)
    p = init_params(cfg, torch.float64)
    src = [3, 4, 5, 0]
    tgt = [0, 5, 6, 7, 8]
    alt = [0, 5, 6, 9, 3]
    a, b = forward(cfg, p, src, tgt), forward(cfg, p, src, alt)
    assert torch.allclose(a[:3], b[:3], atol=1e-12)
    assert not torch.allclose(a[3:], b[3:])


def test_output_shape_and_finite():
    cfg = tiny()
    logits = forward(cfg, init_params(cfg), [3, 4, 0], [0, 5, 6])
    assert logits.shape == (3, cfg.target_vocab)
    assert torch.isfinite(logits).all()


@pytest.mark.parametrize("aan", [False, True])
def test_batch_of_one_equals_unbatched(aan):
    cfg = tiny(aan=aan)
    p = init_params(cfg)
    src, tgt = [3, 4, 5, 6, 0], [0, 7, 8]
    single = forward(cfg, p, src, tgt)
    batched = forward(cfg, p, [src], [tgt])[0]
    assert torch.allclose(single, batched, atol=1e-6)


def test_padding_does_not_change_result():
    cfg = tiny()
    p = init_params(cfg, torch.float64)
    short = forward(cfg, p, [3, 4, 0], [0, 7])
    batch = forward(cfg, p, [[3, 4, 0, 1, 1], [5, 6, 7, 8, 0]], [[0, 7], [0, 9]])
    assert torch.allclose(short, batch[0], atol=1e-10)


def test_forward_errors():
    cfg = tiny()
    p = init_params(cfg)
    with pytest.raises(ValueError):
        forward(cfg, p, [cfg.source_vocab], [0])
    with pytest.raises(ValueError):
        forward(cfg, p, [[3, 0], [4, 0]], [[0, 5]])


@pytest.mark.parametrize("aan", [False, True])
def test_incremental_decoding_matches_full_forward(aan):
    cfg = tiny(aan=aan, d=3)
    p = init_params(cfg, torch.float64)
    src = torch.tensor([[3, 4, 5, 0], [6, 7, 0, 1]])
    prefix = torch.tensor([[0, 5, 6, 7], [0, 8, 2, 3]])
    full = forward(cfg, p, src, prefix)
    memory, pad = encode(cfg, p, src)
    state = init_state(cfg, p, memory, pad)
    for t in range(prefix.shape[1]):
        step = decoder_step(cfg, p, state, prefix[:, t])
        assert torch.allclose(step, full[:, t], atol=1e-10)
    assert state.step == prefix.shape[1]


def test_aan_context_examples():
    assert aan_context(torch.tensor([[2.0], [4.0], [6.0]])).tolist() == [[2.0], [3.0], [4.0]]
    x = torch.tensor([[1.5, -2.0]])
    assert torch.equal(aan_context(x), x)
    with pytest.raises(ValueError):
        aan_context(torch.zeros(0, 3))


def test_aan_context_random_sequence_against_oracle():
    torch.manual_seed(0)
    x = torch.randn(16, 8, dtype=torch.float64)
    out = aan_context(x)
    running = torch.zeros(8, dtype=torch.float64)
    for k in range(16):
        running = running + x[k]
        oracle = x[: k + 1].mean(0)
        assert torch.allclose(out[k], oracle, atol=1e-6)
        assert torch.allclose(running / (k + 1), oracle, atol=1e-6)


def _greedy_with_trace(cfg, p, src, steps):
    memory, pad = encode(cfg, p, torch.tensor([src]))
    state = init_state(cfg, p, memory, pad, record_inputs=True)
    tok = torch.tensor([EOS_ID])
    for t in range(1, steps + 1):
        logits = decoder_step(cfg, p, state, tok)
        for i, layer in enumerate(state.layers):
            inputs = torch.stack(state.trace[i], dim=1)  # (B, t, d)
            assert layer["t"] == t
            oracle = inputs.mean(dim=1)
            assert torch.allclose(layer["sum"] / layer["t"], oracle, atol=1e-6)
            assert torch.allclose(aan_context(inputs)[:, -1], oracle, atol=1e-6)
        tok = logits.argmax(-1)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(3, 10), min_size=1, max_size=6), st.integers(0, 1000))
def test_aan_incremental_state_every_step(src, seed):
    cfg = tiny(aan=True, seed=seed)
    _greedy_with_trace(cfg, init_params(cfg), src + [EOS_ID], steps=8)
