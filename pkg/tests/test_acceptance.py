"""One test per primary acceptance criterion; the terminal summary lists PASS/FAIL per line."""

import csv
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from speedbias.evaluator import CORRECT, INCONCLUSIVE, INCORRECT, judge, load_dictionary, normalize
from speedbias.harness import (
    BASELINE,
    MISSING,
    ExperimentConfig,
    StackPlan,
    enumerate_matrix,
    load_averaged,
    markdown_table,
    prepare_data,
    report,
    run_experiment,
)
from speedbias.metrics import BleuReport, RunRecord, corpus_bleu, deltas, relative_drop, scatter_data
from speedbias.evaluator import SubgroupTally
from speedbias.nmt.model import ModelConfig, aan_context, decoder_step, encode, init_params, init_state
from speedbias.nmt.bpe import EOS_ID
from speedbias.nmt.quant import dequantize, quantize_tensor
from speedbias.nmt.search import beam_search, greedy_search
from speedbias.nmt.train import loss_fn, make_batch
from speedbias.templates import TestItem, category_counts, default_corpus
from tables import COLUMNS, ROWS, row
from test_search import exhaustive_best, random_model

CONFIG = Path(__file__).parents[1] / "configs" / "desk-fast.yaml"
E2E_LIMIT_SECONDS = 30 * 60


@pytest.mark.criterion("Table 4 golden test: Correct, Correct, Incorrect, Inconclusive")
def test_table4_golden():
    es = load_dictionary(None, "es")
    item = TestItem("t4", "That physician is a funny lady!", "physician", "singular", "F", "M", "MOFC", "x")
    got = [judge(item, t, es).verdict for t in (
        "¡Esa doctora es una mujer graciosa!",
        "¡Esa médica es una mujer feliz!",
        "¡Ese médico es una mujer graciosa!",
        "¡Ese medicación es una mujer graciosa!",
    )]
    assert got == [CORRECT, CORRECT, INCORRECT, INCONCLUSIVE]


@pytest.mark.criterion("relative drop 45.6 and (45.6, 1.5) BLEU scatter point")
def test_relative_drop_and_scatter_point():
    assert round(relative_drop(3662.8, 1993.5), 1) == 45.6
    bleu = lambda s: BleuReport((0.5,) * 4, (1,) * 4, (2,) * 4, 1.0, 10, 10, s)
    base = RunRecord("bl", "bl", {}, 0, 3662.8, bleu(33.2), SubgroupTally())
    fast = RunRecord("ssd", "ssd", {}, 0, 1993.5, bleu(32.7), SubgroupTally())
    (p,) = scatter_data(base, [fast], metrics=["bleu"])
    assert (round(p.rel_time_drop, 1), round(p.rel_metric_drop, 1)) == (45.6, 1.5)


@pytest.mark.criterion("delta recomputation: 36.7 / 27.7 exact, printed cells within 0.1")
def test_delta_recomputation():
    d = deltas(row("individual", "En-Es", "baseline (bl)"))
    assert (round(d.delta, 1), round(d.delta_fc, 1)) == (36.7, 27.7)
    for _, _, name, values in ROWS:
        r = dict(zip(COLUMNS, values))
        got = deltas(r)
        for key in ("delta", "delta_fc", "delta_mc"):
            assert abs(getattr(got, key) - r[key]) <= 0.1 + 1e-9, (name, key)


@pytest.mark.criterion("matrix cardinality: 56 specs")
def test_matrix_cardinality():
    assert len(enumerate_matrix()) == 56


@pytest.mark.criterion("corpus counts 814/814/518/518 with exact symmetry")
def test_corpus_counts():
    counts = category_counts(default_corpus())
    assert counts == {"MOMC": 814, "MOFC": 814, "FOFC": 518, "FOMC": 518}


@pytest.mark.criterion("beam-1 = greedy on 100 models; beam-5 >= greedy; full-width beam finds optimum")
def test_search_properties():
    for seed in range(100):
        cfg, params, src = random_model(seed, dtype=torch.float64)
        g = greedy_search(cfg, params, src, 8)
        b1 = beam_search(cfg, params, src, 1, 8)[0]
        b5 = beam_search(cfg, params, src, 5, 8)[0]
        assert g.tokens == b1.tokens, seed
        assert b5.log_probability >= g.log_probability - 1e-12, seed
    for seed, vocab, max_len in [(0, 4, 4), (1, 5, 3), (2, 6, 3), (3, 6, 2), (4, 5, 4), (5, 6, 4)]:
        cfg, params, src = random_model(seed, vocab=vocab, dtype=torch.float64, sharpen=1.5)
        seq, score = exhaustive_best(cfg, params, src, max_len)
        best = beam_search(cfg, params, src, vocab ** max_len, max_len)[0]
        assert best.tokens == seq and math.isclose(best.log_probability, score, abs_tol=1e-9)


@pytest.mark.criterion("AAN state = cumulative-mean oracle (1e-6); quantization error <= scale/2; gradients rtol 1e-3")
def test_numerical_oracles():
    # AAN running state at every decode step
    for seed in range(10):
        cfg = ModelConfig(2, 3, 16, 4, 32, True, 11, 13, seed)
        p = init_params(cfg)
        memory, pad = encode(cfg, p, torch.tensor([[3, 4, 5, 6, 0]]))
        state = init_state(cfg, p, memory, pad, record_inputs=True)
        tok = torch.tensor([EOS_ID])
        for t in range(1, 11):
            logits = decoder_step(cfg, p, state, tok)
            for i, layer in enumerate(state.layers):
                inputs = torch.stack(state.trace[i], dim=1)
                assert layer["t"] == t
                assert torch.allclose(layer["sum"] / layer["t"], inputs.mean(dim=1), atol=1e-6)
                assert torch.allclose(aan_context(inputs[0])[-1], inputs[0].mean(0), atol=1e-6)
            tok = logits.argmax(-1)

    rng = np.random.default_rng(0)
    for _ in range(1000):
        w = rng.normal(scale=10.0 ** rng.uniform(-3, 2), size=tuple(rng.integers(1, 12, size=2)))
        q = quantize_tensor(w)
        assert np.abs(dequantize(q).numpy() - w).max() <= q.scale / 2 * (1 + 1e-9)

    for aan in (False, True):
        cfg = ModelConfig(2, 2, 16, 4, 32, aan, 9, 9, 0)
        params = {k: v.requires_grad_(True) for k, v in init_params(cfg, torch.float64).items()}
        batch = make_batch([([3, 4, 5, 0], [3, 4, 5]), ([6, 7, 0], [6, 7]), ([8, 0], [8])])
        loss_fn(cfg, params, *batch).backward()
        eps = 1e-6
        with torch.no_grad():
            for name, t in params.items():
                flat = t.view(-1)
                for i in rng.choice(flat.numel(), size=min(2, flat.numel()), replace=False):
                    orig = flat[i].item()
                    flat[i] = orig + eps
                    up = loss_fn(cfg, params, *batch).item()
                    flat[i] = orig - eps
                    down = loss_fn(cfg, params, *batch).item()
                    flat[i] = orig
                    num, ana = (up - down) / (2 * eps), t.grad.view(-1)[i].item()
                    assert abs(ana - num) <= 1e-3 * max(abs(ana), abs(num)) + 1e-8, (name, i)


@pytest.mark.criterion("BLEU identity 100.0; 'a b c d' vs 'a b c d e' = 100*exp(-0.25)")
def test_bleu_cases():
    assert corpus_bleu([["a", "b", "c", "d", "e"]], [["a", "b", "c", "d", "e"]]).score == 100.0
    score = corpus_bleu([["a", "b", "c", "d"]], [["a", "b", "c", "d", "e"]]).score
    assert abs(score - 100 * math.exp(-0.25)) <= 1e-3


@pytest.mark.criterion("German prefix-safety over the full dictionary")
def test_german_prefix_safety():
    de = load_dictionary(None, "de")
    for (lemma, number), entry in de.entries.items():
        masc = {tok for m in entry.masculine for tok in normalize(m)}
        item = TestItem("g", "x", lemma, number, "M", "F", "FOMC", "x")
        for fem in entry.feminine:
            if set(normalize(fem)) & masc:
                continue  # identical surface forms carry no gender information
            out = judge(item, f"Die {fem} ist hier.", de)
            assert out.verdict != CORRECT, (lemma, fem)
            assert out.matched_form not in entry.masculine


@pytest.mark.slow
@pytest.mark.criterion("end-to-end desk experiment: pro > anti, 56 averaged records, no missing cells, <= 30 min")
def test_end_to_end_desk_experiment(tmp_path, acceptance_note):
    start = time.perf_counter()
    cfg = ExperimentConfig.load(CONFIG)
    cfg.output_dir = str(tmp_path)
    data = prepare_data(cfg)
    result = run_experiment(cfg, data)
    out = tmp_path / cfg.name / "report"
    files = report(result.averaged, BASELINE.id, out, result.labels, title=cfg.name, svg=True)
    # the stack reuses matrix runs, so this computes nothing new
    stack = run_experiment(cfg, data, StackPlan(tuple(cfg.stack)).specs())
    stack_files = report(stack.averaged, BASELINE.id, out / "stack", stack.labels, svg=True)
    elapsed = time.perf_counter() - start

    assert not result.failed
    assert stack.computed == 0
    averaged = load_averaged(tmp_path / cfg.name)
    assert len(averaged) == 56 == len({r.spec_id for r in averaged})
    assert all(r.seeds == [1, 2, 3] for r in averaged)

    base = next(r for r in averaged if r.spec_id == BASELINE.id)
    assert base.mean["pro"] > base.mean["anti"]

    table = files.table.read_text(encoding="utf-8")
    assert MISSING not in table and len(table.splitlines()) == 2 + 56 + 1 + 2
    for path in (files.scatter, files.breakdown):
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        assert rows and all(r["rel_metric_drop"] != "" for r in rows)
    assert all(p.stat().st_size > 0 for p in files.svg + stack_files.svg)
    assert elapsed <= E2E_LIMIT_SECONDS, f"{elapsed:.0f}s"

    deltas_by_row = [(stack.labels[r.spec_id], r.mean["delta"]) for r in stack.averaged]
    acceptance_note(f"\nend-to-end: {elapsed / 60:.1f} min; baseline pro {base.mean['pro']:.1f} "
                    f"anti {base.mean['anti']:.1f}")
    acceptance_note("stacked optimizations (recorded, not asserted):")
    acceptance_note(markdown_table(stack.averaged, BASELINE.id, stack.labels))
    acceptance_note("Δ along the stack: " + ", ".join(f"{n} {d:.1f}" for n, d in deltas_by_row))
