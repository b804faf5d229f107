"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 run failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from pathlib import Path
from typing import Sequence

import yaml

from .evaluator import DictionaryError, judge_all, load_dictionary, normalize, tally, write_outcomes
from .harness import (
    BASELINE,
    ConfigError,
    ExperimentConfig,
    OptimizationSpec,
    StackPlan,
    enumerate_matrix,
    load_averaged,
    matrix_dir,
    order_records,
    prepare_data,
    report,
    run_experiment,
)
from .metrics import accuracy_table, corpus_bleu, deltas
from .nmt.bpe import BpeModel
from .nmt.checkpoint import load_checkpoint, save_checkpoint
from .nmt.model import PAPER_LAYER_CONFIGS
from .nmt.pipeline import Translator, decode_corpus
from .nmt.quant import dequantized_params, quantize_params
from .nmt.timing import time_calls
from .nmt.toy import source_text
from .nmt.train import TrainingDiverged, train
from .templates import Lexicon, TemplateError, category_counts, generate_corpus, load_templates, read_jsonl, write_jsonl

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3

log = logging.getLogger("speedbias")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2, which we reserve for data errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _layers(text: str) -> tuple[int, int]:
    try:
        e, d = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected E,D got {text!r}")
    return e, d


def _seeds(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "output", None):
        cfg.output_dir = str(args.output)
    if getattr(args, "name", None):
        cfg.name = args.name
    if getattr(args, "seeds", None):
        cfg.seeds = args.seeds
    if getattr(args, "layers", None) and args.command in ("run", "matrix"):
        cfg.layer_configs = list(args.layers)
    return ExperimentConfig.from_dict(cfg.to_dict())


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False))


# -- subcommands ------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    templates = load_templates(args.templates)
    items = generate_corpus(templates, Lexicon.load(args.lexicon))
    write_jsonl(items, args.output)
    _print({"items": len(items), "templates": len(templates), "categories": category_counts(items)})
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    data = prepare_data(cfg, items=[])
    spec = OptimizationSpec(args.layers or (6, 6), args.aan, False, 5)
    mcfg = cfg.model_config(spec, args.seed, data)
    start = time.perf_counter()
    try:
        params = train(mcfg, data.train_pairs, cfg.hyperparams(args.seed))
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_RUN
    seconds = time.perf_counter() - start
    digest = save_checkpoint(out / "model.npz", mcfg, params, extra={"train_seconds": seconds})
    save_checkpoint(out / "model-int8.npz", mcfg, params, quantized=quantize_params(params),
                    extra={"train_seconds": seconds})
    data.source_bpe.save(out / "source.bpe")
    data.target_bpe.save(out / "target.bpe")
    (out / "references.tsv").write_text("".join(f"{s}\t{t}\n" for s, t in data.toy.test), encoding="utf-8")
    _print({"checkpoint": str(out / "model.npz"), "params_hash": digest, "train_seconds": round(seconds, 3),
            "config": mcfg.to_dict()})
    return EXIT_OK


def _read_sources(path: str) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".jsonl"):
        return [source_text(item.source) for item in read_jsonl(path)]
    return [source_text(line) for line in text.splitlines()]


def cmd_decode(args: argparse.Namespace) -> int:
    model = Path(args.model)
    ckpt = model / ("model-int8.npz" if args.quantized else "model.npz")
    cfg, params, quantized, _ = load_checkpoint(ckpt)
    if quantized:
        params = dequantized_params(params, quantized)
    tr = Translator(cfg, params, BpeModel.load(model / "source.bpe"), BpeModel.load(model / "target.bpe"))
    base = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    options = base.decode_options(args.beam)
    sources = tr.encode_sources(_read_sources(args.input))
    outputs: list[list[int]] = []

    def run() -> None:
        outputs[:] = decode_corpus(cfg, params, sources, options)

    runs = time_calls(run, args.warmup, args.repetitions)
    lines = [tr.target_bpe.decode(h) for h in outputs]
    Path(args.output).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    _print({"sentences": len(lines), "decode_seconds": statistics.median(runs), "runs": list(runs),
            "beam_size": args.beam, "quantized": bool(quantized)})
    return EXIT_OK


def _read_lines(path: str) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def cmd_evaluate(args: argparse.Namespace) -> int:
    items = read_jsonl(args.corpus)
    translations = _read_lines(args.translations)
    gd = load_dictionary(args.dictionary, args.language)
    try:
        outcomes = judge_all(items, translations, gd)
    except KeyError as e:
        raise DictionaryError(f"dictionary has no entry for {e.args[0]}") from e
    if args.outcomes:
        write_outcomes(items, outcomes, args.outcomes)
    t = tally(items, outcomes)
    acc = accuracy_table(t)
    _print({
        "tallies": t.to_dict(),
        "accuracies": acc.to_dict(),
        "accuracies_excluding_inconclusive": accuracy_table(t, exclude_inconclusive=True).to_dict(),
        "deltas": deltas(acc, strict=False).to_dict(),
    })
    return EXIT_OK


def cmd_bleu(args: argparse.Namespace) -> int:
    hyps = [normalize(line) for line in _read_lines(args.hypotheses)]
    refs = [normalize(line) for line in _read_lines(args.references)]
    _print(corpus_bleu(hyps, refs).to_dict())
    return EXIT_OK


def cmd_matrix(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.explain:
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK
    specs = [s for _, s in cfg.selected_specs()]
    for spec in specs:
        print(f"{spec.id}\t{spec.label()}{'  (baseline)' if spec.is_baseline else ''}")
    print(f"# {len(specs)} specs x {len(cfg.seeds)} seeds", file=sys.stderr)
    return EXIT_OK


def _run(cfg: ExperimentConfig, svg: bool) -> int:
    result = run_experiment(cfg)
    specs = [s for _, s in cfg.selected_specs()]
    baseline = specs[0].id
    out = matrix_dir(cfg) / "report"
    files = report(result.averaged, baseline, out, result.labels, title=cfg.name, svg=svg)
    print(files.table.read_text(encoding="utf-8"))
    print(f"# {result.computed} runs computed, {len(result.records)} records, report in {out}", file=sys.stderr)
    if result.failed:
        print(f"# {len(result.failed)} runs failed: {', '.join(r.run_id for r in result.failed)}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    cfg.mode = "matrix"
    return _run(cfg, args.svg)


def cmd_stack(args: argparse.Namespace) -> int:
    cfg = _config(args)
    cfg.mode = "stack"
    if args.steps:
        cfg.stack = [s for s in args.steps.split(";") if s.strip()]
        StackPlan(tuple(cfg.stack))
    return _run(cfg, args.svg)


def cmd_report(args: argparse.Namespace) -> int:
    root = Path(args.runs)
    records = load_averaged(root)
    if not records:
        raise FileNotFoundError(f"no averaged records under {root / 'averaged'}")
    if args.stack is not None:
        rows = StackPlan(tuple(s for s in args.stack.split(";") if s.strip())).specs()
        records = order_records(records, [s for _, s in rows])
        labels = {s.id: label for label, s in rows}
        baseline = rows[0][1].id
    else:
        present = {(r.model_config["encoder_layers"], r.model_config["decoder_layers"]) for r in records}
        known = [lc for lc in PAPER_LAYER_CONFIGS if lc in present]
        specs = enumerate_matrix(known + sorted(present - set(known)))
        records = order_records(records, specs)
        labels = {s.id: s.label() for s in specs}
        baseline = args.baseline or BASELINE.id
    files = report(records, baseline, args.output or root / "report", labels, svg=args.svg)
    print(files.table.read_text(encoding="utf-8"))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="speedbias", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="expand templates into the categorized test corpus")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--templates", help="template file (default: bundled appendix templates)")
    g.add_argument("--lexicon", help="lexicon TSV (default: bundled)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model on the toy corpus")
    t.add_argument("-o", "--output", required=True, help="model directory")
    t.add_argument("--config")
    t.add_argument("--layers", type=_layers, help="E,D (default 6,6)")
    t.add_argument("--aan", action="store_true")
    t.add_argument("--seed", type=int, default=1)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="translate a corpus (.jsonl test items or plain text)")
    d.add_argument("--model", required=True, help="directory written by `train`")
    d.add_argument("-i", "--input", required=True)
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--beam", type=int, default=5)
    d.add_argument("--quantized", action="store_true")
    d.add_argument("--config")
    d.add_argument("--warmup", type=int, default=3)
    d.add_argument("--repetitions", type=int, default=5)
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("evaluate", help="judge translations against the gender dictionary")
    e.add_argument("--corpus", required=True)
    e.add_argument("--translations", required=True)
    e.add_argument("--language", default="es", choices=["es", "de"])
    e.add_argument("--dictionary", help="dictionary TSV (default: bundled for --language)")
    e.add_argument("--outcomes", help="write per-item outcomes as JSON Lines")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bleu", help="corpus BLEU of line-aligned files")
    b.add_argument("hypotheses")
    b.add_argument("references")
    b.set_defaults(func=cmd_bleu)

    m = sub.add_parser("matrix", help="list the optimization specs")
    m.add_argument("--config")
    m.add_argument("--layers", type=_layers, action="append")
    m.add_argument("--explain", action="store_true", help="print the full effective configuration")
    m.set_defaults(func=cmd_matrix)

    for name, func, help_ in (("run", cmd_run, "run the optimization matrix"),
                              ("stack", cmd_stack, "run stacked optimizations")):
        r = sub.add_parser(name, help=help_)
        r.add_argument("--config")
        r.add_argument("--output", help="output directory (overrides the config)")
        r.add_argument("--name", help="experiment name (overrides the config)")
        r.add_argument("--seeds", type=_seeds)
        r.add_argument("--svg", action="store_true")
        if name == "run":
            r.add_argument("--layers", type=_layers, action="append")
        else:
            r.add_argument("--steps", help='";"-separated steps, e.g. "bs=1;AAN;SD(10,2);SSD(6,2);quantization"')
        r.set_defaults(func=func)

    rp = sub.add_parser("report", help="render tables and scatter data from stored runs")
    rp.add_argument("runs", help="experiment directory (<output_dir>/<name>)")
    rp.add_argument("-o", "--output")
    rp.add_argument("--baseline", help="baseline spec id")
    rp.add_argument("--stack", nargs="?", const=";".join(StackPlan().steps),
                    help="render a stacked-plan table instead of the matrix")
    rp.add_argument("--svg", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DictionaryError, TemplateError, FileNotFoundError, json.JSONDecodeError,
            yaml.YAMLError, KeyError, ValueError) as e:
        print(f"speedbias: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
