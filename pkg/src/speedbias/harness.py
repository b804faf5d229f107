"""Experiment orchestration: the optimization matrix, stacked plans, resumable
multi-seed runs and Table-5 / Fig.-1 style reports."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import re
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import torch
import yaml

from .evaluator import SubgroupTally, evaluate_corpus, load_dictionary, normalize
from .metrics import (
    AveragedRecord,
    BleuReport,
    RunRecord,
    accuracy_table,
    average_runs,
    corpus_bleu,
    relative_drop,
    scatter_data,
)
from .nmt.bpe import BpeModel, bpe_learn, word_counts
from .nmt.checkpoint import load_checkpoint, params_hash, save_checkpoint
from .nmt.model import PAPER_LAYER_CONFIGS, ModelConfig, Params
from .nmt.pipeline import DecodeOptions, Translator, decode_corpus
from .nmt.quant import dequantized_params, quantize_params
from .nmt.timing import time_calls
from .nmt.toy import ToyCorpus, source_text, toy_corpus
from .nmt.train import TrainHyperparams, TrainingDiverged, train
from .templates import TestItem, default_corpus

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
BEAM_SIZES = (5, 1)
DEFAULT_STACK = ("bs=1", "AAN", "SD(10,2)", "SSD(6,2)", "quantization")


class ConfigError(ValueError):
    pass


# -- specs ------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizationSpec:
    layer_config: tuple[int, int] = (6, 6)
    use_aan: bool = False
    quantized: bool = False
    beam_size: int = 5

    @property
    def id(self) -> str:
        e, d = self.layer_config
        return f"E{e}D{d}-{'aan' if self.use_aan else 'sa'}-{'int8' if self.quantized else 'fp32'}-bs{self.beam_size}"

    @property
    def checkpoint_key(self) -> str:
        e, d = self.layer_config
        return f"E{e}D{d}-{'aan' if self.use_aan else 'sa'}"

    @property
    def is_baseline(self) -> bool:
        return self == BASELINE

    def label(self) -> str:
        e, d = self.layer_config
        parts = [f"({e},{d})", f"bs={self.beam_size}"]
        if self.use_aan:
            parts.append("AAN")
        if self.quantized:
            parts.append("INT8")
        return " ".join(parts)

    def to_dict(self) -> dict:
        return {"layer_config": list(self.layer_config), "use_aan": self.use_aan,
                "quantized": self.quantized, "beam_size": self.beam_size}

    @classmethod
    def parse(cls, spec_id: str) -> "OptimizationSpec":
        m = re.fullmatch(r"E(\d+)D(\d+)-(aan|sa)-(int8|fp32)-bs(\d+)", spec_id)
        if not m:
            raise ConfigError(f"malformed spec id {spec_id!r}")
        return cls((int(m[1]), int(m[2])), m[3] == "aan", m[4] == "int8", int(m[5]))


BASELINE = OptimizationSpec((6, 6), False, False, 5)


def enumerate_matrix(layer_configs: Sequence[tuple[int, int]] = PAPER_LAYER_CONFIGS,
                     beam_sizes: Sequence[int] = BEAM_SIZES) -> list[OptimizationSpec]:
    """Every layer config x AAN x quantization x beam size, in a fixed order.

    The order follows ``layer_configs`` and then (AAN off, on), (fp32, int8) and
    ``beam_sizes``, so the baseline comes first whenever (6,6) leads the list.
    """
    return [
        OptimizationSpec(tuple(lc), aan, q, bs)
        for lc in layer_configs
        for aan in (False, True)
        for q in (False, True)
        for bs in beam_sizes
    ]


@dataclass(frozen=True)
class StackPlan:
    """Named optimization steps applied cumulatively to a base spec.

    ``bs=N`` sets the beam, ``AAN`` and ``quantization`` switch their knob on,
    and ``SD(E,D)`` / ``SSD(E,D)`` / ``layers(E,D)`` replace the layer config.
    """

    steps: tuple[str, ...] = DEFAULT_STACK

    def __post_init__(self) -> None:
        for s in self.steps:
            self.apply(BASELINE, s)

    @staticmethod
    def apply(spec: OptimizationSpec, step: str) -> OptimizationSpec:
        s = step.strip()
        if m := re.fullmatch(r"bs\s*=\s*(\d+)", s):
            return dataclasses.replace(spec, beam_size=int(m[1]))
        if s.lower() == "aan":
            return dataclasses.replace(spec, use_aan=True)
        if s.lower() in ("quantization", "int8"):
            return dataclasses.replace(spec, quantized=True)
        if m := re.fullmatch(r"(?:SSD|SD|layers)\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)", s, flags=re.I):
            return dataclasses.replace(spec, layer_config=(int(m[1]), int(m[2])))
        raise ConfigError(f"unknown stack step {step!r}")

    def specs(self, base: OptimizationSpec = BASELINE) -> list[tuple[str, OptimizationSpec]]:
        rows = [("baseline", base)]
        spec = base
        for step in self.steps:
            spec = self.apply(spec, step)
            rows.append((f"+{step}", spec))
        return rows


# -- configuration ----------------------------------------------------------

@dataclass
class CorpusSettings:
    bias_ratio: float = 0.9
    size: int = 5000
    test_size: int = 300
    bpe_merges: int = 200
    seed: int = 0


@dataclass
class ModelSettings:
    model_dim: int = 64
    attention_heads: int = 4
    ffn_dim: int = 128


@dataclass
class TrainSettings:
    steps: int = 600
    batch: int = 64
    learning_rate: float = 2e-3
    warmup: int = 100
    clip_norm: float = 1.0


@dataclass
class DecodeSettings:
    max_len_a: float = 1.5
    max_len_b: int = 5
    batch_size: int = 128


@dataclass
class TimingSettings:
    warmup: int = 3
    repetitions: int = 5
    threads: int = 1


@dataclass
class ExperimentConfig:
    name: str = "desk"
    output_dir: str = "runs"
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    mode: str = "matrix"
    layer_configs: list[tuple[int, int]] = field(default_factory=lambda: list(PAPER_LAYER_CONFIGS))
    stack: list[str] = field(default_factory=lambda: list(DEFAULT_STACK))
    language: str = "es"
    audit: bool = True
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    decode: DecodeSettings = field(default_factory=DecodeSettings)
    timing: TimingSettings = field(default_factory=TimingSettings)

    _SECTIONS = {"corpus": CorpusSettings, "model": ModelSettings, "train": TrainSettings,
                 "decode": DecodeSettings, "timing": TimingSettings}

    def __post_init__(self) -> None:
        self.layer_configs = [tuple(int(x) for x in lc) for lc in self.layer_configs]
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.mode not in ("matrix", "stack"):
            raise ConfigError(f"mode must be 'matrix' or 'stack', got {self.mode!r}")
        if any(len(lc) != 2 or min(lc) < 1 for lc in self.layer_configs):
            raise ConfigError(f"bad layer_configs {self.layer_configs}")
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.name):
            raise ConfigError(f"name must be a plain identifier, got {self.name!r}")
        if not 0.0 <= self.corpus.bias_ratio <= 1.0:
            raise ConfigError("corpus.bias_ratio must be in [0, 1]")
        StackPlan(tuple(self.stack))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layer_configs"] = [list(lc) for lc in self.layer_configs]
        return {"version": CONFIG_VERSION, **d}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        d = dict(d or {})
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - top
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for key, value in d.items():
            if key in cls._SECTIONS:
                section = cls._SECTIONS[key]
                names = {f.name for f in dataclasses.fields(section)}
                bad = set(value or {}) - names
                if bad:
                    raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
                kwargs[key] = section(**(value or {}))
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from e
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_dict(data or {})

    def fingerprint(self) -> str:
        """Hash of everything that changes a run's outcome (not which runs are selected)."""
        d = self.to_dict()
        keep = {k: d[k] for k in ("corpus", "model", "train", "decode", "timing", "language")}
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]

    def hyperparams(self, seed: int) -> TrainHyperparams:
        t = self.train
        return TrainHyperparams(t.steps, t.batch, t.learning_rate, t.warmup, seed, t.clip_norm)

    def decode_options(self, beam_size: int) -> DecodeOptions:
        d = self.decode
        return DecodeOptions(beam_size, d.max_len_a, d.max_len_b, d.batch_size)

    def model_config(self, spec: OptimizationSpec, seed: int, data: "ExperimentData") -> ModelConfig:
        e, d = spec.layer_config
        m = self.model
        return ModelConfig(e, d, m.model_dim, m.attention_heads, m.ffn_dim, spec.use_aan,
                           len(data.source_bpe), len(data.target_bpe), seed)

    def selected_specs(self) -> list[tuple[str, OptimizationSpec]]:
        if self.mode == "stack":
            return StackPlan(tuple(self.stack)).specs()
        return [(s.label(), s) for s in enumerate_matrix(self.layer_configs)]


# -- data -------------------------------------------------------------------

@dataclass
class ExperimentData:
    toy: ToyCorpus
    source_bpe: BpeModel
    target_bpe: BpeModel
    train_pairs: list[tuple[list[int], list[int]]]
    items: list[TestItem]
    gender_sources: list[list[int]]
    bleu_sources: list[list[int]]
    bleu_references: list[list[str]]

    def translator(self, cfg: ModelConfig, params: Params | None) -> Translator:
        return Translator(cfg, params, self.source_bpe, self.target_bpe)


def prepare_data(cfg: ExperimentConfig, items: Sequence[TestItem] | None = None) -> ExperimentData:
    """Toy parallel corpus, BPE models and the encoded evaluation sets."""
    c = cfg.corpus
    toy = toy_corpus(c.bias_ratio, c.size, seed=c.seed, test_size=c.test_size)
    source_bpe = bpe_learn(word_counts(s for s, _ in toy.train), c.bpe_merges)
    target_bpe = bpe_learn(word_counts(t for _, t in toy.train), c.bpe_merges)
    tr = Translator(ModelConfig(), None, source_bpe, target_bpe)
    srcs = tr.encode_sources([s for s, _ in toy.train])
    pairs = [(s, target_bpe.encode(t)) for s, (_, t) in zip(srcs, toy.train)]
    items = list(default_corpus() if items is None else items)
    return ExperimentData(
        toy=toy,
        source_bpe=source_bpe,
        target_bpe=target_bpe,
        train_pairs=pairs,
        items=items,
        gender_sources=tr.encode_sources([source_text(i.source) for i in items]),
        bleu_sources=tr.encode_sources([s for s, _ in toy.test]),
        bleu_references=[normalize(t) for _, t in toy.test],
    )


# -- persistence ------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_record(path: Path, record: RunRecord | AveragedRecord) -> None:
    _atomic_write(path, json.dumps(record.to_dict(), indent=2, ensure_ascii=False) + "\n")


def read_record(path: str | Path) -> RunRecord:
    return RunRecord.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def read_averaged(path: str | Path) -> AveragedRecord:
    return AveragedRecord.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def matrix_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / cfg.name


def run_id(spec: OptimizationSpec, seed: int) -> str:
    return f"{spec.id}-s{seed}"


def _check_fingerprint(root: Path, cfg: ExperimentConfig) -> None:
    stamp = root / "experiment.yaml"
    if stamp.exists():
        old = yaml.safe_load(stamp.read_text(encoding="utf-8")) or {}
        if old.get("fingerprint") != cfg.fingerprint():
            raise ConfigError(f"{root} holds runs of a different experiment configuration; "
                              "choose another name or output_dir")
    else:
        _atomic_write(stamp, yaml.safe_dump({"fingerprint": cfg.fingerprint(), "config": cfg.to_dict()},
                                            sort_keys=False))


# -- running ----------------------------------------------------------------

@dataclass
class _Model:
    config: ModelConfig
    params: Params | None
    checkpoint_hash: str | None
    train_seconds: float
    error: str | None = None


class Runner:
    """Trains, decodes, times and evaluates specs; every artifact is cached on disk."""

    def __init__(self, cfg: ExperimentConfig, data: ExperimentData | None = None):
        self.cfg = cfg
        self.root = matrix_dir(cfg)
        self._data = data
        self._models: dict[tuple[str, int], _Model] = {}
        self.dictionary = load_dictionary(None, cfg.language)
        self.computed = 0

    @property
    def data(self) -> ExperimentData:
        if self._data is None:
            self._data = prepare_data(self.cfg)
        return self._data

    def record_path(self, spec: OptimizationSpec, seed: int) -> Path:
        return self.root / f"{run_id(spec, seed)}.json"

    def _model(self, spec: OptimizationSpec, seed: int) -> _Model:
        key = (spec.checkpoint_key, seed)
        if key in self._models:
            return self._models[key]
        ckpt = self.root / "checkpoints" / f"{spec.checkpoint_key}-s{seed}.npz"
        failed = ckpt.with_suffix(".failed.json")
        mcfg = self.cfg.model_config(spec, seed, self.data)
        if ckpt.exists():
            _, params, _, meta = load_checkpoint(ckpt)
            model = _Model(mcfg, params, meta["params_hash"], meta.get("train_seconds", 0.0))
        elif failed.exists():
            model = _Model(mcfg, None, None, 0.0, json.loads(failed.read_text())["error"])
        else:
            log.info("training %s seed %d", spec.checkpoint_key, seed)
            start = time.perf_counter()
            try:
                params = train(mcfg, self.data.train_pairs, self.cfg.hyperparams(seed))
            except TrainingDiverged as e:
                _atomic_write(failed, json.dumps({"error": str(e)}))
                model = _Model(mcfg, None, None, 0.0, str(e))
            else:
                seconds = time.perf_counter() - start
                ckpt.parent.mkdir(parents=True, exist_ok=True)
                digest = save_checkpoint(ckpt, mcfg, params, extra={"train_seconds": seconds})
                model = _Model(mcfg, params, digest, seconds)
        self._models = {key: model}
        return model

    def _quantized(self, model: _Model, spec: OptimizationSpec, seed: int) -> tuple[Params, str]:
        """Dequantized weights of the sibling checkpoint; the INT8 checkpoint is saved alongside."""
        q = quantize_params(model.params)
        path = self.root / "checkpoints" / f"{spec.checkpoint_key}-s{seed}-int8.npz"
        if not path.exists():
            save_checkpoint(path, model.config, model.params, quantized=q)
        params = dequantized_params(model.params, q)
        return params, params_hash(params)

    def run(self, spec: OptimizationSpec, seed: int) -> RunRecord:
        path = self.record_path(spec, seed)
        if path.exists():
            return read_record(path)
        record = self._compute(spec, seed)
        write_record(path, record)
        self.computed += 1
        return record

    def _compute(self, spec: OptimizationSpec, seed: int) -> RunRecord:
        model = self._model(spec, seed)
        extra: dict[str, Any] = {
            "spec": spec.to_dict(),
            "fingerprint": self.cfg.fingerprint(),
            "checkpoint": spec.checkpoint_key,
            "checkpoint_hash": model.checkpoint_hash,
            "train_seconds": model.train_seconds,
        }
        if model.params is None:
            extra["error"] = model.error
            return RunRecord(run_id(spec, seed), spec.id, model.config.to_dict(), seed, 0.0,
                             _empty_bleu(), SubgroupTally(), None, "failed", extra)
        params = model.params
        if spec.quantized:
            params, extra["quantized_params_hash"] = self._quantized(model, spec, seed)
            extra["quantization"] = "int8 weight-only, symmetric per-tensor"
        data = self.data
        tr = data.translator(model.config, params)
        options = self.cfg.decode_options(spec.beam_size)
        t = self.cfg.timing

        holder: list[list[list[int]]] = []

        def decode_gender() -> None:
            holder[:] = [decode_corpus(model.config, params, data.gender_sources, options)]

        runs = time_calls(decode_gender, t.warmup, t.repetitions, t.threads)
        decode_seconds = statistics.median(runs)
        start = time.perf_counter()
        translations = [data.target_bpe.decode(h) for h in holder[0]]
        sources = tr.encode_sources([source_text(i.source) for i in data.items])
        text_seconds = time.perf_counter() - start
        assert sources == data.gender_sources

        audit = None
        if self.cfg.audit:
            audit = self.root / "outcomes" / f"{run_id(spec, seed)}.jsonl"
            audit.parent.mkdir(parents=True, exist_ok=True)
        tallies = evaluate_corpus(data.items, translations, self.dictionary, audit)

        bleu_hyps = [normalize(h) for h in tr.translate_ids(data.bleu_sources, options)]
        bleu = corpus_bleu(bleu_hyps, data.bleu_references)
        extra.update({
            "timing_runs": list(runs),
            "sentences": len(data.items),
            "bleu_sentences": len(bleu_hyps),
            "accuracies_excluding_inconclusive": accuracy_table(tallies, exclude_inconclusive=True).to_dict(),
            "sample_translations": translations[:3],
        })
        return RunRecord(run_id(spec, seed), spec.id, model.config.to_dict(), seed, decode_seconds,
                         bleu, tallies, decode_seconds + text_seconds, "ok", extra)


def _empty_bleu() -> BleuReport:
    return BleuReport((0.0,) * 4, (0,) * 4, (0,) * 4, 0.0, 0, 0, 0.0)


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    averaged: list[AveragedRecord]
    labels: dict[str, str]
    computed: int

    @property
    def failed(self) -> list[RunRecord]:
        return [r for r in self.records if r.status != "ok"]


def run_experiment(cfg: ExperimentConfig, data: ExperimentData | None = None,
                   specs: Sequence[tuple[str, OptimizationSpec]] | None = None) -> ExperimentResult:
    """Run every selected spec for every seed, skipping runs already on disk.

    Records land in ``<output_dir>/<name>/<run-id>.json``; per-spec averages in
    ``<output_dir>/<name>/averaged/<spec-id>.json``.
    """
    root = matrix_dir(cfg)
    root.mkdir(parents=True, exist_ok=True)
    _check_fingerprint(root, cfg)
    specs = list(cfg.selected_specs() if specs is None else specs)
    runner = Runner(cfg, data)
    prev_threads = torch.get_num_threads()
    if cfg.timing.threads:
        torch.set_num_threads(cfg.timing.threads)
    by_key: dict[tuple[str, int], RunRecord] = {}
    try:
        # seed-major, checkpoint-grouped order keeps one trained model in memory at a time
        unique = list(dict.fromkeys(s for _, s in specs))
        keys = list(dict.fromkeys(s.checkpoint_key for s in unique))
        for seed in cfg.seeds:
            for key in keys:
                for spec in (s for s in unique if s.checkpoint_key == key):
                    rec = runner.run(spec, seed)
                    by_key[(spec.id, seed)] = rec
                    log.info("%s %s", rec.run_id, rec.status)
    finally:
        torch.set_num_threads(prev_threads)

    records: list[RunRecord] = []
    averaged: list[AveragedRecord] = []
    seen: set[str] = set()
    for _, spec in specs:
        if spec.id in seen:
            continue
        seen.add(spec.id)
        runs = [by_key[(spec.id, s)] for s in cfg.seeds]
        records.extend(runs)
        avg = average_runs(runs)
        avg.extra["spec"] = spec.to_dict()
        write_record(root / "averaged" / f"{spec.id}.json", avg)
        averaged.append(avg)
    labels = {s.id: label for label, s in specs}
    return ExperimentResult(records, averaged, labels, runner.computed)


def load_records(root: str | Path) -> list[RunRecord]:
    return [read_record(p) for p in sorted(Path(root).glob("*.json"))]


def load_averaged(root: str | Path) -> list[AveragedRecord]:
    return [read_averaged(p) for p in sorted((Path(root) / "averaged").glob("*.json"))]


# -- reporting --------------------------------------------------------------

TABLE_COLUMNS = (
    ("time(s)", "time"), ("BLEU", "bleu"), ("pro", "pro"), ("anti", "anti"), ("Δ", "delta"),
    ("FOFC", "fofc"), ("MOFC", "mofc"), ("ΔFC", "delta_fc"), ("MOMC", "momc"), ("FOMC", "fomc"),
    ("ΔMC", "delta_mc"),
)
DROP_COLUMNS = ("time", "bleu", "pro", "anti", "fofc", "mofc", "momc", "fomc")
FIGURE_METRICS = ("bleu", "pro", "anti")
BREAKDOWN_SERIES = (("MoMc", "momc"), ("FoFc", "fofc"), ("MoFc", "mofc"), ("FoMc", "fomc"))
MISSING = "—"


def _fmt(v: float | None, digits: int = 1) -> str:
    if v is None:
        return MISSING
    if abs(v) >= 1000:
        return f"{v:,.{digits}f}"
    return f"{v:.{digits}f}"


def _time_digits(rows: Sequence[Mapping[str, float | None]]) -> int:
    # desk-scale timings are seconds or less; keep enough digits to compare them
    times = [r.get("time") for r in rows if r.get("time")]
    return 1 if times and min(times) >= 100 else 3


def _spec_id(record: Any) -> str:
    return record.spec_id


def fastest(records: Sequence[Any]) -> Any:
    timed = [r for r in records if r.values().get("time")]
    if not timed:
        raise ValueError("no record has a decode time")
    return min(timed, key=lambda r: (r.values()["time"], _spec_id(r)))


def footer_drops(baseline: Any, records: Sequence[Any]) -> dict[str, float | None]:
    """Relative % drop of every metric from the baseline to the fastest record."""
    if not any(r.values().get("time") for r in records):
        return dict.fromkeys(DROP_COLUMNS)
    base, best = baseline.values(), fastest(records).values()
    out: dict[str, float | None] = {}
    for m in DROP_COLUMNS:
        b, v = base.get(m), best.get(m)
        out[m] = relative_drop(b, v) if b and b > 0 and v is not None else None
    return out


def markdown_table(records: Sequence[Any], baseline_id: str, labels: Mapping[str, str] | None = None,
                   title: str | None = None) -> str:
    labels = labels or {}
    baseline = _find_baseline(records, baseline_id)
    rows = [r.values() for r in records]
    digits = _time_digits(rows)
    header = ["model", *(c for c, _ in TABLE_COLUMNS)]
    lines = []
    if title:
        lines += [f"### {title}", ""]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join(["---"] + ["---:"] * len(TABLE_COLUMNS)) + "|")
    for rec, vals in zip(records, rows):
        name = labels.get(_spec_id(rec), _spec_id(rec))
        cells = [_fmt(vals.get(k), digits if k == "time" else 1) for _, k in TABLE_COLUMNS]
        lines.append("| " + " | ".join([name, *cells]) + " |")
    drops = footer_drops(baseline, records)
    cells = [_fmt(drops[k]) if k in drops else "" for _, k in TABLE_COLUMNS]
    lines.append("| " + " | ".join(["max rel. % drop", *cells]) + " |")
    return "\n".join(lines) + "\n"


def _find_baseline(records: Sequence[Any], baseline_id: str) -> Any:
    for r in records:
        if _spec_id(r) == baseline_id:
            return r
    raise ValueError(f"baseline {baseline_id!r} not among the records")


def scatter_rows(baseline: Any, records: Sequence[Any], metrics: Sequence[str] = FIGURE_METRICS,
                 names: Mapping[str, str] | None = None) -> list[tuple[str, float, float | None]]:
    names = names or {}
    return [(names.get(p.metric, p.metric), p.rel_time_drop, p.rel_metric_drop)
            for p in scatter_data(baseline, records, metrics)]


def scatter_csv(rows: Iterable[tuple[str, float, float | None]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "rel_time_drop", "rel_metric_drop"])
    for metric, x, y in rows:
        w.writerow([metric, f"{x:.6f}", "" if y is None else f"{y:.6f}"])
    return buf.getvalue()


def trendline(points: Sequence[tuple[float, float]]) -> tuple[float, float] | None:
    """Least-squares (slope, intercept); None with fewer than two distinct x values."""
    if len({x for x, _ in points}) < 2:
        return None
    fit = statistics.linear_regression([x for x, _ in points], [y for _, y in points])
    return fit.slope, fit.intercept


def scatter_svg(rows: Sequence[tuple[str, float, float | None]], path: str | Path, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "speedbias"
    fig, ax = plt.subplots(figsize=(5, 4))
    for metric in dict.fromkeys(m for m, _, _ in rows):
        pts = [(x, y) for m, x, y in rows if m == metric and y is not None]
        if not pts:
            continue
        sc = ax.scatter([x for x, _ in pts], [y for _, y in pts], s=12, label=metric)
        fit = trendline(pts)
        if fit:
            xs = sorted(x for x, _ in pts)
            ax.plot([xs[0], xs[-1]], [fit[0] * xs[0] + fit[1], fit[0] * xs[-1] + fit[1]],
                    color=sc.get_facecolor()[0], linewidth=1)
    ax.set_xlabel("relative % drop in decoding time")
    ax.set_ylabel("relative % drop in metric")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


@dataclass
class ReportFiles:
    table: Path
    scatter: Path
    breakdown: Path
    svg: list[Path]


def report(records: Sequence[Any], baseline_id: str, out_dir: str | Path,
           labels: Mapping[str, str] | None = None, title: str = "", svg: bool = False) -> ReportFiles:
    """Write ``table.md``, ``scatter.csv``, ``scatter_breakdown.csv`` and optionally SVG plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    baseline = _find_baseline(records, baseline_id)
    table = out / "table.md"
    _atomic_write(table, markdown_table(records, baseline_id, labels, title or None))
    main_rows = scatter_rows(baseline, records, FIGURE_METRICS)
    names = {m: n for n, m in BREAKDOWN_SERIES}
    breakdown_rows = scatter_rows(baseline, records, [m for _, m in BREAKDOWN_SERIES], names)
    scatter = out / "scatter.csv"
    breakdown = out / "scatter_breakdown.csv"
    _atomic_write(scatter, scatter_csv(main_rows))
    _atomic_write(breakdown, scatter_csv(breakdown_rows))
    svgs = []
    if svg:
        for name, rows in (("scatter.svg", main_rows), ("scatter_breakdown.svg", breakdown_rows)):
            scatter_svg(rows, out / name, title)
            svgs.append(out / name)
    return ReportFiles(table, scatter, breakdown, svgs)


def order_records(records: Sequence[AveragedRecord], specs: Sequence[OptimizationSpec]) -> list[AveragedRecord]:
    by_id = {r.spec_id: r for r in records}
    return [by_id[s.id] for s in specs if s.id in by_id]
