"""BLEU, subgroup accuracies, gap metrics, relative drops and run averaging.

All arithmetic runs on unrounded values; rounding happens only when a report
is rendered.  A subgroup with no items has an undefined accuracy, carried as
``None`` rather than zero.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

from .evaluator import SubgroupTally

ACCURACY_FIELDS = ("pro", "anti", "fofc", "mofc", "momc", "fomc")
DELTA_FIELDS = ("delta", "delta_fc", "delta_mc")
SCATTER_METRICS = ("bleu", "pro", "anti", "fofc", "mofc", "momc", "fomc")


@dataclass(frozen=True)
class BleuReport:
    precisions: tuple[float, ...]
    matches: tuple[int, ...]
    totals: tuple[int, ...]
    brevity_penalty: float
    hypothesis_length: int
    reference_length: int
    score: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "BleuReport":
        return cls(
            precisions=tuple(d["precisions"]), matches=tuple(d["matches"]), totals=tuple(d["totals"]),
            brevity_penalty=d["brevity_penalty"], hypothesis_length=d["hypothesis_length"],
            reference_length=d["reference_length"], score=d["score"],
        )


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
) -> BleuReport:
    """Corpus-level, single-reference, unsmoothed BLEU over pre-tokenized text."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("empty corpus")

    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)

    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) > 0:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    else:
        score = 0.0
    return BleuReport(precisions, tuple(matches), tuple(totals), bp, hyp_len, ref_len, score)


@dataclass(frozen=True)
class CategoryAccuracies:
    pro: float | None
    anti: float | None
    fofc: float | None
    mofc: float | None
    momc: float | None
    fomc: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def _percent(correct: int, denom: int) -> float | None:
    return 100.0 * correct / denom if denom else None


def accuracy_table(tallies: SubgroupTally, exclude_inconclusive: bool = False) -> CategoryAccuracies:
    """Percent correct per subgroup and per pro/anti pool.

    By default the denominator counts every item, inconclusive ones included;
    ``exclude_inconclusive`` gives the correct/(correct+incorrect) variant.
    """
    def rate(*cats: str) -> float | None:
        c = tallies.pool(cats)
        denom = c.correct + c.incorrect if exclude_inconclusive else c.total
        return _percent(c.correct, denom)

    return CategoryAccuracies(
        pro=rate("MOMC", "FOFC"),
        anti=rate("MOFC", "FOMC"),
        fofc=rate("FOFC"),
        mofc=rate("MOFC"),
        momc=rate("MOMC"),
        fomc=rate("FOMC"),
    )


@dataclass(frozen=True)
class DeltaReport:
    delta: float | None
    delta_fc: float | None
    delta_mc: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def _diff(a: float | None, b: float | None) -> float | None:
    return None if a is None or b is None else a - b


def deltas(acc: CategoryAccuracies | Mapping[str, float | None], strict: bool = True) -> DeltaReport:
    """pro - anti, fofc - mofc, momc - fomc.

    With ``strict`` an undefined accuracy raises; otherwise the affected gap is None.
    """
    get = acc.get if isinstance(acc, Mapping) else (lambda k: getattr(acc, k))
    if strict:
        missing = [k for k in ACCURACY_FIELDS if get(k) is None]
        if missing:
            raise ValueError(f"undefined subgroup accuracy: {', '.join(missing)}")
    return DeltaReport(
        delta=_diff(get("pro"), get("anti")),
        delta_fc=_diff(get("fofc"), get("mofc")),
        delta_mc=_diff(get("momc"), get("fomc")),
    )


def relative_drop(baseline: float, value: float) -> float:
    """100 * (baseline - value) / baseline; negative means the value improved."""
    if not baseline > 0:
        raise ValueError(f"relative drop needs a positive baseline, got {baseline!r}")
    return 100.0 * (baseline - value) / baseline


@dataclass
class RunRecord:
    run_id: str
    spec_id: str
    model_config: dict
    seed: int
    decode_time_seconds: float
    bleu: BleuReport
    tallies: SubgroupTally
    accuracies: CategoryAccuracies = field(init=False)
    deltas: DeltaReport = field(init=False)
    total_time_seconds: float | None = None
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.accuracies = accuracy_table(self.tallies)
        self.deltas = deltas(self.accuracies, strict=False)

    def values(self) -> dict[str, float | None]:
        """Flat numeric view used by averaging, reports and scatter plots."""
        out: dict[str, float | None] = {
            "time": self.decode_time_seconds,
            "total_time": self.total_time_seconds,
            "bleu": self.bleu.score,
            "brevity_penalty": self.bleu.brevity_penalty,
        }
        for i, p in enumerate(self.bleu.precisions, 1):
            out[f"p{i}"] = p
        out.update(self.accuracies.to_dict())
        out.update(self.deltas.to_dict())
        return out

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "spec_id": self.spec_id,
            "model_config": self.model_config,
            "seed": self.seed,
            "status": self.status,
            "decode_time_seconds": self.decode_time_seconds,
            "total_time_seconds": self.total_time_seconds,
            "bleu": self.bleu.to_dict(),
            "tallies": self.tallies.to_dict(),
            "accuracies": self.accuracies.to_dict(),
            "deltas": self.deltas.to_dict(),
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunRecord":
        rec = cls(
            run_id=d["run_id"], spec_id=d["spec_id"], model_config=dict(d["model_config"]),
            seed=d["seed"], decode_time_seconds=d["decode_time_seconds"],
            bleu=BleuReport.from_dict(d["bleu"]), tallies=SubgroupTally.from_dict(d["tallies"]),
            total_time_seconds=d.get("total_time_seconds"), status=d.get("status", "ok"),
            extra=dict(d.get("extra", {})),
        )
        return rec


@dataclass
class AveragedRecord:
    """Mean and sample standard deviation of every numeric field over seeds."""

    spec_id: str
    model_config: dict
    seeds: list[int]
    mean: dict[str, float | None]
    std: dict[str, float | None]
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    def values(self) -> dict[str, float | None]:
        return dict(self.mean)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AveragedRecord":
        return cls(**{k: d[k] for k in ("spec_id", "model_config", "seeds", "mean", "std")},
                   status=d.get("status", "ok"), extra=dict(d.get("extra", {})))


def average_runs(runs: Sequence[RunRecord]) -> AveragedRecord:
    if not runs:
        raise ValueError("no runs to average")
    spec_ids = {r.spec_id for r in runs}
    if len(spec_ids) > 1:
        raise ValueError(f"runs from different specs: {sorted(spec_ids)}")
    ok = [r for r in runs if r.status == "ok"]
    keys = list(runs[0].values())
    mean: dict[str, float | None] = {}
    std: dict[str, float | None] = {}
    for k in keys:
        xs = [v for r in ok if (v := r.values()[k]) is not None]
        mean[k] = statistics.fmean(xs) if xs else None
        std[k] = (statistics.stdev(xs) if len(xs) > 1 else 0.0) if xs else None
    # pooled tallies so pro/anti can be re-derived from counts
    pooled = SubgroupTally()
    for r in ok:
        for c, n in r.tallies.counts.items():
            pooled.counts[c] = pooled.counts[c] + n
    status = "ok" if len(ok) == len(runs) else ("failed" if not ok else "partial")
    return AveragedRecord(
        spec_id=runs[0].spec_id,
        model_config=runs[0].model_config,
        seeds=[r.seed for r in runs],
        mean=mean,
        std=std,
        status=status,
        extra={"pooled_tallies": pooled.to_dict(), "n_ok": len(ok)},
    )


def _values(record: Any) -> Mapping[str, float | None]:
    return record if isinstance(record, Mapping) else record.values()


@dataclass(frozen=True)
class ScatterPoint:
    run_id: str
    metric: str
    rel_time_drop: float
    rel_metric_drop: float | None


def scatter_data(
    baseline: Any,
    runs: Sequence[Any],
    metrics: Sequence[str] = SCATTER_METRICS,
) -> list[ScatterPoint]:
    """One point per (run, metric): x = relative time drop, y = relative metric drop.

    ``y`` is None when the baseline value of that metric is undefined or zero.
    Runs without a decode time (failed runs) yield no points.
    """
    if baseline is None:
        raise ValueError("scatter data needs a baseline record")
    base = _values(baseline)
    if not base.get("time"):
        return []
    points = []
    for run in runs:
        vals = _values(run)
        if vals.get("time") is None:
            continue
        x = relative_drop(base["time"], vals["time"])
        run_id = getattr(run, "run_id", None) or getattr(run, "spec_id", "")
        for m in metrics:
            b, v = base.get(m), vals.get(m)
            y = relative_drop(b, v) if b and b > 0 and v is not None else None
            points.append(ScatterPoint(run_id, m, x, y))
    return points
