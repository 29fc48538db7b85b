"""Sample-availability sweep: methods x regimes x runs, scored by SHD."""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cf import cf_learn
from .graph import DEFAULT_THRESHOLD, extract_kpcg, shd
from .ia import IAConfig, ia_learn
from .spectral import hanning_window, naive_inverse, raw_periodogram, smooth_periodogram
from .synth import BandStructure, generate_batch, ground_truth_kpcg
from .tensor_core import (
    CSDTensor,
    FrequencyPartition,
    SpecGraphError,
    ValidationError,
    hermitianize,
    n_frequencies,
)

METHOD_KINDS = ("naive", "cf-nz", "cf-fk", "ia-gs", "ia-bs")
RESULT_COLUMNS = ("method", "regime", "run", "lambda", "shd", "iterations", "converged", "wall_time_s")

# Regularization strength per regime, chosen by median SHD on held-out seed 1 (3 runs)
# with scripts/tune_lambda.py over {0.001, 0.01, 0.05, 0.1, 0.3, 0.5, 0.7, 1.0}.
TUNED_LAMBDA = {
    "ia-bs": {5: 1.0, 10: 1.0, 20: 0.7, 50: 1.0, 100: 0.1, 1000: 0.05},
    "ia-gs": {5: 0.3, 10: 1.0, 20: 1.0, 50: 0.3, 100: 0.3, 1000: 0.05},
}


def regime_schedule(regime: int, kind: str = "ia-bs") -> dict:
    """Initialization and stepsize settings by sample availability (and method, at 100 samples)."""
    if regime >= 1000:
        return {"init": "inverse", "stepsize_rule": "log_sqrt_t", "c1": 0.5, "c2": 0.99}
    if regime >= 100 and kind == "ia-gs":
        return {"init": "identity", "stepsize_rule": "log_t", "c1": 0.99, "c2": 0.99}
    if regime >= 100:
        return {"init": "inverse", "stepsize_rule": "log_t", "c1": 0.9, "c2": 0.99}
    if regime >= 50:
        return {"init": "identity", "stepsize_rule": "log_t", "c1": 0.99, "c2": 0.99}
    return {"init": "identity", "stepsize_rule": "log_t", "c1": 0.5, "c2": 0.99}


@dataclass(frozen=True)
class MethodSpec:
    kind: str
    label: str = ""
    s: int | None = None
    blocks: tuple[int, ...] | None = None
    lam: dict = field(default_factory=dict)
    ia: IAConfig = field(default_factory=IAConfig)

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValidationError(f"unknown method {self.kind!r}; expected one of {METHOD_KINDS}")
        if self.kind == "cf-nz" and self.s is None:
            raise ValidationError("cf-nz needs a single budget s")
        if not self.label:
            object.__setattr__(self, "label", self.kind)

    def ia_config(self, regime: int) -> IAConfig:
        lam = self.lam.get(regime, TUNED_LAMBDA.get(self.kind, {}).get(regime, self.ia.lam))
        return replace(self.ia, lam=lam, **regime_schedule(regime, self.kind))

    def ia_partition(self, m: int) -> FrequencyPartition:
        if self.kind == "ia-gs":
            return FrequencyPartition((0,), m)
        return FrequencyPartition(self.blocks or (0, (m - 1) // 2), m)


def default_methods(s: int = 7, coarse_blocks: tuple[int, ...] = (0, 256), max_iters: int = 2000) -> list[MethodSpec]:
    base = IAConfig(max_iters=max_iters)
    return [
        MethodSpec("naive"),
        MethodSpec("cf-nz", s=s),
        MethodSpec("cf-fk"),
        MethodSpec("ia-gs", ia=base),
        MethodSpec("ia-bs", blocks=coarse_blocks, ia=base),
    ]


@dataclass(frozen=True)
class ExperimentConfig:
    t: int = 1024
    k: int = 8
    half_size: int = 8
    regimes: tuple[int, ...] = (5, 20, 100, 1000)
    runs: int = 10
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    chunk: int = 100

    FULL_REGIMES = (5, 10, 20, 50, 100, 1000)


@dataclass
class ResultRow:
    method: str
    regime: int
    run: int
    lam: float | None
    shd: int | None
    iterations: int
    converged: bool
    wall_time_s: float
    error: str = ""

    def as_record(self) -> dict:
        return {
            "method": self.method,
            "regime": self.regime,
            "run": self.run,
            "lambda": self.lam,
            "shd": self.shd,
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time_s": self.wall_time_s,
        }


def cell_seed(seed: int, regime: int, run: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(regime), int(run)]).generate_state(1)[0])


def estimate_csd(structure: BandStructure, t: int, seed: int, replicates: int, half_size: int, chunk: int = 100) -> CSDTensor:
    """Mean smoothed periodogram over ``replicates`` generated panels (streamed in chunks)."""
    n = structure.n
    acc = np.zeros((n_frequencies(t), n, n), dtype=complex)
    for first in range(0, replicates, chunk):
        y = generate_batch(structure, t, seed, min(chunk, replicates - first), first=first)
        y = y - y.mean(axis=-1, keepdims=True)
        acc += raw_periodogram(y).sum(axis=0)
    raw = CSDTensor(hermitianize(acc / replicates), t)
    return smooth_periodogram(raw, hanning_window(half_size))


def run_method(
    method: MethodSpec,
    smoothed: CSDTensor,
    partition: FrequencyPartition,
    truth_cards: Sequence[int],
    regime: int,
):
    """Returns ``(inverse tensor, lambda, iterations, converged)``."""
    if method.kind == "naive":
        return naive_inverse(smoothed), None, 0, True
    if method.kind in ("cf-nz", "cf-fk"):
        budget = [method.s] * partition.k if method.kind == "cf-nz" else list(truth_cards)
        return cf_learn(naive_inverse(smoothed), partition, budget), None, 0, True
    cfg = method.ia_config(regime)
    res = ia_learn(smoothed, method.ia_partition(smoothed.m), cfg)
    return res.inverse, cfg.lam, res.iterations, res.converged


def run_experiment(
    structure: BandStructure,
    methods: Sequence[MethodSpec],
    config: ExperimentConfig = ExperimentConfig(),
    partition: FrequencyPartition | None = None,
    progress: Callable[[ResultRow], None] | None = None,
) -> list[ResultRow]:
    m = n_frequencies(config.t)
    partition = partition or FrequencyPartition.equal(config.k, m)
    truth = ground_truth_kpcg(structure, partition)
    cards = truth.cardinalities()
    rows = []
    for regime in config.regimes:
        for run in range(config.runs):
            smoothed = estimate_csd(
                structure, config.t, cell_seed(config.seed, regime, run), regime, config.half_size, config.chunk
            )
            for method in methods:
                start = time.perf_counter()
                try:
                    inv, lam, iters, conv = run_method(method, smoothed, partition, cards, regime)
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        est = extract_kpcg(inv, partition, config.threshold)
                    row = ResultRow(method.label, regime, run, lam, shd(est, truth), iters, conv, 0.0)
                except (SpecGraphError, np.linalg.LinAlgError, FloatingPointError) as exc:
                    row = ResultRow(method.label, regime, run, None, None, 0, False, 0.0, error=str(exc))
                row.wall_time_s = time.perf_counter() - start
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows


# --- summaries ------------------------------------------------------------------


def _stats(values: Sequence[float]) -> dict:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return {"n": 0, "median": None, "p2_5": None, "p97_5": None}
    return {
        "n": int(a.size),
        "median": float(np.median(a)),
        "p2_5": float(np.percentile(a, 2.5)),
        "p97_5": float(np.percentile(a, 97.5)),
    }


def summarize(rows: Sequence[ResultRow], reference: str = "ia-bs") -> dict:
    """Per (method, regime) SHD median and 95% percentile interval, plus paired differences ``reference - other``."""
    if not rows:
        raise ValidationError("no results to summarize")
    methods = list(dict.fromkeys(r.method for r in rows))
    regimes = sorted({r.regime for r in rows})
    table = {(r.method, r.regime, r.run): r.shd for r in rows}
    summary = []
    for method in methods:
        for regime in regimes:
            vals = [r.shd for r in rows if r.method == method and r.regime == regime and r.shd is not None]
            failed = sum(1 for r in rows if r.method == method and r.regime == regime and r.shd is None)
            summary.append({"method": method, "regime": regime, "failed": failed, **_stats(vals)})
    diffs = []
    if reference in methods:
        for other in methods:
            if other == reference:
                continue
            for regime in regimes:
                d = []
                for (mth, reg, run), val in table.items():
                    if mth != reference or reg != regime or val is None:
                        continue
                    o = table.get((other, regime, run))
                    if o is not None:
                        d.append(val - o)
                diffs.append({"reference": reference, "other": other, "regime": regime, **_stats(d)})
    return {"summary": summary, "differences": diffs}


def median_shd(rows: Sequence[ResultRow], method: str, regime: int) -> float:
    vals = [r.shd for r in rows if r.method == method and r.regime == regime and r.shd is not None]
    return float(np.median(vals)) if vals else math.nan


# --- I/O --------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def write_results_csv(rows: Sequence[ResultRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            rec = r.as_record()
            w.writerow([_fmt(rec[c]) for c in RESULT_COLUMNS])


def read_results_csv(path: str | Path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            try:
                rows.append(
                    ResultRow(
                        rec["method"],
                        int(rec["regime"]),
                        int(rec["run"]),
                        float(rec["lambda"]) if rec["lambda"] else None,
                        int(rec["shd"]) if rec["shd"] else None,
                        int(rec["iterations"]),
                        rec["converged"] == "true",
                        float(rec["wall_time_s"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ValidationError(f"{path}: malformed results row ({exc})") from exc
    return rows


def write_results_json(rows: Sequence[ResultRow], path: str | Path) -> None:
    recs = []
    for r in rows:
        rec = r.as_record()
        rec["wall_time_s"] = round(rec["wall_time_s"], 6)
        recs.append(rec)
    Path(path).write_text(json.dumps(recs, indent=1))


def read_results_json(path: str | Path) -> list[ResultRow]:
    try:
        recs = json.loads(Path(path).read_text())
        return [
            ResultRow(
                r["method"], r["regime"], r["run"], r["lambda"], r["shd"], r["iterations"], r["converged"], r["wall_time_s"]
            )
            for r in recs
        ]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed results JSON ({exc})") from exc


def write_summary_csv(report: dict, path: str | Path) -> None:
    """Two sections in one file: SHD summary rows, then paired differences."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "method", "other", "regime", "n", "failed", "median", "p2_5", "p97_5"])
        for s in report["summary"]:
            w.writerow(["shd", s["method"], "", s["regime"], s["n"], s["failed"], *(_fmt(s[c]) for c in ("median", "p2_5", "p97_5"))])
        for d in report["differences"]:
            w.writerow(["diff", d["reference"], d["other"], d["regime"], d["n"], "", *(_fmt(d[c]) for c in ("median", "p2_5", "p97_5"))])


def write_summary_json(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True))
