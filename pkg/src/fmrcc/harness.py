"""Monte Carlo evaluation of the charts on simulated data.

A unit of work is one ``(delta1, delta2, run)`` triple. It generates the
Phase I data once, fits every requested chart, then measures the false
alarm rate on an in-control test set and the detection rate on shifted
first-cluster test sets. All shifted test sets of a unit share their random
numbers and differ only by the added shift, so severity comparisons are not
blurred by sampling noise.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .baselines import clust_build, fcc_build, frcc_build
from .bundles import METHODS
from .errors import DataError
from .mixreg import ALL_COVARIANCE_TYPES, CovarianceType, EmOptions
from .monitor import PipelineOptions, fit_pipeline
from .simgen import DELTA1_VALUES, DELTA2_VALUES, SEVERITIES, SHIFT_TYPES, SimConfig, Simulator

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("method", "delta1", "delta2", "shift", "severity", "metric", "value", "ci_lo", "ci_hi",
                  "n_runs", "n_failed")


def bootstrap_tdr_ci(indicators, level: float = 0.95, B: int = 1000, seed=0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of 0/1 alarm indicators."""
    x = np.asarray(indicators, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("at least one indicator is required")
    if np.all(x == x[0]):
        return float(x[0]), float(x[0])
    res = stats.bootstrap((x,), np.mean, n_resamples=B, confidence_level=level, method="percentile",
                          random_state=np.random.default_rng(seed), vectorized=True)
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


def cell_seed(master: int, delta1: float, delta2: float, run: int) -> int:
    """Seed of one unit of work, a pure function of its key."""
    ss = np.random.SeedSequence([int(master), int(round(delta1 * 1000)), int(round(delta2 * 1000)), int(run)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class ExperimentGrid:
    """Cells, methods and Phase I options of a simulation study."""

    delta1: tuple[float, ...] = DELTA1_VALUES
    delta2: tuple[float, ...] = DELTA2_VALUES
    shifts: tuple[str, ...] = SHIFT_TYPES
    severities: tuple[float, ...] = SEVERITIES
    methods: tuple[str, ...] = METHODS
    alpha: float = 0.05
    fve: float = 0.95
    n_runs: int = 10
    seed: int = 0
    n_train: int = 100
    n_tune: int = 250
    n_test: int = 500
    grid_size: int = 500
    snr: float = 10.0
    k_range: tuple[int, ...] = (1, 2, 3, 4, 5)
    parameterizations: tuple[str, ...] = tuple(p.value for p in ALL_COVARIANCE_TYPES)
    studentized: bool = True
    n_restarts: int = 3
    bootstrap_resamples: int = 1000

    def __post_init__(self):
        for name in ("delta1", "delta2", "shifts", "severities", "methods", "k_range", "parameterizations"):
            value = tuple(getattr(self, name))
            if not value:
                raise DataError(f"{name} must not be empty")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "methods", tuple(m.upper() for m in self.methods))
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise DataError(f"unknown methods: {sorted(unknown)}")
        for s in self.shifts:
            if s not in SHIFT_TYPES:
                raise DataError(f"unknown shift type {s!r}")
        for p in self.parameterizations:
            CovarianceType(p)
        if self.n_runs < 1:
            raise DataError("n_runs must be at least 1")
        if not 0 < self.alpha <= 0.5:
            raise DataError("alpha must lie in (0, 0.5]")

    @classmethod
    def paper_scale(cls, **kw) -> "ExperimentGrid":
        return cls(**{"n_train": 400, "n_tune": 1000, "n_test": 3000, "n_runs": 100, "n_restarts": 5, **kw})

    @classmethod
    def from_dict(cls, d: dict, paper_scale: bool = False) -> "ExperimentGrid":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise DataError(f"unknown grid keys: {sorted(extra)}")
        return cls.paper_scale(**d) if paper_scale else cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def sim_config(self, delta1: float, delta2: float, run: int) -> SimConfig:
        return SimConfig(delta1=delta1, delta2=delta2, n_train=self.n_train, n_tune=self.n_tune,
                         n_test=self.n_test, grid_size=self.grid_size, snr=self.snr,
                         seed=cell_seed(self.seed, delta1, delta2, run))

    def units(self) -> list[tuple[float, float, int]]:
        return [(d1, d2, r) for d1 in self.delta1 for d2 in self.delta2 for r in range(self.n_runs)]

    def em_options(self) -> EmOptions:
        return EmOptions(n_restarts=self.n_restarts)


@dataclass(frozen=True)
class RunReport:
    """Metric of one method in one cell, aggregated over runs.

    ``per_run`` holds NaN for failed runs; the mean and interval use the
    successful runs, the interval resampling their pooled alarm indicators.
    """

    method: str
    delta1: float
    delta2: float
    shift: str
    severity: float
    metric: str
    value: float
    ci_lo: float
    ci_hi: float
    n_runs: int
    per_run: tuple[float, ...]
    n_failed: int = 0
    wall_time: float = field(default=0.0, compare=False)

    def row(self) -> list:
        return [self.method, repr(float(self.delta1)), repr(float(self.delta2)), self.shift,
                repr(float(self.severity)), self.metric, repr(float(self.value)), repr(float(self.ci_lo)),
                repr(float(self.ci_hi)), self.n_runs, self.n_failed]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        d["per_run"] = [None if np.isnan(v) else v for v in self.per_run]
        for k in ("value", "ci_lo", "ci_hi"):
            if np.isnan(d[k]):
                d[k] = None
        return d


@dataclass
class UnitResult:
    key: tuple[float, float, int]
    # (method, shift, severity) -> (alarm count, n)
    counts: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    wall_time: float = 0.0


def _build(method: str, grid: ExperimentGrid, train, tune):
    em = grid.em_options()
    if method == "FMRCC":
        opts = PipelineOptions(alpha=grid.alpha, fve=grid.fve, k_range=grid.k_range,
                               parameterizations=tuple(CovarianceType(p) for p in grid.parameterizations),
                               studentized=grid.studentized, em=em)
        return fit_pipeline(train, tune, opts)
    if method == "FRCC":
        return frcc_build(train, tune, grid.alpha, grid.fve, options=em)
    if method == "FCC":
        return fcc_build(train, tune, grid.alpha, grid.fve)
    return clust_build(train, tune, grid.alpha, grid.fve, grid.k_range,
                       tuple(CovarianceType(p) for p in grid.parameterizations), options=em)


def _fit_summary(chart) -> dict:
    mixture = getattr(chart, "mixture", None) or getattr(chart, "regression", None)
    if mixture is None:
        return {}
    return {"K": mixture.K, "parameterization": mixture.parameterization.value}


def run_unit(grid: ExperimentGrid, delta1: float, delta2: float, run: int) -> UnitResult:
    """Fit every method on one simulated Phase I sample and score its test sets."""
    t0 = time.perf_counter()
    out = UnitResult((delta1, delta2, run))
    sim = Simulator(grid.sim_config(delta1, delta2, run))
    train, tune = sim.train().profiles(), sim.tune().profiles()
    ic = sim.ic_test().profiles()
    positive = [s for s in grid.severities if s > 0]
    oc = {(sh, s): sim.oc_test(sh, s).profiles() for sh in grid.shifts for s in positive}
    for method in grid.methods:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                chart = _build(method, grid, train, tune)
            far = int(chart.alarms(ic).sum())
            for sh in grid.shifts:
                for s in grid.severities:
                    if s > 0:
                        out.counts[(method, sh, s)] = (int(chart.alarms(oc[(sh, s)]).sum()), len(oc[(sh, s)]))
                    else:
                        out.counts[(method, sh, s)] = (far, len(ic))
            out.fits[method] = _fit_summary(chart)
        except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("%s failed at delta1=%g delta2=%g run=%d: %s", method, delta1, delta2, run, exc)
            out.failures[method] = f"{type(exc).__name__}: {exc}"
    out.wall_time = time.perf_counter() - t0
    return out


def _run_unit_args(args):
    return run_unit(*args)


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("FMRCC_THREADS", "1")))
    except ValueError:
        raise DataError("FMRCC_THREADS must be an integer") from None


@dataclass
class Evaluation:
    grid: ExperimentGrid
    reports: list[RunReport]
    units: list[UnitResult]
    wall_time: float

    def report(self, method: str, delta1: float, delta2: float, shift: str, severity: float) -> RunReport:
        for r in self.reports:
            if (r.method, r.delta1, r.delta2, r.shift, r.severity) == (method, delta1, delta2, shift, severity):
                return r
        raise KeyError((method, delta1, delta2, shift, severity))

    def selected_k(self, method: str, delta1: float, delta2: float) -> list[int | None]:
        return [u.fits.get(method, {}).get("K") for u in self.units if u.key[:2] == (delta1, delta2)]


def _aggregate(grid: ExperimentGrid, units: list[UnitResult]) -> list[RunReport]:
    reports = []
    for method in grid.methods:
        for d1 in grid.delta1:
            for d2 in grid.delta2:
                cell = [u for u in units if u.key[:2] == (d1, d2)]
                wall = sum(u.wall_time for u in cell)
                for sh in grid.shifts:
                    for s in grid.severities:
                        per_run, hits, total = [], 0, 0
                        for u in cell:
                            c = u.counts.get((method, sh, s))
                            if c is None:
                                per_run.append(float("nan"))
                            else:
                                per_run.append(c[0] / c[1])
                                hits += c[0]
                                total += c[1]
                        ok = [v for v in per_run if not np.isnan(v)]
                        if ok:
                            value = float(np.mean(ok))
                            lo, hi = _pooled_ci(hits, total, grid, (method, d1, d2, sh, s))
                        else:
                            value = lo = hi = float("nan")
                        reports.append(RunReport(method, d1, d2, sh, s, "FAR" if s == 0 else "TDR", value, lo, hi,
                                                 len(per_run), tuple(per_run), len(per_run) - len(ok), wall))
    return reports


def _pooled_ci(hits: int, total: int, grid: ExperimentGrid, key) -> tuple[float, float]:
    indicators = np.zeros(total)
    indicators[:hits] = 1.0
    # built-in str hashing is salted per process, so the stream comes from the key text
    seed = np.random.SeedSequence([grid.seed] + [ord(c) for c in repr(key)])
    return bootstrap_tdr_ci(indicators, 0.95, grid.bootstrap_resamples, np.random.default_rng(seed))


def evaluate(grid: ExperimentGrid, workers: int | None = None) -> Evaluation:
    """Run every unit of ``grid``; units run in a process pool when ``workers > 1``."""
    t0 = time.perf_counter()
    workers = n_workers() if workers is None else workers
    todo = grid.units()
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(todo))) as pool:
            units = list(pool.map(_run_unit_args, [(grid, *u) for u in todo]))
    else:
        units = [run_unit(grid, *u) for u in todo]
    units.sort(key=lambda u: u.key)
    return Evaluation(grid, _aggregate(grid, units), units, time.perf_counter() - t0)


def report_csv(evaluation: Evaluation) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerows(r.row() for r in evaluation.reports)
    return buf.getvalue()


def report_json(evaluation: Evaluation) -> str:
    doc = {
        "grid": evaluation.grid.to_dict(),
        "reports": [r.to_dict() for r in evaluation.reports],
        "fits": [
            {"delta1": u.key[0], "delta2": u.key[1], "run": u.key[2], "models": u.fits, "failures": u.failures}
            for u in evaluation.units
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def write_reports(evaluation: Evaluation, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "report.csv", out / "report.json"
    csv_path.write_text(report_csv(evaluation), encoding="utf-8")
    json_path.write_text(report_json(evaluation), encoding="utf-8")
    return csv_path, json_path


def with_methods(grid: ExperimentGrid, methods) -> ExperimentGrid:
    return replace(grid, methods=tuple(methods))
