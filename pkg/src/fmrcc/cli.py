"""Command-line entry point: ``fmrcc simulate|fit|monitor|evaluate``.

Exit codes: 0 success, 2 usage or malformed configuration, 3 invalid data,
4 numerical or fitting failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .baselines import clust_build, fcc_build, frcc_build
from .bundles import load_bundle, save_bundle, write_verdicts
from .curves import read_curves_csv, write_curves_csv
from .errors import DataError, FitError, NumericalError
from .harness import ExperimentGrid, evaluate, write_reports
from .mixreg import ALL_COVARIANCE_TYPES, CovarianceType, EmOptions
from .monitor import PipelineOptions, ProfileSet, fit_pipeline
from .simgen import SimConfig, Simulator

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("fmrcc")


class UsageError(Exception):
    pass


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON ({exc})") from exc
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: the configuration must be a JSON object")
    return doc


def parse_k_range(text: str) -> tuple[int, ...]:
    """``"1-5"`` or ``"1,2,4"``."""
    try:
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-", 1))
            ks = tuple(range(lo, hi + 1))
        else:
            ks = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid K range {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError(f"invalid K range {text!r}")
    return ks


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        config = SimConfig.paper_scale(**cfg) if args.paper_scale else SimConfig.from_dict(cfg)
    except (TypeError, DataError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = Simulator(config)
    phases = {"train": sim.train(), "tune": sim.tune(), "test": sim.oc_test()}
    written = []
    for phase, ds in phases.items():
        for name, sample in (("X", ds.x), ("Y", ds.y)):
            path = out / f"{phase}_{name}.csv"
            write_curves_csv(path, sample)
            written.append(path)
    labels = out / "labels.csv"
    with open(labels, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "cluster", "phase", "shift_type", "severity"])
        for ds in phases.values():
            w.writerows(ds.label_rows())
    written.append(labels)
    for p in written:
        print(p)
    return 0


def _profiles(x_paths, y_path, scalar_path=None) -> ProfileSet:
    x = tuple(read_curves_csv(p) for p in (x_paths or ()))
    y = read_curves_csv(y_path)
    z = None
    if scalar_path is not None:
        try:
            z = np.loadtxt(scalar_path, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise DataError(f"{scalar_path}: {exc}") from exc
    return ProfileSet(x, y, z)


def cmd_fit(args) -> int:
    cfg = _load_json(args.config)
    alpha = args.alpha if args.alpha is not None else cfg.get("alpha", 0.05)
    fve = args.fve if args.fve is not None else cfg.get("fve", 0.95)
    k_range = args.k_range or tuple(cfg.get("k_range", (1, 2, 3, 4, 5)))
    ptypes = tuple(CovarianceType(p) for p in (args.parameterizations or cfg.get(
        "parameterizations", [p.value for p in ALL_COVARIANCE_TYPES])))
    studentized = args.studentized if args.studentized is not None else bool(cfg.get("studentized", True))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    em = EmOptions(n_restarts=int(cfg.get("n_restarts", 5)), seed=seed)
    train = _profiles(args.train_x, args.train_y, args.train_scalars)
    tune = _profiles(args.tune_x, args.tune_y, args.tune_scalars)
    method = args.method.upper()
    try:
        chart, summary = _fit_method(method, train, tune, alpha, fve, k_range, ptypes, studentized, args.smooth, em)
    except (FitError, NumericalError) as exc:
        diag = Path(str(args.out) + ".diagnostics.json")
        diag.write_text(json.dumps({
            "method": method, "error": f"{type(exc).__name__}: {exc}", "alpha": alpha, "fve": fve,
            "k_range": list(k_range), "parameterizations": [p.value for p in ptypes],
            "n_train": len(train), "n_tune": len(tune),
        }, indent=1) + "\n", encoding="utf-8")
        print(f"fmrcc: diagnostics written to {diag}", file=sys.stderr)
        raise
    save_bundle(chart, args.out)
    print(f"{method} {summary} -> {args.out}")
    return 0


def _fit_method(method, train, tune, alpha, fve, k_range, ptypes, studentized, smooth, em):
    if method == "FMRCC":
        chart = fit_pipeline(train, tune, PipelineOptions(alpha, fve, k_range, ptypes, studentized, smooth, em))
        summary = f"K={chart.mixture.K} {chart.mixture.parameterization.value} limit={chart.chart.limit:.6g}"
    elif method == "FRCC":
        chart = frcc_build(train, tune, alpha, fve, smooth, em)
        summary = f"t2_limit={chart.t2_limit:.6g} spe_limit={chart.spe_limit:.6g}"
    elif method == "FCC":
        chart = fcc_build(train, tune, alpha, fve, smooth)
        summary = f"t2_limit={chart.t2_limit:.6g} spe_limit={chart.spe_limit:.6g}"
    else:
        chart = clust_build(train, tune, alpha, fve, k_range, ptypes, smooth, em)
        summary = f"K={chart.K} charts={len(set(chart.chart_of))}"
    return chart, summary


def cmd_monitor(args) -> int:
    chart = load_bundle(args.bundle)
    data = _profiles(args.x, args.y, args.scalars)
    verdicts = chart.monitor(data) if len(data) else []
    write_verdicts(args.out, chart, verdicts)
    frac = float(np.mean([v.alarm for v in verdicts])) if verdicts else 0.0
    print(f"observations={len(verdicts)} alarms={sum(v.alarm for v in verdicts)} alarm_fraction={frac:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        grid = ExperimentGrid.from_dict(cfg, paper_scale=args.paper_scale)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    t0 = time.perf_counter()
    ev = evaluate(grid)
    csv_path, json_path = write_reports(ev, args.out)
    failed = sum(len(u.failures) for u in ev.units)
    print(f"{csv_path}\n{json_path}")
    print(f"units={len(ev.units)} failed_fits={failed} wall_time={time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fmrcc", description="Functional mixture regression control charts.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate train/tune/test curve files")
    s.add_argument("--config", help="SimConfig JSON")
    s.add_argument("--out", default=".", help="output directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--paper-scale", action="store_true")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit and calibrate a chart")
    f.add_argument("--train-x", action="append", default=[], help="covariate CSV (repeat per covariate)")
    f.add_argument("--train-y", required=True)
    f.add_argument("--train-scalars")
    f.add_argument("--tune-x", action="append", default=[])
    f.add_argument("--tune-y", required=True)
    f.add_argument("--tune-scalars")
    f.add_argument("--config", help="JSON with fit options")
    f.add_argument("--method", default="fmrcc", choices=["fmrcc", "frcc", "fcc", "clust"])
    f.add_argument("--alpha", type=float)
    f.add_argument("--fve", type=float)
    f.add_argument("--k-range", type=parse_k_range)
    f.add_argument("--parameterizations", nargs="+", choices=[p.value for p in ALL_COVARIANCE_TYPES])
    f.add_argument("--studentized", type=_on_off)
    f.add_argument("--smooth", action="store_true", help="penalized B-spline smoothing before FPCA")
    f.add_argument("--seed", type=int)
    f.add_argument("--out", required=True, help="bundle JSON path")
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("monitor", help="monitor observations against a bundle")
    m.add_argument("--bundle", required=True)
    m.add_argument("--x", action="append", default=[])
    m.add_argument("--y", required=True)
    m.add_argument("--scalars")
    m.add_argument("--out", required=True, help="verdict CSV path")
    m.set_defaults(func=cmd_monitor)

    e = sub.add_parser("evaluate", help="run a simulation grid")
    e.add_argument("--config", help="ExperimentGrid JSON")
    e.add_argument("--out", default=".", help="output directory")
    e.add_argument("--seed", type=int)
    e.add_argument("--paper-scale", action="store_true")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fmrcc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FitError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"fmrcc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"fmrcc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
