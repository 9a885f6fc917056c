"""JSON bundles of fitted charts and CSV verdict streams."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import ChartVerdict, ClusteredChart, T2SpeChart
from .errors import DataError
from .monitor import MonitoringPipeline, Verdict

FORMAT_VERSION = 1
METHODS = ("FMRCC", "FRCC", "FCC", "CLUST")

Chart = MonitoringPipeline | T2SpeChart | ClusteredChart


def chart_to_dict(chart: Chart) -> dict:
    return {"format_version": FORMAT_VERSION, **chart.to_dict()}


def chart_from_dict(d: dict) -> Chart:
    method = d.get("method")
    if method == "FMRCC":
        return MonitoringPipeline.from_dict(d)
    if method in ("FCC", "FRCC"):
        return T2SpeChart.from_dict(d)
    if method == "CLUST":
        return ClusteredChart.from_dict(d)
    raise DataError(f"unknown bundle method tag {method!r}")


def save_bundle(chart: Chart, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(chart_to_dict(chart), fh, allow_nan=False)
        fh.write("\n")


def load_bundle(path) -> Chart:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed bundle ({exc})") from exc
    try:
        return chart_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: invalid bundle ({exc})") from exc


FMRCC_COLUMNS = ("index", "W_star", "limit", "alarm", "component")
BASELINE_COLUMNS = ("index", "t2", "t2_limit", "spe", "spe_limit", "alarm", "component")


def verdict_columns(chart: Chart) -> tuple[str, ...]:
    return FMRCC_COLUMNS if isinstance(chart, MonitoringPipeline) else BASELINE_COLUMNS


def verdict_rows(verdicts: Sequence[Verdict | ChartVerdict]) -> list[list]:
    rows = []
    for i, v in enumerate(verdicts):
        if isinstance(v, Verdict):
            rows.append([i, repr(v.W_star), repr(v.limit), int(v.alarm), v.component])
        else:
            rows.append([i, repr(v.t2), repr(v.t2_limit), repr(v.spe), repr(v.spe_limit), int(v.alarm), v.component])
    return rows


def write_verdicts(path, chart: Chart, verdicts: Sequence) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(verdict_columns(chart))
        w.writerows(verdict_rows(verdicts))


def read_verdicts(path) -> dict[str, np.ndarray]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[j]) for r in body]) for j, name in enumerate(header)}
