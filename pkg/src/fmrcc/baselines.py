"""Competing control charts built on the same score infrastructure.

FCC monitors the response eigenscores alone, FRCC monitors the residual of
a single functional regression, and CLUST partitions the response scores
with a Gaussian mixture and runs one chart per cluster. Every chart pairs
a Hotelling ``T2`` statistic on retained scores with the squared
prediction error (SPE) outside the retained eigenspace, each at level
``1 - sqrt(1 - alpha)`` so the pair signals at overall rate ``alpha``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .curves import CurveSample, DiscreteCurve
from .errors import DataError
from .fpca import FpcaModel, fit_fpca, project_scores, reconstruct
from .mixreg import ALL_COVARIANCE_TYPES, CovarianceType, EmOptions, MixtureModel, e_step, em_fit, select_model
from .monitor import MIN_TUNING, FeatureMap, ProfileSet, calibrate_limit, fit_features


def split_alpha(alpha: float) -> float:
    """Per-chart level of two charts combined by 'either signals' at overall ``alpha``."""
    return 1.0 - np.sqrt(1.0 - alpha)


def t2_statistic(scores, covariance) -> np.ndarray:
    """``s' S^-1 s``; a 1-D ``covariance`` is read as a diagonal of eigenvalues."""
    s = np.asarray(scores, dtype=float)
    cov = np.asarray(covariance, dtype=float)
    if cov.ndim == 1:
        return np.sum(s**2 / cov, axis=-1)
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, np.atleast_2d(s).T).T
    out = np.sum(z**2, axis=-1)
    return out if s.ndim > 1 else float(out[0])


def spe_statistic(observation, model: FpcaModel) -> np.ndarray:
    """Squared weighted L2 norm of the standardized observation minus its truncated reconstruction."""
    if isinstance(observation, (DiscreteCurve, CurveSample)) or isinstance(observation, (list, tuple)):
        z = model.standardize(observation)
    else:
        z = np.asarray(observation, dtype=float)
    r = z - reconstruct(model, project_scores(model, z))
    return np.sum(model.weights * r**2, axis=-1)


def _limit(values, level: float) -> float:
    return calibrate_limit(values, level, studentized=False).limit


@dataclass(frozen=True)
class ChartVerdict:
    t2: float
    t2_limit: float
    spe: float
    spe_limit: float
    component: int = 0

    @property
    def alarm(self) -> bool:
        return self.t2 > self.t2_limit or self.spe > self.spe_limit


# --------------------------------------------------------------------------
# FCC and FRCC


@dataclass(frozen=True)
class T2SpeChart:
    """``T2``/SPE chart on response scores (FCC) or on regression residual scores (FRCC).

    Attributes
    ----------
    method : {"FCC", "FRCC"}
    features : FeatureMap
        Phase I preprocessing. FCC uses only the response part.
    score_model : FpcaModel
        Eigenbasis of the monitored curves: the standardized response for
        FCC, the functional residual for FRCC.
    regression : MixtureModel or None
        Single-component score regression of FRCC.
    """

    method: str
    features: FeatureMap
    score_model: FpcaModel
    t2_limit: float
    spe_limit: float
    alpha: float
    regression: MixtureModel | None = None

    @property
    def alpha_split(self) -> tuple[float, float]:
        a = split_alpha(self.alpha)
        return a, a

    def monitored_curves(self, data: ProfileSet) -> np.ndarray:
        z = self.features.y_standardized(data)
        if self.regression is None:
            return z
        predicted = self.features.designs(data) @ self.regression.coefs[0]
        return z - reconstruct(self.features.y_model, predicted)

    def statistics(self, data: ProfileSet) -> tuple[np.ndarray, np.ndarray]:
        curves = self.monitored_curves(data)
        scores = project_scores(self.score_model, curves)
        return t2_statistic(scores, self.score_model.eigenvalues), spe_statistic(curves, self.score_model)

    def alarms(self, data: ProfileSet) -> np.ndarray:
        t2, spe = self.statistics(data)
        return (t2 > self.t2_limit) | (spe > self.spe_limit)

    def monitor(self, data: ProfileSet) -> list[ChartVerdict]:
        t2, spe = self.statistics(data)
        return [ChartVerdict(float(a), self.t2_limit, float(b), self.spe_limit) for a, b in zip(t2, spe)]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "features": self.features.to_dict(),
            "score_model": self.score_model.to_dict(),
            "t2_limit": self.t2_limit,
            "spe_limit": self.spe_limit,
            "alpha": self.alpha,
            "alpha_split": list(self.alpha_split),
            "regression": None if self.regression is None else self.regression.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "T2SpeChart":
        reg = None if d.get("regression") is None else MixtureModel.from_dict(d["regression"])
        return cls(d["method"], FeatureMap.from_dict(d["features"]), FpcaModel.from_dict(d["score_model"]),
                   float(d["t2_limit"]), float(d["spe_limit"]), float(d["alpha"]), reg)


def _calibrated(method, features, score_model, tune_curves, alpha, regression=None) -> T2SpeChart:
    level = split_alpha(alpha)
    scores = project_scores(score_model, tune_curves)
    t2 = t2_statistic(scores, score_model.eigenvalues)
    spe = spe_statistic(tune_curves, score_model)
    return T2SpeChart(method, features, score_model, _limit(t2, level), _limit(spe, level), alpha, regression)


def fcc_build(train: ProfileSet, tune: ProfileSet, alpha: float = 0.05, fve: float = 0.95,
              smooth: bool = False) -> T2SpeChart:
    """FPCA chart on the standardized response, covariates ignored."""
    features = fit_features(train, fve, smooth, use_covariates=False)
    return _calibrated("FCC", features, features.y_model, features.y_standardized(tune), alpha)


def frcc_build(train: ProfileSet, tune: ProfileSet, alpha: float = 0.05, fve: float = 0.95,
               smooth: bool = False, options: EmOptions = EmOptions()) -> T2SpeChart:
    """Residual chart of one function-on-function regression fitted on scores."""
    features = fit_features(train, fve, smooth)
    X = features.designs(train)
    reg = em_fit(X, features.y_scores(train), 1, CovarianceType.FULL_COMMON, options)
    z = features.y_standardized(train)
    resid = z - reconstruct(features.y_model, X @ reg.coefs[0])
    grid = features.y_model.grids[0]
    residual_model = fit_fpca(CurveSample(grid, resid), fve)
    chart = T2SpeChart("FRCC", features, residual_model, 0.0, 0.0, alpha, reg)
    return _calibrated("FRCC", features, residual_model, chart.monitored_curves(tune), alpha, reg)


def fcc_monitor(chart: T2SpeChart, y_curve: DiscreteCurve) -> ChartVerdict:
    y = CurveSample(y_curve.grid, y_curve.values[None, :])
    return chart.monitor(ProfileSet((), y))[0]


def frcc_monitor(chart: T2SpeChart, x_curves, y_curve: DiscreteCurve, scalars=None) -> ChartVerdict:
    x = tuple(CurveSample(c.grid, c.values[None, :]) for c in x_curves)
    y = CurveSample(y_curve.grid, y_curve.values[None, :])
    z = None if scalars is None else np.asarray(scalars, dtype=float).reshape(1, -1)
    return chart.monitor(ProfileSet(x, y, z))[0]


# --------------------------------------------------------------------------
# CLUST


@dataclass(frozen=True)
class ClusteredChart:
    """Gaussian mixture on response scores with one ``T2``/SPE chart per cluster.

    ``chart_of[k]`` is the chart index of mixture component ``k``; sparse
    components are merged into their nearest neighbour.
    """

    features: FeatureMap
    mixture: MixtureModel
    chart_of: tuple[int, ...]
    t2_limits: tuple[float, ...]
    spe_limits: tuple[float, ...]
    alpha: float
    method: str = "CLUST"

    @property
    def K(self) -> int:
        return self.mixture.K

    def assign(self, scores: np.ndarray) -> np.ndarray:
        """MAP component of each score vector."""
        tau, _ = e_step(self.mixture, np.ones((scores.shape[0], 1)), scores)
        return np.argmax(tau, axis=1)

    def statistics(self, data: ProfileSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``T2``, SPE and chart index for each observation."""
        z = self.features.y_standardized(data)
        model = self.features.y_model
        scores = project_scores(model, z)
        charts = np.asarray(self.chart_of)[self.assign(scores)]
        t2 = np.empty(scores.shape[0])
        for j in np.unique(charts):
            rows = charts == j
            t2[rows] = t2_statistic(scores[rows] - self.mixture.coefs[j, 0], self.mixture.covariances[j])
        return t2, spe_statistic(z, model), charts

    def alarms(self, data: ProfileSet) -> np.ndarray:
        t2, spe, charts = self.statistics(data)
        return (t2 > np.asarray(self.t2_limits)[charts]) | (spe > np.asarray(self.spe_limits)[charts])

    def monitor(self, data: ProfileSet) -> list[ChartVerdict]:
        t2, spe, charts = self.statistics(data)
        return [ChartVerdict(float(a), self.t2_limits[j], float(b), self.spe_limits[j], int(j))
                for a, b, j in zip(t2, spe, charts)]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "features": self.features.to_dict(),
            "mixture": self.mixture.to_dict(),
            "chart_of": list(self.chart_of),
            "t2_limits": list(self.t2_limits),
            "spe_limits": list(self.spe_limits),
            "alpha": self.alpha,
            "alpha_split": [split_alpha(self.alpha)] * 2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusteredChart":
        return cls(FeatureMap.from_dict(d["features"]), MixtureModel.from_dict(d["mixture"]),
                   tuple(int(v) for v in d["chart_of"]), tuple(map(float, d["t2_limits"])),
                   tuple(map(float, d["spe_limits"])), float(d["alpha"]))


def _merge_sparse(means: np.ndarray, counts: np.ndarray, min_members: int) -> np.ndarray:
    chart_of = np.arange(means.shape[0])
    while True:
        sizes = np.bincount(chart_of, weights=counts, minlength=means.shape[0])
        alive = np.unique(chart_of)
        sparse = [j for j in alive if sizes[j] < min_members]
        if not sparse or alive.size == 1:
            return chart_of
        j = min(sparse, key=lambda c: sizes[c])
        others = [c for c in alive if c != j]
        target = min(others, key=lambda c: float(np.sum((means[c] - means[j]) ** 2)))
        warnings.warn(f"cluster {j} has {int(sizes[j])} tuning members; merged into cluster {target}",
                      RuntimeWarning, stacklevel=3)
        chart_of[chart_of == j] = target


def clust_build(train: ProfileSet, tune: ProfileSet, alpha: float = 0.05, fve: float = 0.95,
                k_range=range(1, 6), parameterizations=ALL_COVARIANCE_TYPES,
                smooth: bool = False, options: EmOptions = EmOptions()) -> ClusteredChart:
    """Model-based clustering of response scores followed by per-cluster charts.

    Clusters with fewer than ``max(M + 1, 20)`` tuning members are merged
    into the cluster with the nearest mean, and inherit its parameters.
    """
    features = fit_features(train, fve, smooth, use_covariates=False)
    Y = features.y_scores(train)
    mixture = select_model(np.ones((Y.shape[0], 1)), Y, k_range, parameterizations, options)
    chart = ClusteredChart(features, mixture, tuple(range(mixture.K)), (0.0,) * mixture.K,
                           (0.0,) * mixture.K, alpha)
    z = features.y_standardized(tune)
    scores = project_scores(features.y_model, z)
    comp = chart.assign(scores)
    counts = np.bincount(comp, minlength=mixture.K).astype(float)
    chart_of = _merge_sparse(mixture.coefs[:, 0, :], counts, max(mixture.M + 1, MIN_TUNING))
    charts = chart_of[comp]
    spe = spe_statistic(z, features.y_model)
    level = split_alpha(alpha)
    t2_limits, spe_limits = {}, {}
    for j in np.unique(chart_of):
        rows = charts == j
        t2 = t2_statistic(scores[rows] - mixture.coefs[j, 0], mixture.covariances[j])
        t2_limits[j] = _limit(t2, level)
        spe_limits[j] = _limit(spe[rows], level)
    # merged components report the limits of the chart that absorbed them
    return ClusteredChart(features, mixture, tuple(int(c) for c in chart_of),
                          tuple(t2_limits[c] for c in chart_of), tuple(spe_limits[c] for c in chart_of), alpha)


def clust_monitor(chart: ClusteredChart, y_curve: DiscreteCurve) -> ChartVerdict:
    y = CurveSample(y_curve.grid, y_curve.values[None, :])
    return chart.monitor(ProfileSet((), y))[0]


__all__ = [
    "ChartVerdict", "ClusteredChart", "T2SpeChart", "clust_build", "clust_monitor", "fcc_build",
    "fcc_monitor", "frcc_build", "frcc_monitor", "spe_statistic", "split_alpha", "t2_statistic",
]
