"""Likelihood-ratio monitoring of functional mixture regressions.

The monitoring statistic of a new profile is the negative log mixture
density of its response scores given its design vector, evaluated at the
Phase I estimates. The studentized variant inflates each component's
residual covariance by the estimation uncertainty of its coefficients at
the new design point. Control limits are empirical quantiles of the
statistic on a tuning set that played no part in estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .curves import CurveSample, Smoother
from .errors import DataError, NumericalError
from .fpca import FpcaModel, ScalarScaling, design_matrix, fit_functional
from .mixreg import (
    ALL_COVARIANCE_TYPES,
    RIDGE,
    CovarianceType,
    EmOptions,
    MixtureModel,
    component_log_densities,
    e_step,
    select_model,
)

MIN_TUNING = 20


@dataclass(frozen=True)
class CoefficientCovariance:
    """Sandwich covariance of the weighted least-squares coefficients.

    The covariance of coefficient columns ``r`` and ``h`` of component ``k``
    is ``covariances[k, r, h] * sandwich[k]``; :meth:`block` materializes it.
    """

    sandwich: np.ndarray  # (K, D, D)
    covariances: np.ndarray  # (K, M, M)

    def block(self, k: int, r: int, h: int) -> np.ndarray:
        return self.covariances[k, r, h] * self.sandwich[k]

    def to_dict(self) -> dict:
        return {"sandwich": self.sandwich.tolist(), "covariances": self.covariances.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientCovariance":
        return cls(np.asarray(d["sandwich"], dtype=float), np.asarray(d["covariances"], dtype=float))


def coefficient_covariance(mixture: MixtureModel, designs, posteriors) -> CoefficientCovariance:
    """``[X' L X]^-1 X' L L X [X' L X]^-1`` per component, with ``L = diag(tau_k)``."""
    X = np.asarray(designs, dtype=float)
    tau = np.asarray(posteriors, dtype=float)
    D = X.shape[1]
    out = np.empty((mixture.K, D, D))
    for k in range(mixture.K):
        w = tau[:, k]
        bread = (X * w[:, None]).T @ X
        vals = np.linalg.eigvalsh(bread)
        if vals[0] <= 1e-12 * max(vals[-1], np.finfo(float).tiny):
            bread = bread + (RIDGE * np.trace(bread) / D + np.finfo(float).tiny) * np.eye(D)
        meat = (X * (w * w)[:, None]).T @ X
        inv = np.linalg.inv(bread)
        S = inv @ meat @ inv
        out[k] = 0.5 * (S + S.T)
    return CoefficientCovariance(out, mixture.covariances.copy())


def prediction_error_covariance(coeff_cov: CoefficientCovariance, Sigma_k: np.ndarray, design, k: int,
                                floor: float = 0.0) -> np.ndarray:
    """``sigma_rh + x' Cov(B_r, B_h) x`` for every response pair ``(r, h)``."""
    x = np.asarray(design, dtype=float)
    M = Sigma_k.shape[0]
    out = np.empty((M, M))
    for r in range(M):
        for h in range(M):
            out[r, h] = Sigma_k[r, h] + x @ coeff_cov.block(k, r, h) @ x
    out = 0.5 * (out + out.T)
    vals, vecs = np.linalg.eigh(out)
    if vals[0] < floor:
        out = (vecs * np.maximum(vals, floor)) @ vecs.T
    return out


def _inflation(coeff_cov: CoefficientCovariance, designs: np.ndarray) -> np.ndarray:
    # Sigma*_k = Sigma_k (1 + x' S_k x) because each block is sigma_rhk * S_k
    return 1.0 + np.einsum("nd,kde,ne->nk", designs, coeff_cov.sandwich, designs)


def monitoring_statistics(mixture: MixtureModel, designs, y_scores,
                          coeff_cov: CoefficientCovariance | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Statistics ``W`` and component posteriors for a batch of observations."""
    X = np.atleast_2d(np.asarray(designs, dtype=float))
    Y = np.atleast_2d(np.asarray(y_scores, dtype=float))
    if X.shape[1] != mixture.D or Y.shape[1] != mixture.M or X.shape[0] != Y.shape[0]:
        raise DataError("design or score dimensions do not match the mixture")
    inflation = None if coeff_cov is None else _inflation(coeff_cov, X)
    logp = component_log_densities(mixture, X, Y, inflation)
    lse = logsumexp(logp, axis=1)
    if not np.all(np.isfinite(lse)):
        raise NumericalError("non-finite monitoring statistic")
    return -lse, np.exp(logp - lse[:, None])


def monitoring_statistic(mixture: MixtureModel, design, y_scores) -> float:
    """``W = -log sum_k pi_k phi(y; B_k' x, Sigma_k)`` for one observation."""
    return float(monitoring_statistics(mixture, design, y_scores)[0][0])


def studentized_statistic(mixture: MixtureModel, coeff_cov: CoefficientCovariance, design, y_scores) -> float:
    """``W`` with each ``Sigma_k`` replaced by its prediction-error covariance at ``design``."""
    return float(monitoring_statistics(mixture, design, y_scores, coeff_cov)[0][0])


@dataclass(frozen=True)
class ControlChart:
    alpha: float
    limit: float
    tuning_stats: np.ndarray
    studentized: bool = True

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "limit": self.limit, "tuning_stats": self.tuning_stats.tolist(),
                "studentized": self.studentized}

    @classmethod
    def from_dict(cls, d: dict) -> "ControlChart":
        return cls(float(d["alpha"]), float(d["limit"]), np.asarray(d["tuning_stats"], dtype=float),
                   bool(d.get("studentized", True)))


def quantile_rank(n: int, alpha: float) -> int:
    """1-based rank ``ceil((1 - alpha) n)``, robust to binary rounding of the product."""
    return max(1, min(n, math.ceil(round((1.0 - alpha) * n, 9))))


def calibrate_limit(tuning_values, alpha: float = 0.05, studentized: bool = True) -> ControlChart:
    """Upper control limit as the ``ceil((1-alpha) n)``-th order statistic of the tuning values."""
    values = np.sort(np.asarray(tuning_values, dtype=float).ravel())
    if values.size < MIN_TUNING:
        raise DataError(f"at least {MIN_TUNING} tuning values are required, got {values.size}")
    if not 0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 0.5]")
    return ControlChart(float(alpha), float(values[quantile_rank(values.size, alpha) - 1]), values, studentized)


# --------------------------------------------------------------------------
# Pipeline


@dataclass(frozen=True)
class ProfileSet:
    """Functional covariates, a functional response and optional scalar covariates.

    ``x`` holds one :class:`CurveSample` per functional covariate and may be
    empty; ``scalars`` is an ``(n, q)`` array or ``None``.
    """

    x: tuple[CurveSample, ...]
    y: CurveSample
    scalars: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        n = len(self.y)
        if any(len(v) != n for v in self.x):
            raise DataError("covariates and response hold different numbers of observations")
        if self.scalars is not None:
            z = np.asarray(self.scalars, dtype=float).reshape(n, -1)
            object.__setattr__(self, "scalars", z)

    def __len__(self):
        return len(self.y)

    def subset(self, index) -> "ProfileSet":
        z = None if self.scalars is None else self.scalars[index]
        return ProfileSet(tuple(v[index] for v in self.x), self.y[index], z)


@dataclass(frozen=True)
class PipelineOptions:
    alpha: float = 0.05
    fve: float = 0.95
    k_range: tuple[int, ...] = (1, 2, 3, 4, 5)
    parameterizations: tuple[CovarianceType, ...] = ALL_COVARIANCE_TYPES
    studentized: bool = True
    smooth: bool = False
    em: EmOptions = field(default_factory=EmOptions)


@dataclass(frozen=True)
class Verdict:
    W_star: float
    limit: float
    alarm: bool
    component_posteriors: np.ndarray

    @property
    def component(self) -> int:
        return int(np.argmax(self.component_posteriors))


@dataclass(frozen=True)
class FeatureMap:
    """Phase I preprocessing shared by every score-based chart.

    Optional smoothing, then pointwise standardization and projection on
    the X and Y eigenbases, then the design vector.
    """

    x_model: FpcaModel | None
    y_model: FpcaModel
    scalar_scaling: ScalarScaling | None = None
    x_smoothers: tuple[Smoother, ...] = ()
    y_smoother: Smoother | None = None

    @property
    def L(self) -> int:
        return 0 if self.x_model is None else self.x_model.retained

    @property
    def M(self) -> int:
        return self.y_model.retained

    def smoothed(self, data: ProfileSet) -> ProfileSet:
        x = tuple(s.apply(v) for s, v in zip(self.x_smoothers, data.x)) if self.x_smoothers else data.x
        y = self.y_smoother.apply(data.y) if self.y_smoother is not None else data.y
        return ProfileSet(x, y, data.scalars)

    def check(self, data: ProfileSet):
        n_x = 0 if self.x_model is None else len(self.x_model.grids)
        if len(data.x) != n_x:
            raise DataError(f"expected {n_x} functional covariates, got {len(data.x)}")
        q = 0 if self.scalar_scaling is None else self.scalar_scaling.mean.size
        got = 0 if data.scalars is None else data.scalars.shape[1]
        if got != q:
            raise DataError(f"expected {q} scalar covariates, got {got}")

    def designs(self, data: ProfileSet) -> np.ndarray:
        self.check(data)
        data = self.smoothed(data)
        xs = None if self.x_model is None else self.x_model.scores(list(data.x))
        zs = None if self.scalar_scaling is None else self.scalar_scaling.apply(data.scalars)
        return design_matrix(xs, zs, n=len(data))

    def y_standardized(self, data: ProfileSet) -> np.ndarray:
        return self.y_model.standardize(self.smoothed(data).y)

    def y_scores(self, data: ProfileSet) -> np.ndarray:
        return self.y_model.scores(self.smoothed(data).y)

    def to_dict(self) -> dict:
        return {
            "x_model": None if self.x_model is None else self.x_model.to_dict(),
            "y_model": self.y_model.to_dict(),
            "scalar_scaling": None if self.scalar_scaling is None else self.scalar_scaling.to_dict(),
            "x_smoothers": [s.to_dict() for s in self.x_smoothers],
            "y_smoother": None if self.y_smoother is None else self.y_smoother.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        return cls(
            None if d["x_model"] is None else FpcaModel.from_dict(d["x_model"]),
            FpcaModel.from_dict(d["y_model"]),
            None if d["scalar_scaling"] is None else ScalarScaling.from_dict(d["scalar_scaling"]),
            tuple(Smoother.from_dict(s) for s in d.get("x_smoothers", [])),
            None if d.get("y_smoother") is None else Smoother.from_dict(d["y_smoother"]),
        )


def fit_features(train: ProfileSet, fve: float = 0.95, smooth: bool = False,
                 use_covariates: bool = True) -> FeatureMap:
    """Estimate smoothing, scaling and eigenbases on the training set.

    With ``use_covariates`` false only the response is modelled, as the
    charts that ignore covariates require.
    """
    if not use_covariates:
        train = ProfileSet((), train.y)
    from .curves import fit_smoother

    x_smoothers, y_smoother = (), None
    if smooth:
        x_smoothers = tuple(fit_smoother(v) for v in train.x)
        y_smoother = fit_smoother(train.y)
        train = ProfileSet(tuple(s.apply(v) for s, v in zip(x_smoothers, train.x)), y_smoother.apply(train.y),
                           train.scalars)
    x_model = fit_functional(list(train.x), fve)[0] if train.x else None
    y_model = fit_functional(train.y, fve)[0]
    z_scaling = None if train.scalars is None or train.scalars.shape[1] == 0 else ScalarScaling.fit(train.scalars)
    return FeatureMap(x_model, y_model, z_scaling, x_smoothers, y_smoother)


@dataclass(frozen=True)
class MonitoringPipeline:
    """A fitted and calibrated functional mixture regression control chart."""

    features: FeatureMap
    mixture: MixtureModel
    chart: ControlChart
    coeff_cov: CoefficientCovariance | None = None
    n_train: int = 0
    method: str = "FMRCC"

    def __post_init__(self):
        if self.mixture.D != 1 + self.features.L + (
                0 if self.features.scalar_scaling is None else self.features.scalar_scaling.mean.size):
            raise DataError("design dimension does not match the mixture")
        if self.mixture.M != self.features.M:
            raise DataError("response score dimension does not match the mixture")
        if self.chart.studentized and self.coeff_cov is None:
            raise DataError("a studentized chart needs coefficient covariances")

    @property
    def studentized(self) -> bool:
        return self.chart.studentized

    def statistics(self, data: ProfileSet) -> tuple[np.ndarray, np.ndarray]:
        """``W`` and posteriors for each observation of ``data``."""
        X = self.features.designs(data)
        Y = self.features.y_scores(data)
        return monitoring_statistics(self.mixture, X, Y, self.coeff_cov if self.studentized else None)

    def monitor(self, data: ProfileSet) -> list[Verdict]:
        W, post = self.statistics(data)
        lim = self.chart.limit
        return [Verdict(float(w), lim, bool(w > lim), p) for w, p in zip(W, post)]

    def alarms(self, data: ProfileSet) -> np.ndarray:
        return self.statistics(data)[0] > self.chart.limit

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "features": self.features.to_dict(),
            "mixture": self.mixture.to_dict(self.n_train or None),
            "coeff_cov": None if self.coeff_cov is None else self.coeff_cov.to_dict(),
            "chart": self.chart.to_dict(),
            "n_train": self.n_train,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MonitoringPipeline":
        cc = None if d.get("coeff_cov") is None else CoefficientCovariance.from_dict(d["coeff_cov"])
        return cls(FeatureMap.from_dict(d["features"]), MixtureModel.from_dict(d["mixture"]),
                   ControlChart.from_dict(d["chart"]), cc, int(d.get("n_train", 0)), d.get("method", "FMRCC"))


def fit_pipeline(train: ProfileSet, tune: ProfileSet, options: PipelineOptions = PipelineOptions()) -> MonitoringPipeline:
    """Phase I: features and mixture on ``train``, control limit on ``tune``."""
    features = fit_features(train, options.fve, options.smooth)
    X = features.designs(train)
    Y = features.y_scores(train)
    mixture = select_model(X, Y, options.k_range, options.parameterizations, options.em)
    tau, _ = e_step(mixture, X, Y)
    coeff_cov = coefficient_covariance(mixture, X, tau) if options.studentized else None
    W_tune, _ = monitoring_statistics(mixture, features.designs(tune), features.y_scores(tune), coeff_cov)
    chart = calibrate_limit(W_tune, options.alpha, options.studentized)
    return MonitoringPipeline(features, mixture, chart, coeff_cov, len(train))


def phase2_monitor(pipeline: MonitoringPipeline, x_curves: Sequence, y_curve, scalars=None) -> Verdict:
    """Verdict for one raw Phase II observation.

    ``x_curves`` holds one :class:`~fmrcc.curves.DiscreteCurve` per functional
    covariate; ``y_curve`` is the response curve.
    """
    x = tuple(CurveSample(c.grid, c.values[None, :]) for c in x_curves)
    y = CurveSample(y_curve.grid, y_curve.values[None, :])
    z = None if scalars is None or np.size(scalars) == 0 else np.asarray(scalars, dtype=float).reshape(1, -1)
    return pipeline.monitor(ProfileSet(x, y, z))[0]

