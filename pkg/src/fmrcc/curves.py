"""Functional observations on a common grid.

Curves are stored as samples on a fixed grid and every integral is a
trapezoidal quadrature on that grid. Raw discrete data can optionally be
smoothed with cubic B-splines under a second-derivative roughness penalty,
and samples are standardized pointwise before any eigen-analysis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import BSpline

from .errors import DataError, RankDeficientError

SCALE_FLOOR = 1e-8
DEFAULT_PENALTIES = np.logspace(-8, 4, 20)
_GAUSS_POINTS = 7


class Grid:
    """Strictly increasing abscissae of a compact domain."""

    __slots__ = ("points", "_weights")

    def __init__(self, points):
        pts = np.array(points, dtype=float).ravel()
        if pts.size < 4:
            raise DataError("a grid needs at least 4 points")
        if not np.all(np.isfinite(pts)):
            raise DataError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise DataError("grid points must be strictly increasing")
        pts.setflags(write=False)
        self.points = pts
        self._weights = None

    @classmethod
    def uniform(cls, n: int = 500, a: float = 0.0, b: float = 1.0) -> "Grid":
        return cls(np.linspace(a, b, n))

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.points.shape == other.points.shape and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.points.size, self.points.tobytes()))

    def __repr__(self):
        return f"Grid(n={len(self)}, domain=[{self.points[0]:g}, {self.points[-1]:g}])"

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights."""
        if self._weights is None:
            self._weights = trapezoid_weights(self.points)
        return self._weights


def trapezoid_weights(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    h = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += h / 2
    w[1:] += h / 2
    w.setflags(write=False)
    return w


def _check_grid(a: Grid, b: Grid, what: str = "curves"):
    if a != b:
        raise DataError(f"{what} are observed on different grids")


@dataclass(frozen=True)
class DiscreteCurve:
    """One profile sampled on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != len(self.grid):
            raise DataError(f"curve has {values.size} values for a grid of {len(self.grid)} points")
        if not np.all(np.isfinite(values)):
            raise DataError("curve values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class CurveSample:
    """Several profiles of one functional variable on a shared grid, one per row."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, len(self.grid)) if values.size else values.reshape(0, len(self.grid))
        if values.ndim != 2 or values.shape[1] != len(self.grid):
            raise DataError(f"sample of shape {values.shape} does not match a grid of {len(self.grid)} points")
        if not np.all(np.isfinite(values)):
            raise DataError("sample values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> "CurveSample | DiscreteCurve":
        if isinstance(i, (int, np.integer)):
            return DiscreteCurve(self.grid, self.values[i])
        return CurveSample(self.grid, self.values[i])

    @classmethod
    def from_curves(cls, curves: Sequence[DiscreteCurve]) -> "CurveSample":
        if not curves:
            raise DataError("cannot build a sample from zero curves")
        grid = curves[0].grid
        for c in curves[1:]:
            _check_grid(grid, c.grid)
        return cls(grid, np.vstack([c.values for c in curves]))


# --------------------------------------------------------------------------
# B-spline bases and penalized smoothing


@dataclass(frozen=True)
class BasisSpec:
    """B-spline basis with clamped knots at the domain endpoints."""

    n_basis: int
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        if self.degree < 0 or self.n_basis < 1:
            raise DataError("degree must be >= 0 and n_basis >= 1")
        if knots.size != self.n_basis + self.degree + 1:
            raise DataError("knot count must equal n_basis + degree + 1")
        if np.any(np.diff(knots) < 0):
            raise DataError("knots must be nondecreasing")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform(cls, domain: tuple[float, float], n_basis: int, degree: int = 3) -> "BasisSpec":
        a, b = domain
        n_interior = n_basis - degree - 1
        if n_interior < 0:
            raise DataError(f"{n_basis} basis functions are too few for degree {degree}")
        interior = np.linspace(a, b, n_interior + 2)[1:-1]
        knots = np.concatenate([np.full(degree + 1, a), interior, np.full(degree + 1, b)])
        return cls(n_basis, degree, knots)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def to_dict(self) -> dict:
        return {"n_basis": self.n_basis, "degree": self.degree, "knots": self.knots.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(int(d["n_basis"]), int(d["degree"]), np.asarray(d["knots"], dtype=float))


@dataclass(frozen=True)
class FunctionRep:
    basis: BasisSpec
    coefficients: np.ndarray

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float).ravel()
        if coef.size != self.basis.n_basis:
            raise DataError("coefficient count must equal n_basis")
        object.__setattr__(self, "coefficients", coef)

    def evaluate(self, grid: Grid) -> DiscreteCurve:
        return DiscreteCurve(grid, eval_basis(self.basis, grid) @ self.coefficients)


def _eval_points(spec: BasisSpec, x: np.ndarray) -> np.ndarray:
    a, b = spec.domain
    if np.any(x < a) or np.any(x > b):
        raise DataError(f"evaluation points fall outside the basis domain [{a:g}, {b:g}]")
    return BSpline.design_matrix(x, spec.knots, spec.degree).toarray()


def eval_basis(spec: BasisSpec, grid: Grid) -> np.ndarray:
    """Basis values, one row per grid point and one column per basis function."""
    return _eval_points(spec, grid.points)


def penalty_matrix(spec: BasisSpec) -> np.ndarray:
    """Gram matrix of second derivatives, by Gauss-Legendre quadrature per knot interval."""
    n = spec.n_basis
    if spec.degree < 2:
        return np.zeros((n, n))
    breaks = np.unique(spec.knots)
    nodes, wts = np.polynomial.legendre.leggauss(_GAUSS_POINTS)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    x = ((hi - lo) / 2 * nodes + (hi + lo) / 2).ravel()
    w = ((hi - lo) / 2 * wts).ravel()
    d2 = BSpline(spec.knots, np.eye(n), spec.degree).derivative(2)(x)
    return d2.T @ (w[:, None] * d2)


class _PenalizedSystem:
    """Normal equations shared by every curve observed on the same grid."""

    def __init__(self, spec: BasisSpec, grid: Grid):
        self.phi = eval_basis(spec, grid)
        self.gram = self.phi.T @ self.phi
        self.penalty = penalty_matrix(spec)
        self.n_basis = spec.n_basis

    def solve(self, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
        """Coefficients for the columns of ``y`` and the trace of the hat matrix."""
        if lam < 0:
            raise DataError("penalty must be nonnegative")
        a = self.gram + lam * self.penalty
        if lam == 0 and np.linalg.matrix_rank(self.phi) < self.n_basis:
            raise RankDeficientError("unpenalized smoothing with more basis functions than identifiable")
        rhs = self.phi.T @ y
        try:
            coef = np.linalg.solve(a, np.column_stack([rhs, self.gram]))
        except np.linalg.LinAlgError as exc:
            raise RankDeficientError("penalized normal system is singular") from exc
        return coef[:, : rhs.shape[1]], float(np.trace(coef[:, rhs.shape[1]:]))

    def gcv(self, y: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """GCV per column of ``y``."""
        coef, tr = self.solve(y, lam)
        sse = np.sum((y - self.phi @ coef) ** 2, axis=0)
        n = self.phi.shape[0]
        return n * sse / (n - tr) ** 2, coef


def smooth_penalized(curve: DiscreteCurve, spec: BasisSpec, penalty: float) -> FunctionRep:
    """Penalized least-squares fit of a B-spline function to a discrete curve."""
    system = _PenalizedSystem(spec, curve.grid)
    coef, _ = system.solve(curve.values[:, None], penalty)
    return FunctionRep(spec, coef[:, 0])


def _argmin_tie_larger(scores: np.ndarray, penalties: np.ndarray, scale: np.ndarray) -> np.ndarray:
    # scores: (n_candidates, n_curves); penalties ascending
    best = scores.min(axis=0)
    tol = 1e-9 * best + 1e-12 * scale
    tied = scores <= best + tol
    last = scores.shape[0] - 1 - np.argmax(tied[::-1], axis=0)
    return penalties[last]


def _check_candidates(candidate_penalties) -> np.ndarray:
    cands = np.asarray(candidate_penalties, dtype=float).ravel()
    if cands.size == 0:
        raise ValueError("candidate penalty list is empty")
    if np.any(cands <= 0) or np.any(np.diff(cands) <= 0):
        raise ValueError("candidate penalties must be positive and sorted ascending")
    return cands


def select_penalty_gcv(curve: DiscreteCurve, spec: BasisSpec, candidate_penalties=DEFAULT_PENALTIES) -> float:
    """Penalty minimizing generalized cross-validation; ties go to the larger penalty."""
    cands = _check_candidates(candidate_penalties)
    system = _PenalizedSystem(spec, curve.grid)
    y = curve.values[:, None]
    scores = np.array([system.gcv(y, lam)[0] for lam in cands])
    scale = np.array([np.mean(curve.values**2) + np.finfo(float).tiny])
    return float(_argmin_tie_larger(scores, cands, scale)[0])


@dataclass(frozen=True)
class Smoother:
    """A basis and one penalty, applied identically to every curve of a variable."""

    basis: BasisSpec
    penalty: float

    def apply(self, sample: CurveSample) -> CurveSample:
        system = _PenalizedSystem(self.basis, sample.grid)
        if len(sample) == 0:
            return sample
        coef, _ = system.solve(sample.values.T, self.penalty)
        return CurveSample(sample.grid, (system.phi @ coef).T)

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "penalty": self.penalty}

    @classmethod
    def from_dict(cls, d: dict) -> "Smoother":
        return cls(BasisSpec.from_dict(d["basis"]), float(d["penalty"]))


def fit_smoother(sample: CurveSample, n_basis: int = 80, degree: int = 3,
                 candidate_penalties=DEFAULT_PENALTIES) -> Smoother:
    """Choose a common penalty for a whole sample by pooled GCV.

    The pooled criterion is ``n * sum(SSE) / (n - tr H)**2``, which shares the
    hat matrix across curves because every curve uses the same basis and grid.

    Parameters
    ----------
    sample : CurveSample
        Raw curves of one functional variable.
    n_basis : int, default=80
        Number of B-spline basis functions.
    degree : int, default=3
        Spline degree.
    candidate_penalties : array-like
        Positive, ascending candidates.

    Returns
    -------
    Smoother
    """
    cands = _check_candidates(candidate_penalties)
    spec = BasisSpec.uniform(sample.grid.domain, n_basis, degree)
    system = _PenalizedSystem(spec, sample.grid)
    y = sample.values.T
    scores = np.array([[system.gcv(y, lam)[0].sum()] for lam in cands])
    scale = np.array([np.sum(y**2) / max(y.shape[1], 1) + np.finfo(float).tiny])
    return Smoother(spec, float(_argmin_tie_larger(scores, cands, scale)[0]))


# --------------------------------------------------------------------------
# Standardization


@dataclass(frozen=True)
class ScalingModel:
    """Pointwise means and standard deviations, one pair per functional variable."""

    mean_curves: tuple[DiscreteCurve, ...]
    scale_curves: tuple[DiscreteCurve, ...]
    floor_engaged: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "mean_curves", tuple(self.mean_curves))
        object.__setattr__(self, "scale_curves", tuple(self.scale_curves))
        if len(self.mean_curves) != len(self.scale_curves):
            raise DataError("one mean and one scale curve per variable are required")
        for m, s in zip(self.mean_curves, self.scale_curves):
            _check_grid(m.grid, s.grid, "mean and scale curves")
            if np.any(s.values <= 0):
                raise DataError("scale curves must be strictly positive")

    @property
    def grids(self) -> tuple[Grid, ...]:
        return tuple(m.grid for m in self.mean_curves)

    @classmethod
    def identity(cls, grids: Sequence[Grid]) -> "ScalingModel":
        return cls(tuple(DiscreteCurve(g, np.zeros(len(g))) for g in grids),
                   tuple(DiscreteCurve(g, np.ones(len(g))) for g in grids))

    def to_dict(self) -> dict:
        return {
            "grids": [m.grid.points.tolist() for m in self.mean_curves],
            "means": [m.values.tolist() for m in self.mean_curves],
            "scales": [s.values.tolist() for s in self.scale_curves],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingModel":
        grids = [Grid(g) for g in d["grids"]]
        return cls(tuple(DiscreteCurve(g, m) for g, m in zip(grids, d["means"])),
                   tuple(DiscreteCurve(g, s) for g, s in zip(grids, d["scales"])))


def standardize_sample(sample: Sequence[CurveSample]) -> tuple[list[CurveSample], ScalingModel]:
    """Center and scale each variable pointwise by its sample mean and standard deviation.

    Standard deviations use divisor ``n - 1`` and are floored at ``1e-8`` times
    their maximum over the grid (at ``1`` when the variable does not vary
    beyond rounding error).
    """
    out, means, scales, engaged = [], [], [], []
    for var in sample:
        if len(var) < 2:
            raise DataError("standardization needs at least 2 observations")
        mu = var.values.mean(axis=0)
        sd = var.values.std(axis=0, ddof=1)
        top = sd.max()
        # spread at rounding level of the data magnitude counts as no spread
        noise = 64 * np.finfo(float).eps * max(np.abs(var.values).max(), np.finfo(float).tiny)
        floor = SCALE_FLOOR * top if top > noise else 1.0
        engaged.append(bool(np.any(sd < floor)))
        sd = np.maximum(sd, floor)
        out.append(CurveSample(var.grid, (var.values - mu) / sd))
        means.append(DiscreteCurve(var.grid, mu))
        scales.append(DiscreteCurve(var.grid, sd))
    return out, ScalingModel(tuple(means), tuple(scales), tuple(engaged))


def apply_scaling(model: ScalingModel, new_curve, variable_index: int = 0):
    """Standardize a curve (or sample) with fixed estimates; returns the same type."""
    m, s = model.mean_curves[variable_index], model.scale_curves[variable_index]
    _check_grid(m.grid, new_curve.grid)
    return type(new_curve)(new_curve.grid, (new_curve.values - m.values) / s.values)


def invert_scaling(model: ScalingModel, curve, variable_index: int = 0):
    m, s = model.mean_curves[variable_index], model.scale_curves[variable_index]
    _check_grid(m.grid, curve.grid)
    return type(curve)(curve.grid, curve.values * s.values + m.values)


def inner_product(f: DiscreteCurve, g: DiscreteCurve) -> float:
    _check_grid(f.grid, g.grid)
    return float(np.sum(f.grid.weights * (f.values * g.values)))


# --------------------------------------------------------------------------
# CSV exchange format: first row grid, then one row per observation


def write_curves_csv(path, sample: CurveSample) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([repr(float(v)) for v in sample.grid.points])
        for row in sample.values:
            writer.writerow([repr(float(v)) for v in row])


def read_curves_csv(path) -> CurveSample:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty curve file (a grid row is required)")
    try:
        grid = Grid([float(v) for v in rows[0]])
        values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if values.size == 0:
        values = values.reshape(0, len(grid))
    if values.shape[1] != len(grid):
        raise DataError(f"{path}: rows do not match the grid length {len(grid)}")
    return CurveSample(grid, values)
