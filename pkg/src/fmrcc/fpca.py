"""Multivariate functional principal components on a quadrature grid.

Several functional variables are concatenated into one long vector whose
inner product carries the trapezoidal weights of each variable's grid, so
the univariate and multivariate cases share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .curves import CurveSample, DiscreteCurve, Grid, ScalingModel, apply_scaling, standardize_sample
from .errors import DataError


def _as_list(sample) -> list[CurveSample]:
    if isinstance(sample, CurveSample):
        return [sample]
    return list(sample)


def stack(sample) -> np.ndarray:
    """Concatenate per-variable values into an ``(n, total_points)`` array."""
    variables = _as_list(sample)
    if not variables:
        raise DataError("no functional variables given")
    n = len(variables[0])
    if any(len(v) != n for v in variables):
        raise DataError("variables hold different numbers of observations")
    return np.hstack([v.values for v in variables])


def _stacked_weights(grids: Sequence[Grid]) -> np.ndarray:
    return np.concatenate([g.weights for g in grids])


def estimate_covariance(sample) -> np.ndarray:
    """Sample covariance (divisor ``n - 1``) of the concatenated variables.

    Block ``(i, j)`` of the result, sliced by each variable's grid length,
    is the cross-covariance surface of variables ``i`` and ``j``.
    """
    data = stack(sample)
    if data.shape[0] < 2:
        raise DataError("covariance estimation needs at least 2 observations")
    centered = data - data.mean(axis=0)
    return centered.T @ centered / (data.shape[0] - 1)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # columns flipped so the entry of largest magnitude is positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def weighted_eigen(cov: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a covariance operator discretized with quadrature weights.

    Solves the symmetric problem ``W^1/2 C W^1/2 u = lambda u`` and returns
    eigenvalues in nonincreasing order together with eigenfunctions
    ``W^-1/2 u`` as columns, orthonormal under the weighted inner product.
    """
    sw = np.sqrt(weights)
    vals, vecs = np.linalg.eigh(sw[:, None] * cov * sw[None, :])
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    funcs = _fix_signs(vecs[:, order]) / sw[:, None]
    return vals, funcs


def retained_count(eigenvalues: np.ndarray, fve_target: float) -> int:
    total = eigenvalues.sum()
    fve = np.cumsum(eigenvalues) / total
    count = int(np.searchsorted(fve, fve_target - 1e-12) + 1)
    return min(count, int(np.count_nonzero(eigenvalues > 0)))


@dataclass(frozen=True)
class FpcaModel:
    """Truncated eigenbasis of a (multivariate) functional variable.

    Attributes
    ----------
    scaling : ScalingModel
        Phase I mean and scale curves used to standardize raw observations.
    eigenfunctions : ndarray of shape (retained, total_points)
        Retained eigenfunctions, variables concatenated along the last axis.
    eigenvalues : ndarray of shape (retained,)
    all_eigenvalues : ndarray
        Every numerically nonnegative eigenvalue, for FVE bookkeeping.
    fve_target : float
    """

    scaling: ScalingModel
    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    all_eigenvalues: np.ndarray
    fve_target: float

    @property
    def grids(self) -> tuple[Grid, ...]:
        return self.scaling.grids

    @property
    def retained(self) -> int:
        return self.eigenvalues.size

    @property
    def weights(self) -> np.ndarray:
        return _stacked_weights(self.grids)

    @property
    def fve(self) -> np.ndarray:
        """Cumulative fraction of variance explained by the leading components."""
        return np.cumsum(self.all_eigenvalues) / self.all_eigenvalues.sum()

    def eigenfunction(self, index: int) -> list[DiscreteCurve]:
        """Eigenfunction ``index`` (0-based) split into per-variable curves."""
        return [DiscreteCurve(g, v) for g, v in zip(self.grids, self.unstack(self.eigenfunctions[index]))]

    def unstack(self, values: np.ndarray) -> list[np.ndarray]:
        bounds = np.cumsum([0] + [len(g) for g in self.grids])
        return [values[..., a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    def standardize(self, raw) -> np.ndarray:
        variables = _as_list(raw)
        if len(variables) != len(self.grids):
            raise DataError(f"expected {len(self.grids)} functional variables, got {len(variables)}")
        return stack([apply_scaling(self.scaling, v, j) for j, v in enumerate(variables)])

    def scores(self, raw) -> np.ndarray:
        """Scores of raw (unstandardized) observations."""
        return project_scores(self, self.standardize(raw))

    def to_dict(self) -> dict:
        return {
            "scaling": self.scaling.to_dict(),
            "eigenfunctions": self.eigenfunctions.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "all_eigenvalues": self.all_eigenvalues.tolist(),
            "retained": self.retained,
            "fve_target": self.fve_target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FpcaModel":
        funcs = np.asarray(d["eigenfunctions"], dtype=float)
        vals = np.asarray(d["eigenvalues"], dtype=float)
        if funcs.shape[0] != vals.size or vals.size != int(d["retained"]):
            raise DataError("inconsistent FPCA model dimensions")
        return cls(ScalingModel.from_dict(d["scaling"]), funcs, vals,
                   np.asarray(d["all_eigenvalues"], dtype=float), float(d["fve_target"]))


def fit_fpca(sample, fve_target: float = 0.95, scaling: ScalingModel | None = None) -> FpcaModel:
    """Eigen-decompose the covariance of an already standardized sample.

    Keeps the smallest number of components whose cumulative fraction of
    variance explained reaches ``fve_target``.
    """
    if not 0 < fve_target <= 1:
        raise ValueError("fve_target must lie in (0, 1]")
    variables = _as_list(sample)
    grids = [v.grid for v in variables]
    cov = estimate_covariance(variables)
    vals, funcs = weighted_eigen(cov, _stacked_weights(grids))
    if vals.sum() <= 0:
        raise DataError("degenerate sample: the covariance is identically zero")
    keep = retained_count(vals, fve_target)
    if scaling is None:
        scaling = ScalingModel.identity(grids)
    positive = vals[vals > 0]
    return FpcaModel(scaling, funcs[:, :keep].T.copy(), vals[:keep].copy(), positive, float(fve_target))


def fit_functional(raw, fve_target: float = 0.95) -> tuple[FpcaModel, np.ndarray]:
    """Standardize raw curves, fit the eigenbasis, and return the training scores."""
    standardized, scaling = standardize_sample(_as_list(raw))
    model = fit_fpca(standardized, fve_target, scaling)
    return model, project_scores(model, stack(standardized))


def _as_stacked(model: FpcaModel, observation) -> np.ndarray:
    if isinstance(observation, np.ndarray):
        arr = observation
    else:
        items = [observation] if isinstance(observation, (DiscreteCurve, CurveSample)) else list(observation)
        if len(items) != len(model.grids):
            raise DataError(f"expected {len(model.grids)} functional variables, got {len(items)}")
        for g, c in zip(model.grids, items):
            if c.grid != g:
                raise DataError("observation grid does not match the model grid")
        arr = np.concatenate([c.values for c in items], axis=-1)
    if arr.shape[-1] != model.eigenfunctions.shape[1]:
        raise DataError("observation does not match the model grid")
    return arr


def project_scores(model: FpcaModel, observation) -> np.ndarray:
    """Weighted inner products with each retained eigenfunction.

    Accepts a stacked array (1-D for one observation, 2-D for many), a
    curve, a sample, or a per-variable list of curves or samples.
    """
    arr = _as_stacked(model, observation)
    return (arr * model.weights) @ model.eigenfunctions.T


def reconstruct(model: FpcaModel, scores) -> np.ndarray:
    """Truncated expansion ``sum_l scores_l * psi_l`` as stacked values."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape[-1] != model.retained:
        raise DataError(f"expected {model.retained} scores, got {scores.shape[-1]}")
    return scores @ model.eigenfunctions


# --------------------------------------------------------------------------
# Regression design


@dataclass(frozen=True)
class ScalarScaling:
    """Phase I mean and standard deviation of scalar covariates."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, values) -> "ScalarScaling":
        z = np.asarray(values, dtype=float)
        if z.ndim != 2 or z.shape[0] < 2:
            raise DataError("scalar covariates must be an (n >= 2, q) array")
        sd = z.std(axis=0, ddof=1)
        sd[sd <= 0] = 1.0
        return cls(z.mean(axis=0), sd)

    def apply(self, values) -> np.ndarray:
        z = np.asarray(values, dtype=float)
        return (z - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalarScaling":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))


def assemble_design(x_scores=(), scalar_covariates=()) -> np.ndarray:
    """Design vector ``[1, x_scores..., scalars...]`` for one observation."""
    x = np.asarray(x_scores, dtype=float).ravel()
    z = np.asarray(scalar_covariates, dtype=float).ravel()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        raise ValueError("design inputs must be finite")
    return np.concatenate([[1.0], x, z])


def design_matrix(x_scores=None, scalar_covariates=None, n: int | None = None) -> np.ndarray:
    """Stack design vectors row-wise; either block may be omitted."""
    blocks = [np.asarray(b, dtype=float) for b in (x_scores, scalar_covariates) if b is not None]
    blocks = [b.reshape(b.shape[0], -1) for b in blocks]
    if n is None:
        if not blocks:
            raise ValueError("n is required when no covariates are given")
        n = blocks[0].shape[0]
    if any(b.shape[0] != n for b in blocks):
        raise DataError("covariate blocks have different numbers of rows")
    out = np.hstack([np.ones((n, 1))] + blocks)
    if not np.all(np.isfinite(out)):
        raise ValueError("design inputs must be finite")
    return out
