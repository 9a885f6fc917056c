"""Gaussian mixtures of multivariate linear regressions fitted by EM.

Each component ``k`` models ``y = B_k^T x + e`` with ``e ~ N(0, Sigma_k)``,
where ``x`` is a design vector whose first entry is 1. The covariances
follow one of four parameterizations, and the number of components and
the parameterization are chosen by BIC.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, FitError, NumericalError

log = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)
RIDGE = 1e-10


class CovarianceType(str, enum.Enum):
    SPHERICAL_COMMON = "spherical_common"  # Sigma_k = lambda I
    SPHERICAL_PER_COMPONENT = "spherical_per_component"  # Sigma_k = lambda_k I
    FULL_COMMON = "full_common"  # Sigma_k = Sigma
    FULL_PER_COMPONENT = "full_per_component"  # Sigma_k free

    def n_params(self, K: int, M: int) -> int:
        full = M * (M + 1) // 2
        return {
            CovarianceType.SPHERICAL_COMMON: 1,
            CovarianceType.SPHERICAL_PER_COMPONENT: K,
            CovarianceType.FULL_COMMON: full,
            CovarianceType.FULL_PER_COMPONENT: K * full,
        }[self]


ALL_COVARIANCE_TYPES = tuple(CovarianceType)


@dataclass(frozen=True)
class EmOptions:
    max_iter: int = 500
    rel_loglik_tol: float = 1e-8
    n_restarts: int = 5
    seed: int = 0
    covariance_floor: float = 1e-8
    kmeans_iter: int = 50
    residual_starts: bool = True

    def __post_init__(self):
        if self.max_iter < 1 or self.n_restarts < 1:
            raise ValueError("max_iter and n_restarts must be at least 1")
        if self.rel_loglik_tol <= 0 or self.covariance_floor <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class MixtureModel:
    """Fitted mixture of regressions.

    ``coefs[k]`` is the ``D x M`` coefficient matrix of component ``k``
    (intercept in row 0) and ``covariances[k]`` its residual covariance.
    """

    weights: np.ndarray
    coefs: np.ndarray
    covariances: np.ndarray
    parameterization: CovarianceType
    loglik: float = float("nan")
    n_iter: int = 0
    seed: int = 0
    restart: int = 0
    converged: bool = False
    loglik_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    ridge_events: int = 0
    selection: tuple = ()

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def D(self) -> int:
        return self.coefs.shape[1]

    @property
    def M(self) -> int:
        return self.coefs.shape[2]

    @property
    def n_params(self) -> int:
        return n_parameters(self.K, self.D, self.M, self.parameterization)

    def bic(self, N: int) -> float:
        return bic(self, N)

    def to_dict(self, N: int | None = None) -> dict:
        d = {
            "K": self.K,
            "D": self.D,
            "M": self.M,
            "parameterization": self.parameterization.value,
            "weights": self.weights.tolist(),
            "coefs": self.coefs.tolist(),
            "covariances": self.covariances.tolist(),
            "loglik": self.loglik,
            "n_params": self.n_params,
            "n_iter": self.n_iter,
            "seed": self.seed,
            "restart": self.restart,
            "converged": self.converged,
            "ridge_events": self.ridge_events,
        }
        if N is not None:
            d["N"] = N
            d["bic"] = self.bic(N)
        if self.selection:
            d["selection"] = [dict(zip(("K", "parameterization", "bic"), (k, p.value, b)))
                              for k, p, b in self.selection]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureModel":
        coefs = np.asarray(d["coefs"], dtype=float)
        covs = np.asarray(d["covariances"], dtype=float)
        weights = np.asarray(d["weights"], dtype=float)
        K, D, M = int(d["K"]), int(d["D"]), int(d["M"])
        if coefs.shape != (K, D, M) or covs.shape != (K, M, M) or weights.shape != (K,):
            raise DataError("inconsistent mixture dimensions")
        return cls(weights, coefs, covs, CovarianceType(d["parameterization"]), float(d["loglik"]),
                   int(d.get("n_iter", 0)), int(d.get("seed", 0)), int(d.get("restart", 0)),
                   bool(d.get("converged", False)), ridge_events=int(d.get("ridge_events", 0)))


def n_parameters(K: int, D: int, M: int, parameterization: CovarianceType) -> int:
    return (K - 1) + K * D * M + CovarianceType(parameterization).n_params(K, M)


def bic(model: MixtureModel, N: int) -> float:
    """``-2 loglik + n_params log N``; smaller is better."""
    return -2.0 * model.loglik + model.n_params * np.log(N)


def _check_data(designs, responses) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(designs, dtype=float)
    Y = np.asarray(responses, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DataError("designs and responses must be 2-D with matching row counts")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise DataError("designs and responses must be finite")
    return X, Y


def absolute_floor(responses: np.ndarray, relative: float) -> float:
    """Eigenvalue floor tied to the overall scale of the responses."""
    M = responses.shape[1]
    if responses.shape[0] > 1:
        scale = np.trace(np.atleast_2d(np.cov(responses, rowvar=False))) / M
    else:
        scale = 0.0
    return relative * scale if scale > 0 else relative


def _floor_matrix(S: np.ndarray, floor: float) -> np.ndarray:
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    if vals[0] >= floor:
        return S
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def constrain_covariance(raw: Sequence[np.ndarray], masses, parameterization: CovarianceType,
                         floor: float = 0.0) -> np.ndarray:
    """Project per-component residual covariances onto a parameterization.

    Common structures pool with weights ``n_k / N``; spherical structures
    keep ``trace / M``. Every result is floored at ``floor``.
    """
    raw = np.asarray(raw, dtype=float)
    K, M, _ = raw.shape
    masses = np.asarray(masses, dtype=float)
    share = masses / masses.sum()
    ptype = CovarianceType(parameterization)
    eye = np.eye(M)
    if ptype is CovarianceType.FULL_PER_COMPONENT:
        out = raw.copy()
    elif ptype is CovarianceType.FULL_COMMON:
        out = np.broadcast_to(np.einsum("k,kij->ij", share, raw), raw.shape).copy()
    else:
        lam = np.trace(raw, axis1=1, axis2=2) / M
        if ptype is CovarianceType.SPHERICAL_COMMON:
            lam = np.full(K, share @ lam)
        return np.maximum(lam, floor)[:, None, None] * eye
    return np.stack([_floor_matrix(S, floor) for S in out])


def _is_pd(S: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return False
    return True


def component_log_densities(model: MixtureModel, designs: np.ndarray, responses: np.ndarray,
                            inflation: np.ndarray | None = None) -> np.ndarray:
    """``log pi_k + log phi(y_i; B_k^T x_i, c_ik Sigma_k)`` as an ``(N, K)`` array.

    ``inflation`` holds optional per-observation covariance multipliers
    ``c_ik`` of shape ``(N, K)``.
    """
    M = model.M
    try:
        chol = np.linalg.cholesky(model.covariances)
    except np.linalg.LinAlgError:
        k = next(k for k, S in enumerate(model.covariances) if not _is_pd(S))
        raise NumericalError(f"covariance of component {k} is not positive definite") from None
    chol_inv = np.linalg.inv(chol)
    resid = responses[None, :, :] - designs @ model.coefs
    z = resid @ chol_inv.transpose(0, 2, 1)
    maha = np.sum(z * z, axis=2).T
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    if inflation is None:
        out = logw - 0.5 * (M * LOG_2PI + logdet + maha)
    else:
        out = logw - 0.5 * (M * LOG_2PI + logdet + M * np.log(inflation) + maha / inflation)
    bad = ~np.isfinite(out) & ~np.isneginf(logw)[None, :]
    if np.any(bad):
        k = int(np.nonzero(bad.any(axis=0))[0][0])
        raise NumericalError(f"non-finite density for component {k}")
    return out


def e_step(model: MixtureModel, designs, responses) -> tuple[np.ndarray, float]:
    """Posterior membership probabilities ``(N, K)`` and the log-likelihood."""
    X, Y = _check_data(designs, responses)
    logp = component_log_densities(model, X, Y)
    lse = logsumexp(logp, axis=1)
    tau = np.exp(logp - lse[:, None])
    tau /= tau.sum(axis=1, keepdims=True)
    return tau, float(lse.sum())


def _weighted_ls(tau: np.ndarray, X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    Xw = tau.T[:, :, None] * X[None, :, :]
    XwT = Xw.transpose(0, 2, 1)
    gram = XwT @ X
    cross = XwT @ Y
    D = X.shape[1]
    ridged = 0
    vals = np.linalg.eigvalsh(gram)
    for k in range(gram.shape[0]):
        if vals[k, 0] <= 1e-12 * max(vals[k, -1], np.finfo(float).tiny):
            gram[k] += (RIDGE * np.trace(gram[k]) / D + np.finfo(float).tiny) * np.eye(D)
            ridged += 1
    coefs = np.linalg.solve(gram, cross)
    resid = Y[None, :, :] - X @ coefs
    raw = (tau.T[:, :, None] * resid).transpose(0, 2, 1) @ resid
    return coefs, raw, ridged


def m_step(tau, designs, responses, parameterization: CovarianceType, floor: float = 0.0) -> MixtureModel:
    """Weighted least-squares updates given posterior weights ``tau`` ``(N, K)``."""
    X, Y = _check_data(designs, responses)
    tau = np.asarray(tau, dtype=float)
    masses = tau.sum(axis=0)
    if np.any(masses <= 0):
        raise FitError("a component has zero posterior mass")
    coefs, raw, ridged = _weighted_ls(tau, X, Y)
    if ridged:
        log.debug("ridge added to %d singular weighted normal matrices", ridged)
    raw /= masses[:, None, None]
    covs = constrain_covariance(raw, masses, parameterization, floor)
    return MixtureModel(masses / X.shape[0], coefs, covs, CovarianceType(parameterization), ridge_events=ridged)


def _kmeans(Z: np.ndarray, K: int, rng: np.random.Generator, n_iter: int) -> np.ndarray:
    """Lloyd iterations from k-means++ seeding; empty clusters reseeded at the farthest point."""
    N = Z.shape[0]
    centers = np.empty((K, Z.shape[1]))
    centers[0] = Z[rng.integers(N)]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for j in range(1, K):
        total = d2.sum()
        idx = rng.choice(N, p=d2 / total) if total > 0 else rng.integers(N)
        centers[j] = Z[idx]
        d2 = np.minimum(d2, np.sum((Z - centers[j]) ** 2, axis=1))
    labels = None
    for _ in range(n_iter):
        dist = np.sum((Z[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        counts = np.bincount(new, minlength=K)
        nearest = dist[np.arange(N), new]
        while np.any(counts == 0):
            j = int(np.argmin(counts))
            movable = np.where(counts[new] > 1, nearest, -np.inf)
            far = int(np.argmax(movable))
            counts[new[far]] -= 1
            counts[j] += 1
            new[far] = j
            nearest[far] = -np.inf
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(K):
            centers[j] = Z[labels == j].mean(axis=0)
    return labels


def kmeans_init(designs, responses, K: int, options: EmOptions = EmOptions(),
                parameterization: CovarianceType = CovarianceType.FULL_PER_COMPONENT,
                rng: np.random.Generator | None = None, on_residuals: bool = False) -> MixtureModel:
    """Initial mixture from a hard K-means partition.

    The partition is computed on the joint rows ``[x | y]``, or with
    ``on_residuals`` on the residuals of a single pooled least-squares fit,
    which isolates the part of ``y`` the covariates do not explain.
    """
    X, Y = _check_data(designs, responses)
    N = X.shape[0]
    if K < 1 or N < K:
        raise DataError(f"cannot initialize {K} components from {N} observations")
    rng = np.random.default_rng(options.seed) if rng is None else rng
    if on_residuals:
        Z = Y - X @ np.linalg.lstsq(X, Y, rcond=None)[0]
    else:
        Z = np.hstack([X, Y])
    labels = _kmeans(Z, K, rng, options.kmeans_iter)
    tau = np.zeros((N, K))
    tau[np.arange(N), labels] = 1.0
    return m_step(tau, X, Y, parameterization, absolute_floor(Y, options.covariance_floor))


def em_run(designs, responses, K: int, parameterization: CovarianceType,
           options: EmOptions = EmOptions(), restart: int = 0) -> MixtureModel:
    """One EM run from the K-means start of restart ``restart``.

    Even restarts partition the joint rows; odd ones partition pooled
    least-squares residuals when ``options.residual_starts`` is set.

    Raises
    ------
    FitError
        If a component's posterior mass drops below ``D + M`` observations,
        too few to leave residual degrees of freedom for its covariance.
    """
    X, Y = _check_data(designs, responses)
    ptype = CovarianceType(parameterization)
    floor = absolute_floor(Y, options.covariance_floor)
    rng = np.random.default_rng([options.seed, restart])
    min_mass = X.shape[1] + Y.shape[1]
    model = kmeans_init(X, Y, K, options, ptype, rng, options.residual_starts and restart % 2 == 1)
    trace = []
    ridged = model.ridge_events
    converged = False
    prev = None
    for it in range(options.max_iter + 1):
        tau, ll = e_step(model, X, Y)
        trace.append(ll)
        if prev is not None and abs(ll - prev) / (abs(prev) + 1.0) < options.rel_loglik_tol:
            converged = True
            break
        if it == options.max_iter:
            break
        if K > 1 and tau.sum(axis=0).min() < min_mass:
            raise FitError(f"component mass fell below {min_mass} observations (K={K}, restart={restart})")
        prev = ll
        model = m_step(tau, X, Y, ptype, floor)
        ridged += model.ridge_events
    return replace(model, loglik=trace[-1], n_iter=len(trace) - 1, seed=options.seed, restart=restart,
                   converged=converged, loglik_trace=np.asarray(trace), ridge_events=ridged)


def em_fit(designs, responses, K: int, parameterization: CovarianceType = CovarianceType.FULL_PER_COMPONENT,
           options: EmOptions = EmOptions()) -> MixtureModel:
    """Best-likelihood EM fit over ``options.n_restarts`` seeded starts."""
    X, Y = _check_data(designs, responses)
    if K < 1:
        raise ValueError("K must be at least 1")
    if X.shape[0] <= X.shape[1]:
        raise DataError(f"need more observations ({X.shape[0]}) than design columns ({X.shape[1]})")
    best, failures = None, []
    for r in range(options.n_restarts):
        try:
            fit = em_run(X, Y, K, parameterization, options, r)
        except (FitError, NumericalError, np.linalg.LinAlgError) as exc:
            failures.append(str(exc))
            continue
        if best is None or fit.loglik > best.loglik:
            best = fit
    if best is None:
        raise FitError(f"all {options.n_restarts} restarts failed: {failures[-1]}")
    return best


def select_model(designs, responses, K_range: Iterable[int] = range(1, 6),
                 parameterizations: Iterable[CovarianceType] = ALL_COVARIANCE_TYPES,
                 options: EmOptions = EmOptions()) -> MixtureModel:
    """Minimum-BIC fit over every (K, parameterization) candidate.

    Ties go to smaller K, then to fewer covariance parameters. The
    returned model lists all successful candidates in ``selection``.
    """
    X, Y = _check_data(designs, responses)
    N, M = X.shape[0], Y.shape[1]
    K_range, params = list(K_range), [CovarianceType(p) for p in parameterizations]
    if not K_range or not params:
        raise ValueError("K_range and parameterizations must be nonempty")
    fits = []
    for K in K_range:
        for p in params:
            try:
                fit = em_fit(X, Y, K, p, options)
            except (FitError, DataError) as exc:
                log.debug("candidate K=%d %s skipped: %s", K, p.value, exc)
                continue
            fits.append((fit.bic(N), K, p.n_params(K, M), p.value, fit))
    if not fits:
        raise FitError("every model-selection candidate failed")
    fits.sort(key=lambda f: f[:4])
    table = tuple((K, CovarianceType(p), b) for b, K, _, p, _ in sorted(fits, key=lambda f: (f[1], f[3])))
    return replace(fits[0][4], selection=table)


def map_labels(tau: np.ndarray) -> np.ndarray:
    return np.argmax(tau, axis=1)
