"""Synthetic three-cluster function-on-function data.

Covariates are Karhunen-Loeve expansions on the eigensystem of a powered
exponential correlation kernel. Responses mix a sigmoidal intercept and a
polynomial coefficient surface per cluster, weighted by ``delta2``, with
clusters pulled together by ``delta1``. Noise is a random combination of
cubic B-splines scaled to a target signal-to-noise ratio. Out-of-control
profiles come from the first cluster with an additive shift.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .curves import BasisSpec, CurveSample, DiscreteCurve, Grid, eval_basis
from .errors import DataError
from .fpca import weighted_eigen
from .monitor import ProfileSet

N_CLUSTERS = 3
DELTA1_VALUES = (0.0, 0.33, 0.66, 1.0)
DELTA2_VALUES = (0.0, 0.5, 1.0)
SEVERITIES = (0.0, 0.375, 0.75, 1.25, 1.5)
SHIFT_TYPES = ("linear", "quadratic")
SHIFT_COEF = {"linear": 1.2, "quadratic": 1.6}

# (a, b, c, d, e) of the coefficient surfaces
BETA_PARAMS = {1: (0.3, 0.3, 0.3, 0.3, 5.0), 2: (0.2, 0.15, 0.9, 0.9, -5.0), 3: (0.9, 0.9, -0.3, -0.3, 5.0)}
# (f, g, h, m) of the intercepts
INTERCEPT_PARAMS = {1: (0.2074, 0.8217, 26.15, 0.15), 2: (0.187, 0.2, 27.0, 0.4), 3: (0.3, 4.0, 24.0, 0.08)}

N_NOISE_BASIS = 20
_PHASES = {"train": 0, "tune": 1, "test": 2, "ic_test": 3}


@dataclass(frozen=True)
class SimConfig:
    """Generation parameters of one simulation cell.

    ``n_train`` and ``n_tune`` count observations per cluster; ``n_test`` is
    the size of the out-of-control test set.
    """

    delta1: float = 1.0
    delta2: float = 1.0
    n_train: int = 100
    n_tune: int = 250
    n_test: int = 500
    shift_type: str = "linear"
    severity: float = 0.0
    grid_size: int = 500
    seed: int = 0
    snr: float = 10.0

    def __post_init__(self):
        if not (0.0 <= self.delta1 <= 1.0 and 0.0 <= self.delta2 <= 1.0):
            raise DataError("delta1 and delta2 must lie in [0, 1]")
        if min(self.n_train, self.n_tune, self.n_test) < 1:
            raise DataError("sample sizes must be positive")
        if self.shift_type not in SHIFT_TYPES:
            raise DataError(f"unknown shift type {self.shift_type!r}")
        if self.severity < 0:
            raise DataError("severity must be nonnegative")
        if self.grid_size < 4:
            raise DataError("grid_size must be at least 4")
        if self.snr <= 0:
            raise DataError("snr must be positive")

    @classmethod
    def paper_scale(cls, **kw) -> "SimConfig":
        return cls(**{"n_train": 400, "n_tune": 1000, "n_test": 3000, **kw})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise DataError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# Covariates


@dataclass(frozen=True)
class KernelEigensystem:
    grid: Grid
    rho: float
    nu: float
    eigenvalues: np.ndarray  # (L*,)
    eigenfunctions: np.ndarray  # (L*, G), orthonormal under the grid weights


def powered_exponential(z, rho: float = 1.0, nu: float = 0.5) -> np.ndarray:
    return np.exp(-((np.abs(z) / rho) ** nu))


@lru_cache(maxsize=8)
def _kernel_eigen_cached(points: bytes, n: int, rho: float, nu: float, n_components: int):
    grid = Grid(np.frombuffer(points, dtype=float, count=n))
    t = grid.points
    G = powered_exponential(t[:, None] - t[None, :], rho, nu)
    vals, funcs = weighted_eigen(G, grid.weights)
    vals, funcs = vals[:n_components].copy(), funcs[:, :n_components].T.copy()
    vals.setflags(write=False)
    funcs.setflags(write=False)
    return KernelEigensystem(grid, rho, nu, vals, funcs)


def kernel_eigen(grid: Grid, rho: float = 1.0, nu: float = 0.5, n_components: int = 50) -> KernelEigensystem:
    """Nystrom eigenpairs of ``exp(-(|s - t| / rho)**nu)`` on ``grid``, top ``n_components`` kept."""
    if rho <= 0 or not 0 < nu <= 2:
        raise DataError("rho must be positive and nu must lie in (0, 2]")
    return _kernel_eigen_cached(grid.points.tobytes(), len(grid), float(rho), float(nu), int(n_components))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_covariates(eigen: KernelEigensystem, n: int, seed=None) -> CurveSample:
    """``X = sum_l xi_l psi_l`` with independent ``xi_l ~ N(0, lambda_l)``."""
    rng = _rng(seed)
    xi = rng.standard_normal((n, eigen.eigenvalues.size)) * np.sqrt(eigen.eigenvalues)
    return CurveSample(eigen.grid, xi @ eigen.eigenfunctions)


# --------------------------------------------------------------------------
# Cluster coefficient functions


def _check_cluster(k: int):
    if k not in BETA_PARAMS:
        raise DataError(f"cluster index must be 1, 2 or 3, got {k!r}")


def beta_star(k: int, s, t) -> np.ndarray:
    """Reference coefficient surface of cluster ``k`` (broadcasts over ``s`` and ``t``)."""
    _check_cluster(k)
    a, b, c, d, e = BETA_PARAMS[k]
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return ((t - 0.5) / c) ** 3 + ((s - 0.5) / d) ** 3 + ((t - 0.5) / b) ** 2 - ((s - 0.5) / a) ** 2 + e


def u_map(k: int, t, domain: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Affine map of ``domain`` onto ``[0.0045, m_k]``."""
    _check_cluster(k)
    m = INTERCEPT_PARAMS[k][3]
    lo, hi = domain
    return (np.asarray(t, dtype=float) - lo) / (hi - lo) * (m - 0.0045) + 0.0045


def intercept_star(k: int, t, domain: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Reference intercept of cluster ``k``, a sigmoidal resistance-like curve."""
    _check_cluster(k)
    f, g, h, _ = INTERCEPT_PARAMS[k]
    u = u_map(k, t, domain)
    return (f + 0.3117 * np.exp(-371.4 * u) + 0.5284 * (1 - np.exp(g * u))
            - 423.3 * (1 + np.tanh(-h * u + 0.1715)))


@dataclass(frozen=True)
class ClusterCoefficients:
    """Intercepts ``(3, G_t)`` and surfaces ``(3, G_s, G_t)`` on the grids."""

    s_grid: Grid
    t_grid: Grid
    intercepts: np.ndarray
    surfaces: np.ndarray


@lru_cache(maxsize=8)
def _starred(points: bytes, n: int):
    grid = Grid(np.frombuffer(points, dtype=float, count=n))
    t = grid.points
    b0 = np.stack([intercept_star(k, t, grid.domain) for k in (1, 2, 3)])
    b = np.stack([beta_star(k, t[:, None], t[None, :]) for k in (1, 2, 3)])
    return grid, b0, b


def mix_coefficients(delta1: float, grid: Grid) -> ClusterCoefficients:
    """Clusters 2 and 3 are the convex combination ``(1 - delta1) * cluster1 + delta1 * own``."""
    if not 0.0 <= delta1 <= 1.0:
        raise DataError("delta1 must lie in [0, 1]")
    _, b0, b = _starred(grid.points.tobytes(), len(grid))
    b0 = b0.copy()
    b = b.copy()
    for k in (1, 2):
        b0[k] = (1 - delta1) * b0[0] + delta1 * b0[k]
        b[k] = (1 - delta1) * b[0] + delta1 * b[k]
    return ClusterCoefficients(grid, grid, b0, b)


# --------------------------------------------------------------------------
# Noise and shifts


def noise_basis(grid: Grid, n_basis: int = N_NOISE_BASIS) -> np.ndarray:
    """Evenly knotted cubic B-splines evaluated on ``grid``, shape ``(G, n_basis)``."""
    return eval_basis(BasisSpec.uniform(grid.domain, n_basis, 3), grid)


def noise_scale(signal, grid: Grid, target_snr: float) -> float:
    """Constant ``k`` such that grid-averaged signal variance over noise variance equals ``target_snr``.

    The noise variance at ``t`` is ``k**2 * sum_i psi_i(t)**2`` because the
    spline weights are independent standard normals.
    """
    if target_snr <= 0:
        raise DataError("target_snr must be positive")
    values = np.asarray(signal.values if isinstance(signal, CurveSample) else signal, dtype=float)
    if values.shape[0] < 2:
        raise DataError("the signal sample needs at least 2 curves")
    sig_var = values.var(axis=0, ddof=1).mean()
    # variance at rounding level of the curve magnitude is no variance
    if not sig_var > (64 * np.finfo(float).eps * np.abs(values).max()) ** 2:
        raise DataError("the signal has zero variance; the SNR is undefined")
    unit_var = (noise_basis(grid) ** 2).sum(axis=1).mean()
    return float(np.sqrt(sig_var / (target_snr * unit_var)))


def gen_noise(grid: Grid, n: int, target_snr: float, signal, seed=None, scale: float | None = None) -> CurveSample:
    """Noise curves ``k * sum_i e_i psi_i`` with ``k`` from :func:`noise_scale` unless given."""
    if scale is None:
        scale = noise_scale(signal, grid, target_snr)
    rng = _rng(seed)
    e = rng.standard_normal((n, N_NOISE_BASIS))
    return CurveSample(grid, scale * e @ noise_basis(grid).T)


def realized_snr(signal, noise) -> float:
    s = np.asarray(getattr(signal, "values", signal))
    e = np.asarray(getattr(noise, "values", noise))
    return float(s.var(axis=0, ddof=1).mean() / e.var(axis=0, ddof=1).mean())


def gen_shift(shift_type: str, severity: float, grid: Grid) -> DiscreteCurve:
    """``delta(t) = s q_q t**2`` (quadratic) or ``s q_l t`` (linear)."""
    if severity < 0:
        raise DataError("severity must be nonnegative")
    t = grid.points
    if shift_type == "linear":
        values = severity * SHIFT_COEF["linear"] * t
    elif shift_type == "quadratic":
        values = severity * SHIFT_COEF["quadratic"] * t**2
    else:
        raise DataError(f"unknown shift type {shift_type!r}")
    return DiscreteCurve(grid, values)


# --------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class GeneratedDataset:
    x: CurveSample
    y: CurveSample
    labels: np.ndarray
    phase: str
    shift_type: str = "none"
    severity: float = 0.0
    shifted: np.ndarray = field(default=None)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        if labels.size != len(self.y) or len(self.x) != len(self.y):
            raise DataError("dataset parts have different lengths")
        object.__setattr__(self, "labels", labels)
        if self.shifted is None:
            object.__setattr__(self, "shifted", np.zeros(labels.size, dtype=bool))

    def __len__(self):
        return len(self.y)

    def profiles(self) -> ProfileSet:
        return ProfileSet((self.x,), self.y)

    def label_rows(self) -> list[tuple]:
        return [(i, int(k), self.phase, self.shift_type if s else "none", self.severity if s else 0.0)
                for i, (k, s) in enumerate(zip(self.labels, self.shifted))]


class Simulator:
    """Generator bound to one ``(delta1, delta2)`` cell.

    The noise constant is fixed from the noiseless training signal and reused
    for every later phase. Each phase draws from its own seed stream, so test
    sets under different shifts can share random numbers.
    """

    def __init__(self, config: SimConfig):
        self.config = config
        self.grid = Grid.uniform(config.grid_size)
        self.eigen = kernel_eigen(self.grid)
        self.coefs = mix_coefficients(config.delta1, self.grid)
        self._wx = self.grid.weights
        self._scale: float | None = None

    def stream(self, phase: str) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.config.seed, spawn_key=(_PHASES[phase],)))

    def signal(self, x: CurveSample, labels: np.ndarray) -> np.ndarray:
        """Noiseless responses ``(1 - delta2) b0_k + delta2 int b_k(s, t) X(s) ds``."""
        d2 = self.config.delta2
        out = np.empty((len(x), len(self.grid)))
        xw = x.values * self._wx
        for k in range(N_CLUSTERS):
            rows = labels == k + 1
            if np.any(rows):
                out[rows] = (1 - d2) * self.coefs.intercepts[k] + d2 * (xw[rows] @ self.coefs.surfaces[k])
        return out

    @property
    def scale(self) -> float:
        if self._scale is None:
            self.train()
        return self._scale

    def _draw(self, rng: np.random.Generator, labels: np.ndarray):
        x = gen_covariates(self.eigen, labels.size, rng)
        sig = self.signal(x, labels)
        return x, sig

    def _noise(self, rng, n) -> np.ndarray:
        return gen_noise(self.grid, n, self.config.snr, None, rng, scale=self.scale).values

    def _stratified(self, rng, per_cluster: int) -> np.ndarray:
        return rng.permutation(np.repeat(np.arange(1, N_CLUSTERS + 1), per_cluster))

    def train(self) -> GeneratedDataset:
        rng = self.stream("train")
        labels = self._stratified(rng, self.config.n_train)
        x, sig = self._draw(rng, labels)
        if self._scale is None:
            try:
                self._scale = noise_scale(sig, self.grid, self.config.snr)
            except DataError:
                # no signal variability at all: any scale is equivalent after standardization
                self._scale = 1.0
        y = sig + self._noise(rng, labels.size)
        return GeneratedDataset(x, CurveSample(self.grid, y), labels, "train")

    def tune(self) -> GeneratedDataset:
        rng = self.stream("tune")
        labels = self._stratified(rng, self.config.n_tune)
        x, sig = self._draw(rng, labels)
        return GeneratedDataset(x, CurveSample(self.grid, sig + self._noise(rng, labels.size)), labels, "tune")

    def ic_test(self, n: int | None = None) -> GeneratedDataset:
        """In-control test set with cluster labels drawn with equal probabilities."""
        n = self.config.n_test if n is None else n
        rng = self.stream("ic_test")
        labels = rng.integers(1, N_CLUSTERS + 1, size=n)
        x, sig = self._draw(rng, labels)
        return GeneratedDataset(x, CurveSample(self.grid, sig + self._noise(rng, n)), labels, "test")

    def oc_test(self, shift_type: str | None = None, severity: float | None = None,
                n: int | None = None) -> GeneratedDataset:
        """First-cluster test set plus the shift; the same draws for every shift and severity."""
        shift_type = self.config.shift_type if shift_type is None else shift_type
        severity = self.config.severity if severity is None else severity
        n = self.config.n_test if n is None else n
        delta = gen_shift(shift_type, severity, self.grid).values
        rng = self.stream("test")
        labels = np.ones(n, dtype=int)
        x, sig = self._draw(rng, labels)
        y = sig + self._noise(rng, n) + delta
        return GeneratedDataset(x, CurveSample(self.grid, y), labels, "test", shift_type, float(severity),
                                np.full(n, severity > 0))


def gen_dataset(config: SimConfig) -> tuple[GeneratedDataset, GeneratedDataset, GeneratedDataset]:
    """Training, tuning and first-cluster test sets of one configuration."""
    sim = Simulator(config)
    return sim.train(), sim.tune(), sim.oc_test()


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, seed=int(seed))
