import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fmrcc.curves import CurveSample, DiscreteCurve, Grid, ScalingModel
from fmrcc.errors import DataError
from fmrcc.fpca import (
    FpcaModel,
    ScalarScaling,
    assemble_design,
    design_matrix,
    estimate_covariance,
    fit_fpca,
    fit_functional,
    project_scores,
    reconstruct,
    retained_count,
)
from fmrcc.simgen import gen_covariates, kernel_eigen, powered_exponential

GRID = Grid.uniform(101)


def _smooth_sample(rng, n=60, grid=GRID, rank=6):
    t = grid.points
    basis = np.array([np.sin((j + 1) * np.pi * t) for j in range(rank)])
    coef = rng.normal(size=(n, rank)) / (1 + np.arange(rank))
    return CurveSample(grid, coef @ basis)


def _gram(model):
    F = model.eigenfunctions
    return (F * model.weights) @ F.T


# ---------------------------------------------------------------- covariance


def test_covariance_identical_curves_is_zero():
    vals = np.tile(np.sin(GRID.points), (5, 1))
    np.testing.assert_allclose(estimate_covariance(CurveSample(GRID, vals)), 0.0, atol=1e-15)


def test_covariance_antithetic_pair_closed_form():
    f = np.cos(3 * GRID.points) + GRID.points
    cov = estimate_covariance(CurveSample(GRID, np.vstack([f, -f])))
    np.testing.assert_allclose(cov, np.outer(f, f) * 2 / (2 - 1), rtol=1e-13)


def test_covariance_needs_two_observations():
    with pytest.raises(DataError):
        estimate_covariance(CurveSample(GRID, np.ones((1, len(GRID)))))


def test_covariance_matches_generator_kernel():
    grid = Grid.uniform(100)
    x = gen_covariates(kernel_eigen(grid), 1000, seed=3)
    cov = estimate_covariance(x)
    true = powered_exponential(np.abs(grid.points[:, None] - grid.points[None, :]))
    assert np.linalg.norm(cov - true) < 0.15 * np.linalg.norm(true)


def test_multivariate_covariance_blocks(rng):
    a, b = _smooth_sample(rng), _smooth_sample(rng)
    cov = estimate_covariance([a, b])
    n = len(GRID)
    cross = ((a.values - a.values.mean(0)).T @ (b.values - b.values.mean(0))) / (len(a) - 1)
    np.testing.assert_allclose(cov[:n, n:], cross, atol=1e-13)
    np.testing.assert_allclose(cov[n:, :n], cross.T, atol=1e-13)


# ---------------------------------------------------------------- fit_fpca


def test_rank_one_sample_keeps_one_component(rng):
    shape = np.exp(-GRID.points) * np.sin(4 * GRID.points)
    model = fit_fpca(CurveSample(GRID, rng.normal(size=(30, 1)) * shape), 0.95)
    assert model.retained == 1
    assert model.fve[0] == pytest.approx(1.0, abs=1e-10)


def test_fve_rule_smallest_count_reaching_target(rng):
    model = fit_fpca(_smooth_sample(rng), 0.95)
    fve = model.fve
    assert fve[model.retained - 1] >= 0.95
    if model.retained > 1:
        assert fve[model.retained - 2] < 0.95


def test_retained_count_boundary_cases():
    vals = np.array([5.0, 3.0, 2.0])
    assert retained_count(vals, 0.5) == 1
    assert retained_count(vals, 0.8) == 2
    assert retained_count(vals, 0.81) == 3
    assert retained_count(vals, 1.0) == 3


def test_invalid_fve_target(rng):
    with pytest.raises(ValueError):
        fit_fpca(_smooth_sample(rng), 0.0)
    with pytest.raises(ValueError):
        fit_fpca(_smooth_sample(rng), 1.5)


def test_zero_covariance_is_degenerate():
    with pytest.raises(DataError):
        fit_fpca(CurveSample(GRID, np.zeros((4, len(GRID)))), 0.9)


def test_eigenvalues_match_dense_nonsymmetric_oracle():
    # simulated response-like curves, n = 1200
    grid = Grid.uniform(120)
    x = gen_covariates(kernel_eigen(grid), 1200, seed=11)
    y = CurveSample(grid, x.values + 0.3 * x.values ** 2)
    model = fit_fpca(y, 0.95)
    # independent route: eigenvalues of C W, a non-symmetric matrix
    cov = np.cov(y.values, rowvar=False)
    oracle = np.sort(np.linalg.eigvals(cov * grid.weights[None, :]).real)[::-1]
    np.testing.assert_allclose(model.eigenvalues, oracle[: model.retained], rtol=1e-8)


def test_eigenfunctions_orthonormal_and_nonincreasing(rng):
    model = fit_fpca(_smooth_sample(rng), 0.999)
    np.testing.assert_allclose(_gram(model), np.eye(model.retained), atol=1e-6)
    assert np.all(np.diff(model.eigenvalues) <= 0)
    assert np.all(model.eigenvalues >= 0)


def test_sign_convention_largest_entry_positive(rng):
    model = fit_fpca(_smooth_sample(rng), 0.99)
    for f in model.eigenfunctions:
        assert f[np.argmax(np.abs(f))] > 0


def test_multivariate_orthonormal_under_joint_weights(rng):
    other = Grid.uniform(51, 0.0, 2.0)
    a = _smooth_sample(rng)
    b = _smooth_sample(rng, grid=other)
    model = fit_fpca([a, b], 0.99)
    assert model.eigenfunctions.shape[1] == len(GRID) + len(other)
    np.testing.assert_allclose(_gram(model), np.eye(model.retained), atol=1e-6)
    parts = model.eigenfunction(0)
    assert parts[0].grid == GRID and parts[1].grid == other


def test_generator_eigenvalues_converge_toward_kernel():
    grid = Grid.uniform(100)
    eig = kernel_eigen(grid)
    errs = []
    for n in (100, 2000):
        model = fit_fpca(gen_covariates(eig, n, seed=5), 0.99)
        errs.append(np.abs(model.eigenvalues[:3] - eig.eigenvalues[:3]).sum())
    assert errs[1] < errs[0]


# ---------------------------------------------------------------- scores


@pytest.fixture
def model(rng):
    return fit_fpca(_smooth_sample(rng), 0.99)


def test_score_of_first_eigenfunction_is_unit(model):
    scores = project_scores(model, model.eigenfunctions[0])
    expected = np.zeros(model.retained)
    expected[0] = 1.0
    np.testing.assert_allclose(scores, expected, atol=1e-6)


def test_zero_observation_zero_scores(model):
    np.testing.assert_array_equal(project_scores(model, DiscreteCurve(GRID, np.zeros(len(GRID)))), 0.0)


def test_scores_are_weighted_inner_products(model, rng):
    obs = rng.normal(size=len(GRID))
    oracle = [np.trapezoid(obs * f, GRID.points) for f in model.eigenfunctions]
    np.testing.assert_allclose(project_scores(model, obs), oracle, rtol=1e-12, atol=1e-12)


def test_score_grid_mismatch(model):
    with pytest.raises(DataError):
        project_scores(model, DiscreteCurve(Grid.uniform(50), np.zeros(50)))
    with pytest.raises(DataError):
        project_scores(model, np.zeros(7))


def test_training_scores_nearly_uncorrelated():
    grid = Grid.uniform(100)
    x = gen_covariates(kernel_eigen(grid), 800, seed=2)
    model, scores = fit_functional(x, 0.95)
    emp = np.cov(scores, rowvar=False)
    off = emp - np.diag(np.diag(emp))
    assert np.abs(off).max() < 0.05 * model.eigenvalues.max()
    np.testing.assert_allclose(np.diag(emp), model.eigenvalues, rtol=1e-8)


def test_reconstruct_trivial_cases(model):
    np.testing.assert_array_equal(reconstruct(model, np.zeros(model.retained)), 0.0)
    e = np.zeros(model.retained)
    e[-1] = 1.0
    np.testing.assert_array_equal(reconstruct(model, e), model.eigenfunctions[-1])
    with pytest.raises(DataError):
        reconstruct(model, np.zeros(model.retained + 1))


def test_reconstruction_error_energy_bookkeeping(rng):
    sample = _smooth_sample(rng, rank=8)
    full = fit_fpca(sample, 1.0)
    obs = sample.values[0] - sample.values.mean(0)
    xi = project_scores(full, obs)
    resid_norm = np.sum(GRID.weights * obs ** 2) - np.sum(xi ** 2)
    errors = []
    for L in range(1, full.retained + 1):
        sub = FpcaModel(full.scaling, full.eigenfunctions[:L], full.eigenvalues[:L], full.all_eigenvalues, 1.0)
        rec = reconstruct(sub, project_scores(sub, obs))
        err = np.sum(GRID.weights * (obs - rec) ** 2)
        assert err == pytest.approx(np.sum(xi[L:] ** 2) + resid_norm, rel=1e-8, abs=1e-10)
        errors.append(err)
    assert np.all(np.diff(errors) <= 1e-12)


@given(arrays(np.float64, 101, elements=st.floats(-50, 50, allow_nan=False)))
def test_reconstruction_is_contraction(obs):
    model = _CONTRACTION_MODEL
    rec = reconstruct(model, project_scores(model, obs))
    norm = np.sum(GRID.weights * obs ** 2)
    assert np.sum(GRID.weights * (obs - rec) ** 2) <= norm * (1 + 1e-9) + 1e-12


_CONTRACTION_MODEL = fit_fpca(_smooth_sample(np.random.default_rng(0)), 0.99)


def test_model_dict_round_trip(rng):
    model, _ = fit_functional(_smooth_sample(rng), 0.9)
    back = FpcaModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(back.eigenfunctions, model.eigenfunctions)
    np.testing.assert_array_equal(back.eigenvalues, model.eigenvalues)
    np.testing.assert_array_equal(back.scaling.scale_curves[0].values, model.scaling.scale_curves[0].values)
    assert back.retained == model.retained and back.fve_target == 0.9


def test_raw_scores_standardize_first(rng):
    raw = CurveSample(GRID, 5 + 3 * _smooth_sample(rng).values)
    model, train_scores = fit_functional(raw, 0.95)
    np.testing.assert_allclose(model.scores(raw), train_scores, atol=1e-12)
    np.testing.assert_allclose(train_scores.mean(0), 0.0, atol=1e-10)


# ---------------------------------------------------------------- design


def test_design_trivial_cases():
    np.testing.assert_array_equal(assemble_design(), [1.0])
    np.testing.assert_array_equal(assemble_design([2, -1], [0.5]), [1, 2, -1, 0.5])
    with pytest.raises(ValueError):
        assemble_design([np.nan])
    with pytest.raises(ValueError):
        assemble_design([1.0], [np.inf])


def test_design_matrix_pipeline_length(rng):
    model, scores = fit_functional(_smooth_sample(rng), 0.95)
    X = design_matrix(scores)
    assert X.shape == (60, 1 + model.retained)
    np.testing.assert_array_equal(X[:, 0], 1.0)
    np.testing.assert_array_equal(design_matrix(n=3), np.ones((3, 1)))
    with pytest.raises(DataError):
        design_matrix(scores, np.zeros((3, 1)))


def test_scalar_scaling(rng):
    z = rng.normal(4.0, 2.0, size=(50, 2))
    z[:, 1] = 7.0
    sc = ScalarScaling.fit(z)
    out = sc.apply(z)
    np.testing.assert_allclose(out[:, 0].mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(out[:, 0].std(ddof=1), 1.0)
    np.testing.assert_array_equal(out[:, 1], 0.0)
    back = ScalarScaling.from_dict(sc.to_dict())
    np.testing.assert_array_equal(back.apply(z), out)
