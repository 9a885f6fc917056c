import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.interpolate import BSpline

from fmrcc.curves import (
    BasisSpec,
    CurveSample,
    DiscreteCurve,
    Grid,
    ScalingModel,
    apply_scaling,
    eval_basis,
    fit_smoother,
    inner_product,
    invert_scaling,
    penalty_matrix,
    read_curves_csv,
    select_penalty_gcv,
    smooth_penalized,
    standardize_sample,
    write_curves_csv,
)
from fmrcc.errors import DataError, RankDeficientError

from oracles import cox_de_boor, simpson

GRID = Grid.uniform(101)
CUBIC = BasisSpec.uniform((0.0, 1.0), 12, 3)


class TestGrid:
    def test_rejects_short_or_unsorted(self):
        with pytest.raises(DataError):
            Grid([0, 1, 2])
        with pytest.raises(DataError):
            Grid([0, 2, 1, 3])
        with pytest.raises(DataError):
            Grid([0, 1, np.nan, 3])

    def test_trapezoid_weights_sum_to_length(self):
        g = Grid(np.sort(np.random.default_rng(0).uniform(0, 3, 40)))
        assert g.weights.sum() == pytest.approx(g.points[-1] - g.points[0], rel=1e-14)

    def test_curve_length_mismatch(self):
        with pytest.raises(DataError):
            DiscreteCurve(GRID, np.zeros(5))


class TestEvalBasis:
    def test_partition_of_unity(self):
        B = eval_basis(CUBIC, GRID)
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
        assert B.shape == (101, 12)

    def test_degree_zero_indicator(self):
        spec = BasisSpec(2, 0, [0.0, 0.5, 1.0])
        B = eval_basis(spec, Grid([0.1, 0.25, 0.6, 0.9]))
        np.testing.assert_array_equal(B[1], [1.0, 0.0])

    def test_matches_cox_de_boor(self):
        rng = np.random.default_rng(1)
        pts = np.sort(rng.uniform(0, 1, 30))
        B = eval_basis(CUBIC, Grid(pts))
        ref = np.array([[cox_de_boor(CUBIC.knots, 3, i, x) for i in range(CUBIC.n_basis)] for x in pts])
        np.testing.assert_allclose(B, ref, atol=1e-12)

    def test_outside_domain(self):
        spec = BasisSpec.uniform((0.2, 0.8), 8, 3)
        with pytest.raises(DataError):
            eval_basis(spec, GRID)

    def test_knot_invariants(self):
        k = CUBIC.knots
        assert k.size == CUBIC.n_basis + 4
        assert np.all(k[:4] == 0) and np.all(k[-4:] == 1)
        with pytest.raises(DataError):
            BasisSpec(5, 3, np.linspace(0, 1, 8))


def test_penalty_matrix_matches_fine_simpson():
    # independent check: integrate products of exact second derivatives with Simpson on a fine grid
    x = np.linspace(0, 1, 20001)
    d2 = BSpline(CUBIC.knots, np.eye(CUBIC.n_basis), 3).derivative(2)(x)
    ref = np.array([[simpson(d2[:, i] * d2[:, j], x) for j in range(12)] for i in range(12)])
    np.testing.assert_allclose(penalty_matrix(CUBIC), ref, rtol=1e-6, atol=1e-6 * np.abs(ref).max())


class TestSmoothing:
    @pytest.mark.parametrize("lam", [0.0, 1e-6, 1.0, 1e4])
    def test_constant_and_linear_reproduced(self, lam):
        for values in (np.full(101, 3.7), 2 * GRID.points):
            fit = smooth_penalized(DiscreteCurve(GRID, values), CUBIC, lam).evaluate(GRID)
            np.testing.assert_allclose(fit.values, values, atol=1e-8)

    def test_rank_error_at_zero_penalty(self):
        g = Grid.uniform(6)
        with pytest.raises(RankDeficientError):
            smooth_penalized(DiscreteCurve(g, np.arange(6.0)), CUBIC, 0.0)
        # a positive penalty regularizes the same problem
        smooth_penalized(DiscreteCurve(g, np.arange(6.0)), CUBIC, 1e-3)

    def _noisy_sine(self, n=500, seed=2):
        rng = np.random.default_rng(seed)
        g = Grid.uniform(n)
        return DiscreteCurve(g, np.sin(2 * np.pi * g.points) + 0.2 * rng.standard_normal(n))

    def test_gcv_choice_fits_better_than_much_larger_penalty(self):
        curve = self._noisy_sine()
        spec = BasisSpec.uniform((0, 1), 40, 3)
        lam = select_penalty_gcv(curve, spec)
        rss = lambda p: np.sum((smooth_penalized(curve, spec, p).evaluate(curve.grid).values - curve.values) ** 2)
        assert rss(lam) < rss(1e3 * lam)

    def test_gcv_matches_brute_force_scan(self):
        rng = np.random.default_rng(3)
        g = Grid.uniform(200)
        y = (g.points - 0.3) ** 2 + 0.05 * rng.standard_normal(200)
        spec = BasisSpec.uniform((0, 1), 25, 3)
        cands = 10.0 ** np.arange(-8, 5)
        # dense hat matrix oracle
        Phi = np.array([[cox_de_boor(spec.knots, 3, i, x) for i in range(25)] for x in g.points])
        P = penalty_matrix(spec)
        scores = []
        for lam in cands:
            H = Phi @ np.linalg.inv(Phi.T @ Phi + lam * P) @ Phi.T
            r = y - H @ y
            scores.append(200 * (r @ r) / (200 - np.trace(H)) ** 2)
        assert select_penalty_gcv(DiscreteCurve(g, y), spec, cands) == cands[int(np.argmin(scores))]

    def test_gcv_noiseless_linear_takes_largest(self):
        cands = [1e-4, 1e-2, 1.0, 100.0]
        assert select_penalty_gcv(DiscreteCurve(GRID, 1 - 3 * GRID.points), CUBIC, cands) == 100.0

    def test_single_and_empty_candidates(self):
        curve = self._noisy_sine(101)
        assert select_penalty_gcv(curve, CUBIC, [0.5]) == 0.5
        with pytest.raises(ValueError):
            select_penalty_gcv(curve, CUBIC, [])

    def test_fit_smoother_pooled(self):
        rng = np.random.default_rng(4)
        g = Grid.uniform(120)
        clean = np.sin(np.outer(rng.uniform(1, 3, 8), g.points))
        s = fit_smoother(CurveSample(g, clean + 0.05 * rng.standard_normal(clean.shape)), n_basis=20)
        out = s.apply(CurveSample(g, clean + 0.05 * rng.standard_normal(clean.shape)))
        assert np.sqrt(np.mean((out.values - clean) ** 2)) < 0.04
        restored = type(s).from_dict(s.to_dict())
        assert restored.penalty == s.penalty and restored.basis.n_basis == 20


class TestStandardize:
    def test_identical_curves_engage_floor(self):
        c = np.sin(GRID.points)
        out, model = standardize_sample([CurveSample(GRID, np.tile(c, (5, 1)))])
        assert model.floor_engaged == (True,)
        np.testing.assert_allclose(out[0].values, 0.0, atol=1e-12)

    def test_restandardize_is_idempotent(self, rng):
        once, _ = standardize_sample([CurveSample(GRID, rng.standard_normal((30, 101)) * 3 + 1)])
        twice, _ = standardize_sample(once)
        np.testing.assert_allclose(twice[0].values.var(axis=0, ddof=1), 1.0, atol=1e-10)

    def test_simulated_covariate_mean(self):
        from fmrcc.simgen import gen_covariates, kernel_eigen

        g = Grid.uniform(200)
        x = gen_covariates(kernel_eigen(g), 200, 7)
        out, _ = standardize_sample([x])
        assert np.all(np.abs(out[0].values.mean(axis=0)) < 3 / np.sqrt(200))
        np.testing.assert_allclose(out[0].values.var(axis=0, ddof=1), 1.0, atol=1e-8)

    def test_apply_scaling_examples(self, rng):
        x = CurveSample(GRID, rng.standard_normal((20, 101)))
        _, model = standardize_sample([x])
        mu, sd = model.mean_curves[0], model.scale_curves[0]
        np.testing.assert_allclose(apply_scaling(model, mu).values, 0.0, atol=1e-15)
        np.testing.assert_allclose(apply_scaling(model, DiscreteCurve(GRID, mu.values + sd.values)).values, 1.0,
                                   atol=1e-12)
        new = DiscreteCurve(GRID, rng.standard_normal(101))
        np.testing.assert_allclose(invert_scaling(model, apply_scaling(model, new)).values, new.values, atol=1e-12)
        with pytest.raises(DataError):
            apply_scaling(model, DiscreteCurve(Grid.uniform(50), np.zeros(50)))

    def test_scaling_model_round_trip(self, rng):
        _, model = standardize_sample([CurveSample(GRID, rng.standard_normal((5, 101)))])
        back = ScalingModel.from_dict(model.to_dict())
        np.testing.assert_array_equal(back.scale_curves[0].values, model.scale_curves[0].values)


class TestInnerProduct:
    def test_examples(self):
        g = Grid.uniform(500)
        one = DiscreteCurve(g, np.ones(500))
        assert inner_product(one, one) == pytest.approx(1.0, abs=1e-14)
        assert abs(inner_product(one, DiscreteCurve(g, np.sin(2 * np.pi * g.points)))) < 1e-6

    def test_simpson_oracle(self, rng):
        g = Grid.uniform(501)
        t = g.points
        f = np.sin(3 * t + rng.uniform()) + t**2
        h = np.cos(5 * t) * rng.uniform(1, 2)
        assert inner_product(DiscreteCurve(g, f), DiscreteCurve(g, h)) == pytest.approx(simpson(f * h, t), abs=1e-4)

    def test_grid_mismatch(self):
        with pytest.raises(DataError):
            inner_product(DiscreteCurve(GRID, np.ones(101)), DiscreteCurve(Grid.uniform(5), np.ones(5)))


vec = arrays(np.float64, 101, elements=st.floats(-1e3, 1e3, allow_nan=False))
coef = st.floats(-1e3, 1e3, allow_nan=False)


@given(vec, vec, vec, coef, coef)
def test_inner_product_bilinear_symmetric(f, g, h, a, b):
    F, G, H = (DiscreteCurve(GRID, v) for v in (f, g, h))
    assert inner_product(F, G) == inner_product(G, F)
    lhs = inner_product(DiscreteCurve(GRID, a * f + b * g), H)
    rhs = a * inner_product(F, H) + b * inner_product(G, H)
    # rounding bound of a weighted sum of 101 products
    bound = 1e-13 * np.sum(GRID.weights * (np.abs(a * f) + np.abs(b * g)) * np.abs(h)) + 1e-300
    assert abs(lhs - rhs) <= bound


@given(st.floats(-100, 100), st.floats(-100, 100), st.sampled_from([0.0, 1e-3, 1.0, 1e3]))
def test_affine_reproduction_property(a, b, lam):
    values = a + b * GRID.points
    fit = smooth_penalized(DiscreteCurve(GRID, values), CUBIC, lam).evaluate(GRID)
    np.testing.assert_allclose(fit.values, values, atol=1e-8 * max(1.0, abs(a) + abs(b)))


@given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=20))
def test_partition_of_unity_property(xs):
    pts = np.unique(np.concatenate([[0.0, 0.0005, 0.9995, 1.0], xs]))
    np.testing.assert_allclose(eval_basis(CUBIC, Grid(pts)).sum(axis=1), 1.0, atol=1e-12)


def test_curve_csv_round_trip(tmp_path, rng):
    s = CurveSample(GRID, rng.standard_normal((3, 101)))
    write_curves_csv(tmp_path / "c.csv", s)
    back = read_curves_csv(tmp_path / "c.csv")
    assert back.grid == GRID
    np.testing.assert_array_equal(back.values, s.values)
    (tmp_path / "e.csv").write_text(",".join(repr(float(v)) for v in GRID.points) + "\n")
    assert len(read_curves_csv(tmp_path / "e.csv")) == 0
    (tmp_path / "bad.csv").write_text("0,1,2,3\n1,2\n")
    with pytest.raises(DataError):
        read_curves_csv(tmp_path / "bad.csv")
