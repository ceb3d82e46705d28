import json
import math
import pathlib

import numpy as np
import pytest
from scipy import special
from hypothesis import given, settings
from hypothesis import strategies as st

from jointreg.numerics import (
    OptimizerConfig,
    bvn_cdf,
    bvn_logcdf,
    maximize,
    mills_conditional,
    norm_cdf,
    norm_pdf,
    numeric_gradient,
)
from oracles.reference import std_normal_cdf

DATA = pathlib.Path(__file__).parent / "data"

# values frozen from mpmath at 30 digits
PHI_1_96 = 0.975002104851779563787
PDF_0 = 0.3989422804014327
PDF_2 = 0.05399096651318805
MILLS_2_HALF = 1.18660776641142043
MILLS_0_ONE = 0.797884560802865356

finite = st.floats(-8, 8, allow_nan=False)
corr = st.floats(-0.999, 0.999)


class TestNormPdf:
    def test_values(self):
        assert norm_pdf(0.0) == pytest.approx(PDF_0, abs=1e-15)
        assert norm_pdf(2.0) == pytest.approx(PDF_2, abs=1e-15)

    def test_symmetric(self):
        assert norm_pdf(1.0) == norm_pdf(-1.0)

    @pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
    def test_rejects_nonfinite(self, bad):
        with pytest.raises(ValueError):
            norm_pdf(bad)

    @given(finite)
    def test_positive(self, x):
        assert norm_pdf(x) > 0


class TestNormCdf:
    def test_values(self):
        assert norm_cdf(0.0) == 0.5
        assert norm_cdf(math.inf) == 1.0
        assert norm_cdf(-math.inf) == 0.0
        assert norm_cdf(1.96) == pytest.approx(PHI_1_96, abs=1e-14)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            norm_cdf(math.nan)

    @given(finite)
    def test_against_erfc(self, x):
        assert abs(norm_cdf(x) - std_normal_cdf(x)) <= 1e-12

    @given(finite)
    def test_reflection(self, x):
        assert norm_cdf(x) + norm_cdf(-x) == pytest.approx(1.0, abs=1e-15)

    def test_monotone(self):
        x = np.linspace(-10, 10, 4001)
        assert np.all(np.diff(norm_cdf(x)) >= 0)


class TestBvnCdf:
    def test_independent_origin(self):
        assert bvn_cdf(0.0, 0.0, 0.0) == pytest.approx(0.25, abs=1e-15)

    def test_sheppard(self):
        assert bvn_cdf(0.0, 0.0, 0.5) == pytest.approx(0.25 + math.asin(0.5) / (2 * math.pi), abs=1e-14)

    @pytest.mark.parametrize("rho", [-0.99, -0.5, 0.0, 0.3, 0.95])
    @pytest.mark.parametrize("x", [-3.0, -0.2, 0.0, 1.7])
    def test_marginal_limit(self, x, rho):
        assert bvn_cdf(x, math.inf, rho) == pytest.approx(norm_cdf(x), abs=1e-15)
        assert bvn_cdf(math.inf, x, rho) == pytest.approx(norm_cdf(x), abs=1e-15)
        assert bvn_cdf(x, -math.inf, rho) == 0.0

    def test_degenerate_correlation_limits(self):
        assert bvn_cdf(0.3, -0.4, 1.0) == pytest.approx(norm_cdf(-0.4), abs=1e-15)
        assert bvn_cdf(0.3, -0.4, -1.0) == pytest.approx(max(0.0, norm_cdf(0.3) + norm_cdf(-0.4) - 1), abs=1e-15)
        assert bvn_cdf(0.5, 0.2, -1.0) == pytest.approx(norm_cdf(0.5) + norm_cdf(0.2) - 1, abs=1e-15)

    @pytest.mark.parametrize("rho", [1.0001, -1.5, math.nan])
    def test_rejects_bad_rho(self, rho):
        with pytest.raises(ValueError):
            bvn_cdf(0.0, 0.0, rho)

    def test_quadrature_grid(self):
        pts = json.loads((DATA / "bvn_grid_oracle.json").read_text())["points"]
        a = np.array([[p["x1"], p["x2"], p["rho"], p["p"]] for p in pts])
        err = np.abs(bvn_cdf(a[:, 0], a[:, 1], a[:, 2]) - a[:, 3])
        assert err.max() <= 1e-7

    def test_product_at_zero_correlation(self):
        g = np.linspace(-4, 4, 33)
        X1, X2 = np.meshgrid(g, g)
        np.testing.assert_allclose(bvn_cdf(X1, X2, 0.0), norm_cdf(X1) * norm_cdf(X2), atol=1e-9, rtol=0)

    @given(finite, finite, corr)
    def test_symmetric(self, a, b, r):
        assert bvn_cdf(a, b, r) == bvn_cdf(b, a, r)

    @given(finite, finite, corr)
    def test_quadrant_identity(self, a, b, r):
        lhs = bvn_cdf(a, b, r) - norm_cdf(a) - norm_cdf(b) + 1.0
        assert lhs == pytest.approx(bvn_cdf(-a, -b, r), abs=1e-9)

    @given(finite, finite, corr)
    def test_in_unit_interval(self, a, b, r):
        assert 0.0 <= bvn_cdf(a, b, r) <= 1.0

    def test_monotone_on_grid(self):
        g = np.linspace(-4, 4, 41)
        rhos = np.linspace(-0.99, 0.99, 45)
        for r in rhos[::4]:
            P = bvn_cdf(g[:, None], g[None, :], r)
            assert np.all(np.diff(P, axis=0) >= -1e-15)
            assert np.all(np.diff(P, axis=1) >= -1e-15)
        for a in g[::5]:
            for b in g[::5]:
                assert np.all(np.diff(bvn_cdf(a, b, rhos)) >= -1e-15)

    def test_broadcasting_and_scalar_return(self):
        assert isinstance(bvn_cdf(0.1, 0.2, 0.3), float)
        assert bvn_cdf(np.zeros((3, 1)), np.zeros(4), 0.2).shape == (3, 4)


class TestBvnLogCdf:
    def test_tail_oracle(self):
        pts = json.loads((DATA / "bvn_tail_oracle.json").read_text())["points"]
        a = np.array([[p["x1"], p["x2"], p["rho"], p["logp"]] for p in pts])
        got = bvn_logcdf(a[:, 0], a[:, 1], a[:, 2])
        np.testing.assert_allclose(got, a[:, 3], rtol=1e-11, atol=0)

    def test_bulk_matches_log_of_cdf(self):
        g = np.linspace(-3, 3, 13)
        for r in (-0.9, -0.3, 0.4, 0.97):
            P = bvn_cdf(g[:, None], g[None, :], r)
            keep = P >= 1e-6
            got = bvn_logcdf(g[:, None], g[None, :], r)[keep]
            np.testing.assert_allclose(got, np.log(P[keep]), rtol=1e-12, atol=0)

    def test_agrees_with_cdf_across_tail_switch(self):
        # just below the switch the plain CDF still has ~10 good digits
        x = np.linspace(-4.5, 0.0, 901)
        for r in (-0.6, 0.3):
            P = bvn_cdf(x, x, r)
            band = (P > 1e-8) & (P < 1e-5)
            assert band.sum() > 10
            np.testing.assert_allclose(bvn_logcdf(x, x, r)[band], np.log(P[band]), rtol=1e-9, atol=0)
            assert np.all(np.diff(bvn_logcdf(x, x, r)) > 0)

    def test_special_cases(self):
        assert bvn_logcdf(-30.0, -30.0, 0.0) == pytest.approx(2 * float(special.log_ndtr(-30.0)), rel=1e-14)
        assert bvn_logcdf(-30.0, math.inf, 0.5) == pytest.approx(float(special.log_ndtr(-30.0)), rel=1e-14)
        assert bvn_logcdf(-30.0, -20.0, 1.0) == pytest.approx(float(special.log_ndtr(-30.0)), rel=1e-14)

    @given(st.floats(-12, 0), st.floats(-12, 0), st.floats(-0.98, 0.98))
    @settings(max_examples=60, deadline=None)
    def test_finite_and_below_marginals(self, a, b, r):
        v = bvn_logcdf(a, b, r)
        assert math.isfinite(v)
        assert v <= min(special.log_ndtr(a), special.log_ndtr(b)) + 1e-12

    def test_scalar_and_shape(self):
        assert isinstance(bvn_logcdf(-5.0, -5.0, 0.3), float)
        assert bvn_logcdf(np.full((2, 1), -6.0), np.full(3, -6.0), -0.2).shape == (2, 3)


class TestMills:
    def test_values(self):
        assert mills_conditional(0.0, 1.0) == pytest.approx(MILLS_0_ONE, abs=1e-14)
        assert mills_conditional(0.0, 1.0) == pytest.approx(norm_pdf(0.0) / 0.5, abs=1e-15)
        assert mills_conditional(2.0, 0.5) == pytest.approx(MILLS_2_HALF, abs=1e-13)

    @given(finite)
    def test_zero_correlation(self, z):
        assert mills_conditional(z, 0.0) == 0.0

    def test_large_argument_stays_finite(self):
        # hazard ~ z for large z
        v = mills_conditional(60.0, 1.0)
        assert math.isfinite(v)
        assert v == pytest.approx(60.0, rel=1e-3)

    def test_increasing_in_z(self):
        z = np.linspace(-5, 5, 1001)
        for r in (0.1, 0.5, 1.0):
            assert np.all(np.diff(mills_conditional(z, r)) > 0)

    def test_rejects_bad_rho(self):
        with pytest.raises(ValueError):
            mills_conditional(0.0, 1.2)


class TestOptimizerConfig:
    @pytest.mark.parametrize("kw", [
        {"max_iterations": 0},
        {"gradient_tolerance": 0.0},
        {"step_tolerance": -1.0},
        {"finite_difference_step": 0.0},
    ])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            OptimizerConfig(**kw)


class TestMaximize:
    def test_scalar_quadratic(self):
        res = maximize(lambda b: -(b[0] - 3.0) ** 2, [0.0])
        assert res.converged
        assert res.argmax[0] == pytest.approx(3.0, abs=1e-6)

    def test_separable_quadratic(self):
        c = np.array([1.0, -2.0, 0.5, 4.0, -3.0])
        res = maximize(lambda b: -np.sum((b - c) ** 2), np.zeros(5))
        np.testing.assert_allclose(res.argmax, c, atol=1e-6)

    def test_converged_implies_small_gradient(self):
        cfg = OptimizerConfig(gradient_tolerance=1e-8)
        res = maximize(lambda b: -np.sum((b - 1) ** 4) - np.sum(b ** 2), np.zeros(3), cfg)
        assert not res.converged or res.gradient_norm <= cfg.gradient_tolerance

    def test_iteration_cap_returns_instead_of_raising(self):
        rosen = lambda x: -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)
        res = maximize(rosen, [-1.2, 1.0], OptimizerConfig(max_iterations=2))
        assert not res.converged
        assert res.iterations <= 2
        assert res.value >= rosen(np.array([-1.2, 1.0]))

    def test_rosenbrock(self):
        rosen = lambda x: -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)
        res = maximize(rosen, [-1.2, 1.0])
        assert res.converged
        np.testing.assert_allclose(res.argmax, [1.0, 1.0], atol=1e-5)

    def test_nonfinite_region_is_backtracked(self):
        # log barrier: undefined for x <= 0
        f = lambda x: math.log(x[0]) - x[0] if x[0] > 0 else -math.inf
        res = maximize(f, [10.0])
        assert res.converged
        assert res.argmax[0] == pytest.approx(1.0, abs=1e-6)

    def test_nonfinite_start_rejected(self):
        with pytest.raises(ValueError):
            maximize(lambda x: math.nan, [0.0])

    def test_random_concave_quadratics(self):
        # each trial: f(x) = -(x-c)' A (x-c) / 2 with A SPD
        hits = 0
        trials = 1000
        for s in range(trials):
            g = np.random.default_rng(s)
            d = int(g.integers(1, 7))
            M = g.standard_normal((d, d))
            A = M @ M.T + 0.1 * np.eye(d)
            c = g.normal(scale=3.0, size=d)
            res = maximize(lambda x: -0.5 * (x - c) @ A @ (x - c), np.zeros(d),
                           gradient=lambda x: -A @ (x - c))
            hits += bool(np.max(np.abs(res.argmax - c)) <= 1e-6)
        assert hits >= 0.99 * trials

    def test_numeric_gradient(self):
        f = lambda x: math.sin(x[0]) * x[1] ** 2
        x = np.array([0.7, -1.3])
        exact = np.array([math.cos(0.7) * 1.69, 2 * math.sin(0.7) * -1.3])
        np.testing.assert_allclose(numeric_gradient(f, x), exact, rtol=1e-8)
