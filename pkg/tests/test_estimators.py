import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from jointreg.datamodel import DataError
from jointreg.estimators import (
    biprobit_loglik,
    biprobit_obs_loglik,
    biprobit_score,
    fit_biprobit,
    fit_ols,
    fit_probit,
    fit_sure,
    predict_probit,
    probit_loglik,
)
from jointreg.numerics import OptimizerConfig, bvn_cdf, maximize
from jointreg.synthetic import GeneratorSpec, gen_biprobit, gen_sure
from oracles.reference import normal_equations_mp, probit_fisher_scoring

PHI_INV_08413 = float(special.ndtri(0.8413))

# hand dataset: one observation per outcome quadrant
H_X1 = np.array([[0.5, 1.0], [-1.0, 1.0], [0.2, 1.0], [1.5, 1.0]])
H_X2 = np.array([[1.0, 1.0], [0.3, 1.0], [-0.7, 1.0], [-2.0, 1.0]])
H_Y1 = np.array([1.0, 1.0, 0.0, 0.0])
H_Y2 = np.array([1.0, 0.0, 1.0, 0.0])
H_PARAMS = np.array([0.4, -0.2, 0.8, 0.1, math.atanh(0.35)])


def probit_data(n, beta, seed):
    g = np.random.default_rng(seed)
    X = np.column_stack([g.standard_normal(n), np.ones(n)])
    y = (X @ beta + g.standard_normal(n) > 0).astype(float)
    return X, y


class TestOls:
    def test_exact_line(self):
        fit = fit_ols([[1, 1], [1, 2], [1, 3]], [1, 2, 3])
        np.testing.assert_allclose(fit.beta, [0, 1], atol=1e-14)
        assert fit.rss == pytest.approx(0.0, abs=1e-25)

    def test_noiseless(self, rng):
        X = rng.standard_normal((30, 4))
        c = np.array([1.5, -2.0, 0.25, 3.0])
        np.testing.assert_allclose(fit_ols(X, X @ c).beta, c, atol=1e-10)

    def test_against_extended_precision(self, rng):
        X = np.column_stack([rng.standard_normal((50, 2)), np.ones(50)])
        y = rng.standard_normal(50)
        np.testing.assert_allclose(fit_ols(X, y).beta, normal_equations_mp(X, y), atol=1e-8, rtol=0)

    def test_invariants(self, rng):
        X = rng.standard_normal((40, 3))
        y = rng.standard_normal(40)
        fit = fit_ols(X, y)
        assert np.max(np.abs(X.T @ fit.residuals)) <= 1e-8
        assert fit.rss == pytest.approx(fit.residuals @ fit.residuals, rel=1e-14)
        assert fit.sigma2 == pytest.approx(fit.rss / 37)
        np.testing.assert_allclose(fit.cov_beta, fit.sigma2 * np.linalg.inv(X.T @ X), rtol=1e-10)

    @given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3))
    def test_scale_equivariance(self, c):
        g = np.random.default_rng(5)
        X = np.column_stack([g.standard_normal(25), np.ones(25)])
        y = g.standard_normal(25)
        np.testing.assert_allclose(fit_ols(X, c * y).beta, c * fit_ols(X, y).beta, rtol=1e-12, atol=1e-12)

    def test_rank_deficient(self):
        X = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
        with pytest.raises(DataError):
            fit_ols(X, np.ones(5))


class TestProbit:
    def test_intercept_only_half(self):
        y = np.array([0.0, 1.0] * 50)
        fit = fit_probit(np.ones((100, 1)), y)
        assert fit.beta[0] == pytest.approx(0.0, abs=1e-8)

    def test_intercept_only_inversion(self):
        y = np.zeros(10000)
        y[:8413] = 1.0
        fit = fit_probit(np.ones((10000, 1)), y)
        assert fit.beta[0] == pytest.approx(PHI_INV_08413, abs=1e-7)
        assert fit.beta[0] == pytest.approx(1.0, abs=1e-3)

    def test_recovery_within_3se(self):
        beta = np.array([-1.0, 0.5])
        X, y = probit_data(10000, beta, seed=11)
        fit = fit_probit(X, y)
        assert fit.converged
        assert np.all(np.abs(fit.beta - beta) <= 3 * fit.se)

    def test_matches_fisher_scoring(self):
        X, y = probit_data(800, np.array([0.7, -0.3]), seed=2)
        X = np.column_stack([X, np.random.default_rng(3).uniform(size=800)])
        fit = fit_probit(X, y)
        np.testing.assert_allclose(fit.beta, probit_fisher_scoring(X, y), atol=1e-5)

    def test_fit_invariants(self):
        X, y = probit_data(500, np.array([0.4, 0.2]), seed=8)
        fit = fit_probit(X, y)
        assert fit.aic == pytest.approx(2 * fit.k - 2 * fit.loglik, abs=1e-10)
        assert np.array_equal(fit.cov_beta, fit.cov_beta.T)
        assert np.all(np.linalg.eigvalsh(fit.cov_beta) >= 0)
        assert fit.loglik == pytest.approx(probit_loglik(fit.beta, X, y), abs=1e-12)

    def test_perfect_separation(self):
        x = np.linspace(-2, 2, 40)
        X = np.column_stack([x, np.ones(40)])
        fit = fit_probit(X, (x > 0).astype(float))
        assert not fit.converged
        assert "separation" in fit.message

    def test_single_class(self):
        with pytest.raises(DataError):
            fit_probit(np.ones((10, 1)), np.ones(10))

    def test_nonbinary(self):
        with pytest.raises(DataError):
            fit_probit(np.ones((3, 1)), [0.0, 1.0, 2.0])


class TestPredict:
    def test_values(self):
        X, y = probit_data(200, np.array([0.5, 0.0]), seed=1)
        fit = fit_probit(X, y)
        fit.beta = np.zeros(2)
        np.testing.assert_array_equal(predict_probit(fit, X), 0.5)
        fit.beta = np.array([1.0, 0.0])
        assert predict_probit(fit, [[1.96, 1.0]])[0] == pytest.approx(0.9750021048517795, abs=1e-12)

    def test_monotone(self):
        X, y = probit_data(300, np.array([0.8, 0.1]), seed=4)
        fit = fit_probit(X, y)
        grid = np.column_stack([np.linspace(-3, 3, 50), np.ones(50)])
        assert np.all(np.diff(predict_probit(fit, grid)) > 0)

    def test_dimension_mismatch(self):
        X, y = probit_data(100, np.array([0.8, 0.1]), seed=4)
        with pytest.raises(ValueError):
            predict_probit(fit_probit(X, y), np.ones((3, 3)))


class TestBiprobitLoglik:
    def test_hand_terms(self):
        b1, b2, r = H_PARAMS[:2], H_PARAMS[2:4], math.tanh(H_PARAMS[4])
        terms = []
        for i in range(4):
            q1, q2 = 2 * H_Y1[i] - 1, 2 * H_Y2[i] - 1
            terms.append(math.log(bvn_cdf(q1 * H_X1[i] @ b1, q2 * H_X2[i] @ b2, q1 * q2 * r)))
        assert biprobit_loglik(H_PARAMS, H_X1, H_Y1, H_X2, H_Y2) == pytest.approx(sum(terms), abs=1e-9)

    def test_each_observation_one_quadrant(self):
        obs = biprobit_obs_loglik(H_PARAMS, H_X1, H_Y1, H_X2, H_Y2)
        # flipping both outcomes of an observation moves it to the opposite quadrant
        total = 0.0
        for yy1, yy2 in [(1, 1), (1, 0), (0, 1), (0, 0)]:
            total += np.exp(biprobit_obs_loglik(H_PARAMS, H_X1, np.full(4, yy1), H_X2, np.full(4, yy2)))
        np.testing.assert_allclose(total, 1.0, atol=1e-12)
        assert obs.shape == (4,)

    def test_all_ones_at_zero(self):
        n = 7
        X = np.ones((n, 1))
        ll = biprobit_loglik(np.zeros(3), X, np.ones(n), X, np.ones(n))
        assert ll == pytest.approx(n * math.log(0.25), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_factorises_at_zero_rho(self, seed):
        d = gen_biprobit(GeneratorSpec(60, (0.5, 0.2), (-0.4, 0.1), rho=0.3, seed=seed, on_degenerate="regenerate"))
        g = np.random.default_rng(seed)
        b1, b2 = g.normal(size=2), g.normal(size=2)
        ll = biprobit_loglik(np.concatenate([b1, b2, [0.0]]), d.X1, d.y1, d.X2, d.y2)
        ref = probit_loglik(b1, d.X1, d.y1) + probit_loglik(b2, d.X2, d.y2)
        assert ll == pytest.approx(ref, abs=1e-12)

    def test_never_nan_far_out(self):
        ll = biprobit_loglik(np.array([40.0, -40.0, 40.0, 40.0, 8.0]), H_X1, H_Y1, H_X2, H_Y2)
        assert math.isfinite(ll)

    def test_gradient_matches_differences(self):
        d = gen_biprobit(GeneratorSpec(300, (0.5, -0.3, 0.2), (0.4, 0.1), rho=0.4, seed=5))
        g = np.random.default_rng(0)
        for _ in range(5):
            p = g.normal(scale=0.5, size=6)
            a = biprobit_score(p, d.X1, d.y1, d.X2, d.y2)
            h = 1e-6
            fd = np.array([(biprobit_loglik(p + h * e, d.X1, d.y1, d.X2, d.y2)
                            - biprobit_loglik(p - h * e, d.X1, d.y1, d.X2, d.y2)) / (2 * h) for e in np.eye(6)])
            np.testing.assert_allclose(a, fd, rtol=1e-5, atol=1e-5)


    def test_deep_tail_terms_and_score(self):
        # a quadrant probability near 7e-23, far below what bvn_cdf resolves
        X = np.ones((1, 1))
        p = np.array([2.317, 1.782, math.atanh(-0.904)])
        y0 = np.zeros(1)
        ll = biprobit_loglik(p, X, y0, X, y0)
        assert ll == pytest.approx(-50.93592825142744, rel=1e-12)  # mpmath tail oracle
        a = biprobit_score(p, X, y0, X, y0)
        h = 1e-6
        fd = np.array([(biprobit_loglik(p + h * e, X, y0, X, y0)
                        - biprobit_loglik(p - h * e, X, y0, X, y0)) / (2 * h) for e in np.eye(3)])
        assert np.all(np.isfinite(a))
        np.testing.assert_allclose(a, fd, rtol=1e-6)


class TestFitBiprobit:
    def test_invariants(self):
        d = gen_biprobit(GeneratorSpec(2000, (0.6, -0.2), (-0.3, 0.4), rho=0.5, seed=21))
        fit = fit_biprobit(d.X1, d.y1, d.X2, d.y2)
        assert fit.converged
        assert fit.rho == math.tanh(fit.athrho)
        assert fit.aic == pytest.approx(2 * 5 - 2 * fit.loglik, abs=1e-10)
        assert abs(fit.rho - 0.5) <= 3 * fit.se_rho
        assert fit.se_rho == pytest.approx((1 - fit.rho ** 2) * fit.se_athrho)

    def test_independent_errors(self):
        d = gen_biprobit(GeneratorSpec(20000, (0.6, -0.2), (-0.3, 0.4), rho=0.0, seed=22))
        fit = fit_biprobit(d.X1, d.y1, d.X2, d.y2)
        p1, p2 = fit_probit(d.X1, d.y1), fit_probit(d.X2, d.y2)
        assert abs(fit.rho) <= 3 * fit.se_rho
        np.testing.assert_allclose(fit.beta1, p1.beta, atol=1e-3)
        np.testing.assert_allclose(fit.beta2, p2.beta, atol=1e-3)

    def test_pinned_from_cold_start(self):
        d = gen_biprobit(GeneratorSpec(1500, (0.6, -0.2, 0.3), (-0.3, 0.4), rho=0.6, seed=23))
        fit = fit_biprobit(d.X1, d.y1, d.X2, d.y2, fix_athrho=0.0, start=np.zeros(6))
        p1, p2 = fit_probit(d.X1, d.y1), fit_probit(d.X2, d.y2)
        np.testing.assert_allclose(fit.beta1, p1.beta, atol=1e-6)
        np.testing.assert_allclose(fit.beta2, p2.beta, atol=1e-6)
        assert fit.athrho == 0.0 and fit.se_athrho == 0.0

    def test_boundary_flag(self):
        g = np.random.default_rng(1)
        n = 400
        X = np.column_stack([g.standard_normal(n), np.ones(n)])
        y = (X[:, 0] + g.standard_normal(n) > 0).astype(float)
        fit = fit_biprobit(X, y, X, y)
        assert fit.boundary
        assert not fit.converged

    def test_mismatched_n(self):
        with pytest.raises(DataError):
            fit_biprobit(H_X1, H_Y1, H_X2[:3], H_Y2[:3])


class TestSure:
    def test_identical_regressors_equal_ols(self):
        d = gen_sure(GeneratorSpec(300, (1.0, -0.5, 2.0), (0.3, 0.8, -1.0), rho=0.6, seed=3, shared_regressors=True))
        fit = fit_sure(d.X1, d.y1, d.X2, d.y2)
        np.testing.assert_allclose(fit.beta1, fit.stage1_beta1.beta, atol=1e-10)
        np.testing.assert_allclose(fit.beta2, fit.stage1_beta2.beta, atol=1e-10)

    def test_diagonal_is_stage_one(self):
        d = gen_sure(GeneratorSpec(300, (1.0, -0.5, 2.0), (0.3, 0.8), rho=0.6, seed=3))
        fit = fit_sure(d.X1, d.y1, d.X2, d.y2, diagonal=True)
        assert np.array_equal(fit.beta1, fit.stage1_beta1.beta)
        assert np.array_equal(fit.beta2, fit.stage1_beta2.beta)

    def test_invariants(self):
        d = gen_sure(GeneratorSpec(500, (1.0, -0.5, 2.0), (0.3, 0.8), rho=-0.4, sigma1=2.0, sigma2=0.5, seed=4))
        fit = fit_sure(d.X1, d.y1, d.X2, d.y2)
        s = fit.sigma
        assert np.array_equal(s, s.T) and s[0, 0] >= 0 and s[1, 1] >= 0
        assert fit.resid_corr == pytest.approx(s[0, 1] / math.sqrt(s[0, 0] * s[1, 1]), abs=1e-12)
        e1 = fit.stage1_beta1.residuals
        assert s[0, 0] == pytest.approx(e1 @ e1 / 500, rel=1e-14)
        assert np.max(np.abs(d.X1.T @ e1)) <= 1e-8
        assert np.max(np.abs(d.X2.T @ fit.stage1_beta2.residuals)) <= 1e-8

    def test_matches_dense_gls(self):
        d = gen_sure(GeneratorSpec(60, (1.0, -0.5, 2.0), (0.3, 0.8), rho=0.5, seed=6))
        fit = fit_sure(d.X1, d.y1, d.X2, d.y2)
        n = 60
        X = np.block([[d.X1, np.zeros((n, 2))], [np.zeros((n, 3)), d.X2]])
        W = np.kron(np.linalg.inv(fit.sigma), np.eye(n))
        b = np.linalg.solve(X.T @ W @ X, X.T @ W @ np.concatenate([d.y1, d.y2]))
        np.testing.assert_allclose(np.concatenate([fit.beta1, fit.beta2]), b, atol=1e-10)

    def test_dof_correction(self):
        d = gen_sure(GeneratorSpec(50, (1.0, -0.5, 2.0), (0.3, 0.8), rho=0.5, seed=6))
        a = fit_sure(d.X1, d.y1, d.X2, d.y2)
        b = fit_sure(d.X1, d.y1, d.X2, d.y2, dof_correction=True)
        assert b.sigma[0, 0] == pytest.approx(a.sigma[0, 0] * 50 / 47)
        assert b.sigma[1, 1] == pytest.approx(a.sigma[1, 1] * 50 / 48)

    def test_singular_covariance(self):
        g = np.random.default_rng(0)
        X = np.column_stack([g.standard_normal(30), np.ones(30)])
        e = g.standard_normal(30)
        with pytest.raises(DataError, match="singular"):
            fit_sure(X, X @ [1, 2] + e, X, X @ [3, 4] + 2 * e)

    def test_recovers_correlation(self):
        d = gen_sure(GeneratorSpec(2000, (1.0, -0.5, 2.0), (0.3, 0.8), rho=0.5, seed=7))
        assert abs(fit_sure(d.X1, d.y1, d.X2, d.y2).resid_corr - 0.5) <= 0.05


def test_line_search_never_decreases():
    d = gen_biprobit(GeneratorSpec(1000, (0.6, -0.2), (-0.3, 0.4), rho=0.5, seed=31))
    f = lambda t: biprobit_loglik(t, d.X1, d.y1, d.X2, d.y2)
    sc = lambda t: biprobit_score(t, d.X1, d.y1, d.X2, d.y2)
    values = [maximize(f, np.zeros(5), OptimizerConfig(max_iterations=m), gradient=sc).value for m in range(1, 40)]
    assert np.all(np.diff(values) >= -1e-12 * abs(values[0]))


@pytest.mark.slow
def test_consistency_sweep():
    sizes = (500, 2000, 8000)
    errs_p, errs_b = [], []
    for n in sizes:
        ep, eb = [], []
        for r in range(20):
            spec = GeneratorSpec(n, (0.6, -0.2), (-0.3, 0.4), rho=0.4, seed=500 + r)
            d = gen_biprobit(spec)
            truth = np.array([0.6, -0.2, -0.3, 0.4, math.atanh(0.4)])
            ep.append(np.mean(np.abs(fit_probit(d.X1, d.y1).beta - truth[:2])))
            eb.append(np.mean(np.abs(fit_biprobit(d.X1, d.y1, d.X2, d.y2).params - truth)))
        errs_p.append(np.mean(ep))
        errs_b.append(np.mean(eb))
    assert errs_p[0] > errs_p[1] > errs_p[2]
    assert errs_b[0] > errs_b[1] > errs_b[2]


def test_start_length_checked():
    with pytest.raises(ValueError, match="start needs 5"):
        fit_biprobit(H_X1, H_Y1, H_X2, H_Y2, start=np.zeros(4))
