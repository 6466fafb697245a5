import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import expit

from hdate.errors import ConfigError
from hdate.simcore import rep_generator
from hdate.theory import (
    VarianceReport,
    aipw_remainder_variance,
    efficiency_bound,
    estimate_sigma_z,
    exact_beta_variance,
    gcomp_asymptotic_variance,
    gcomp_variance,
    ols_arm_variance,
    prediction_variance_floor,
    wishart_symmetry_check,
)


class TestExactBetaVariance:
    def test_direct_substitution(self):
        np.testing.assert_allclose(exact_beta_variance(np.eye(10), 100, 10, 1.0), np.eye(10) / 89, rtol=1e-15)

    def test_inverse_chi2_moment(self):
        # d = 1: E[1 / chi2_N] = 1 / (N - 2).
        for N in (5, 20, 200):
            assert exact_beta_variance(np.eye(1), N, 1, 2.5)[0, 0] == pytest.approx(2.5 / (N - 2), rel=1e-15)

    def test_boundary(self):
        with pytest.raises(ConfigError):
            exact_beta_variance(np.eye(3), 4, 3, 1.0)

    def test_non_spd(self):
        with pytest.raises(ConfigError):
            exact_beta_variance(np.diag([1.0, -1.0]), 10, 2, 1.0)
        with pytest.raises(ConfigError):
            exact_beta_variance(np.array([[1.0, 0.5], [0.0, 1.0]]), 10, 2, 1.0)

    def test_monte_carlo_plain_gaussian(self):
        rng = np.random.default_rng(0)
        N, d = 30, 3
        coefs = np.array([np.linalg.lstsq(X := rng.standard_normal((N, d)), rng.standard_normal(N), rcond=None)[0] for _ in range(20_000)])
        np.testing.assert_allclose(np.diag(np.cov(coefs.T)), 1 / (N - d - 1), rtol=0.05)

    def test_selected_arm_matches(self):
        # Logistic selection into the arm with gamma^2 = 5 leaves the moment unchanged.
        v = ols_arm_variance(60, 10, 5.0, reps=2000, seed=0)
        assert v.value == pytest.approx(1 / 49, rel=0.10)


class TestGcompVariance:
    def setup_method(self):
        self.b1 = np.array([1.0, 2.0, 0.5])
        self.b0 = np.array([0.0, 1.0, -0.5])
        self.S = np.diag([1.0, 2.0, 0.5])

    def test_known_nuisance_collapse(self):
        r = gcomp_variance(self.b1, self.b0, self.S, np.zeros((3, 3)), np.ones(3), 50)
        diff = self.b1 - self.b0
        assert r.total == pytest.approx(diff @ self.S @ diff / 50, rel=1e-15)
        assert r.components["overfit"] == 0 and r.components["mean_shift"] == 0

    @given(st.integers(0, 1000))
    def test_additivity(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((3, 3))
        V = A @ A.T
        r = gcomp_variance(rng.normal(size=3), rng.normal(size=3), self.S, V, rng.normal(size=3), int(rng.integers(1, 500)))
        assert abs(r.total - sum(r.components.values())) <= 1e-12 * max(1.0, r.total)

    def test_report_total(self):
        assert VarianceReport({"a": 1.0, "b": 0.25}).total == 1.25

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            gcomp_variance(np.ones(2), self.b0, self.S, np.zeros((3, 3)), np.zeros(3), 10)
        with pytest.raises(ConfigError):
            gcomp_variance(self.b1, self.b0, self.S, np.zeros((2, 2)), np.zeros(3), 10)

    def test_monte_carlo_sample_split(self):
        # Fixed arm training sizes, n2 fresh evaluation rows, E[X] = 0.
        d, N1, N0, n2, reps = 40, 150, 150, 100, 2000
        b1 = np.full(d, 3 / math.sqrt(d))
        b0 = np.full(d, 2 / math.sqrt(d))
        rng = rep_generator(0, 0)
        est = np.empty(reps)
        for r in range(reps):
            X1, X0 = rng.standard_normal((N1, d)), rng.standard_normal((N0, d))
            h1 = np.linalg.lstsq(X1, X1 @ b1 + rng.standard_normal(N1), rcond=None)[0]
            h0 = np.linalg.lstsq(X0, X0 @ b0 + rng.standard_normal(N0), rcond=None)[0]
            est[r] = (rng.standard_normal((n2, d)) @ (h1 - h0)).mean()
        I = np.eye(d)
        V = exact_beta_variance(I, N1, d, 1.0) + exact_beta_variance(I, N0, d, 1.0)
        rep = gcomp_variance(b1, b0, I, V, np.zeros(d), n2)
        assert est.var(ddof=1) == pytest.approx(rep.total, rel=0.10)

    def test_kappa_limit_matches_exact_terms(self):
        # Exact trace term times n against the limit display's third term.
        n, kappa, p, p11, p10 = 100_000, 0.2, 0.5, 0.25, 0.25
        d = int(kappa * n)
        I = np.eye(1)
        per_coord = 1 / (p11 * n - d - 1) + 1 / (p10 * n - d - 1)
        trace_term = n * d * per_coord / (p * n)
        limit = gcomp_asymptotic_variance(kappa, 1.0, 0.0, p, p11, p10, 0.0)
        assert limit == pytest.approx(trace_term, rel=0.05)


class TestGcompAsymptotic:
    def test_classical_limit(self):
        assert gcomp_asymptotic_variance(1e-12, 1.0, 2.0, 0.5, 0.25, 0.25, 0.0) == pytest.approx(4.0, rel=1e-10)

    @given(st.floats(0.01, 0.9), st.floats(0.01, 0.09))
    def test_monotone_in_kappa(self, k, dk):
        args = (1.0, 1.0, 0.4, 0.3, 0.3, 0.5)
        assert gcomp_asymptotic_variance(k + dk, *args) > gcomp_asymptotic_variance(k, *args)

    def test_ranges(self):
        with pytest.raises(ConfigError):
            gcomp_asymptotic_variance(1.0, 1, 1, 0.5, 0.25, 0.25, 0)
        with pytest.raises(ConfigError):
            gcomp_asymptotic_variance(0.2, 1, 1, 0.0, 0.25, 0.25, 0)

    def test_simulation_kappa_02(self):
        # Sample-split G-computation: fraction p evaluates, p11 / p10 train each arm.
        n, kappa, p, p11, p10, reps = 1000, 0.2, 0.5, 0.25, 0.25, 1000
        d, n2, N1, N0 = int(kappa * n), int(p * n), int(p11 * n), int(p10 * n)
        b1 = np.full(d, 3 / math.sqrt(d))
        b0 = np.full(d, 2 / math.sqrt(d))
        rng = rep_generator(1, 0)
        est = np.empty(reps)
        for r in range(reps):
            X1, X0 = rng.standard_normal((N1, d)), rng.standard_normal((N0, d))
            h1 = np.linalg.lstsq(X1, X1 @ b1 + rng.standard_normal(N1), rcond=None)[0]
            h0 = np.linalg.lstsq(X0, X0 @ b0 + rng.standard_normal(N0), rcond=None)[0]
            Xe = rng.standard_normal((n2, d))
            est[r] = (Xe @ h1 - Xe @ h0).mean()
        limit = gcomp_asymptotic_variance(kappa, 1.0, float((b1 - b0) @ (b1 - b0)), p, p11, p10, 0.0)
        assert n * est.var(ddof=1) == pytest.approx(limit, rel=0.15)


class TestSigmaZ:
    def test_constant_propensity(self):
        m = estimate_sigma_z(np.zeros(3), 1, 100_000, seed=0)
        assert np.all(np.abs(m.mean - np.eye(3)) <= 4 * m.se + 1e-12)

    @pytest.mark.parametrize("arm", [0, 1])
    def test_loewner(self, arm):
        eta = np.array([0.8, -0.3, 0.5])
        m = estimate_sigma_z(eta, arm, 200_000, seed=1)
        sym = 0.5 * (m.mean + m.mean.T)
        assert np.linalg.eigvalsh(sym - np.eye(3)).min() >= -3 * m.se.max() * 3

    @pytest.mark.parametrize("arm", [0, 1])
    def test_quadrature_diagonal(self, arm):
        eta = np.array([0.7, -0.4])
        m = estimate_sigma_z(eta, arm, 400_000, seed=2)
        sgn = -1.0 if arm == 1 else 1.0
        c = 1 / math.sqrt(2 * math.pi)
        for j in range(2):
            e, f = sgn * eta[j], sgn * eta[1 - j]
            a = integrate.quad(lambda x: c * x * x * math.exp(e * x - 0.5 * x * x), -40, 40)[0]
            b = integrate.quad(lambda x: c * math.exp(f * x - 0.5 * x * x), -40, 40)[0]
            assert abs(m.mean[j, j] - a * b) <= 3 * m.se[j, j]

    def test_min_mc(self):
        with pytest.raises(ConfigError):
            estimate_sigma_z(np.zeros(2), 1, 100)


class TestAipwRemainder:
    def test_zero(self):
        Z = np.eye(3)
        assert aipw_remainder_variance(np.zeros((3, 3)), np.zeros((3, 3)), 2 * Z, 3 * Z) == 0.0

    def test_constant_propensity_equals_overfit(self):
        d, N1, N0, n2 = 5, 40, 50, 1
        I = np.eye(d)
        V1, V0 = exact_beta_variance(I, N1, d, 1.0), exact_beta_variance(I, N0, d, 1.0)
        S1 = estimate_sigma_z(np.zeros(d), 1, 200_000, 3).mean
        S0 = estimate_sigma_z(np.zeros(d), 0, 200_000, 3).mean
        overfit = gcomp_variance(np.zeros(d), np.zeros(d), I, V1 + V0, np.zeros(d), n2).components["overfit"]
        assert aipw_remainder_variance(V1, V0, S1, S0) == pytest.approx(overfit * n2, rel=0.01)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            aipw_remainder_variance(np.eye(2), np.eye(3), np.eye(3), np.eye(3))

    def test_simulation(self):
        # Known propensity, OLS outcome fits on separate training rows.
        d, N, n2, reps = 40, 200, 400, 2000
        eta = np.full(d, math.sqrt(1.0 / d))
        rng = rep_generator(2, 0)
        diff = np.empty(reps)

        def arm_rows(arm):
            rows = []
            while sum(len(r) for r in rows) < N:
                X = rng.standard_normal((4 * N, d))
                w = rng.random(4 * N) < expit(X @ eta)
                rows.append(X[w == arm])
            return np.concatenate(rows)[:N]

        for r in range(reps):
            h = {}
            for arm in (1, 0):
                X = arm_rows(arm)
                h[arm] = np.linalg.lstsq(X, rng.standard_normal(N), rcond=None)[0]
            X = rng.standard_normal((n2, d))
            pi = expit(X @ eta)
            W = rng.random(n2) < pi
            # AIPW minus oracle AIPW with true means 0 in both arms.
            m1, m0 = X @ h[1], X @ h[0]
            diff[r] = np.mean(m1 * (1 - W / pi) - m0 * (1 - (1 - W) / (1 - pi)))
        V = exact_beta_variance(np.eye(d), N, d, 1.0)
        S1 = estimate_sigma_z(eta, 1, 200_000, 4).mean
        S0 = estimate_sigma_z(eta, 0, 200_000, 4).mean
        assert n2 * diff.var(ddof=1) == pytest.approx(aipw_remainder_variance(V, V, S1, S0), rel=0.15)


class TestEfficiencyBound:
    def test_constant_propensity(self):
        b1, b0 = np.array([1.0, 2.0]), np.array([0.0, 1.0])
        v = efficiency_bound(b1, b0, np.eye(2), np.zeros(2), 1.5, 10_000)
        assert v.value == pytest.approx(2.0 + 4 * 1.5, rel=1e-14)
        assert v.se == 0.0

    def test_equal_betas(self):
        eta = np.array([0.6, 0.8])
        v = efficiency_bound(np.ones(2), np.ones(2), np.eye(2), eta, 1.0, 400_000, seed=0)
        # E[e^Z + e^-Z] = 2 e^{1/2} for Z ~ N(0, 1).
        assert abs(v.value - (2 + 2 * math.exp(0.5))) <= 4 * v.se


class TestWishart:
    def test_constant_f(self):
        c = wishart_symmetry_check(8, 2, np.zeros(2), 20_000, seed=0)
        np.testing.assert_array_equal(c.difference, 0.0)
        np.testing.assert_array_equal(c.lhs, c.rhs)

    def test_d1_inverse_chi2(self):
        n = 10
        c = wishart_symmetry_check(n, 1, np.array([1.3]), 400_000, seed=1)
        assert abs(c.lhs[0, 0] - 1 / (n - 2)) <= 3 * c.se[0, 0] + 3 * c.se[0, 0]
        assert c.passed()

    def test_d2(self):
        c = wishart_symmetry_check(10, 2, np.array([0.6, 0.8]), 1_000_000, seed=2)
        assert c.passed(3.0), c.to_dict()

    def test_scale_cap(self):
        with pytest.raises(ConfigError):
            wishart_symmetry_check(40, 2, np.ones(2), 20_000)
        with pytest.raises(ConfigError):
            wishart_symmetry_check(3, 2, np.ones(2), 20_000)


class TestFloor:
    def test_floor_kappa_quarter(self):
        rows = prediction_variance_floor(0.25, [200, 400, 800], reps=2000, seed=0)
        v = [r.variance for r in rows]
        assert max(v) <= 1.2 * min(v)
        assert all(x > 0.25 / 4 for x in v)
        for r in rows:
            assert abs(r.variance - r.theory) <= 4 * r.mc_se

    def test_classical_shrinkage(self):
        rows = prediction_variance_floor(0.0, [200, 800], reps=2000, seed=0, fixed_d=8)
        assert rows[0].variance / rows[1].variance == pytest.approx(4.0, rel=0.15)

    def test_homogeneity(self):
        a = prediction_variance_floor(0.25, [200], reps=200, seed=5)[0]
        b = prediction_variance_floor(0.25, [200], reps=200, seed=5, sigma2=2.0)[0]
        assert b.variance == pytest.approx(2 * a.variance, rel=1e-12)

    def test_small_kappa_n(self):
        with pytest.raises(ConfigError):
            prediction_variance_floor(0.01, [200], reps=10)
