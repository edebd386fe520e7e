import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from fpabid.auction_core import GaussianHob, UniformHob, quantile
from fpabid.hob_estimation import (DEFAULT_C_BERNSTEIN, EmpiricalBernsteinOracle, EmpiricalDkwOracle,
                                   LinearHobOracle, OracleKind, bernstein_band, bernstein_radius,
                                   coverage_report, dkw_radius, estimate, linear_hob_estimate, split_history,
                                   split_inflation, write_calibration_csv)


def sphere_contexts(rng, n, d):
    Z = rng.normal(size=(n, d - 1))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return np.hstack([np.full((n, 1), 0.6), 0.8 * Z])


class TestIidOracles:
    def test_one_point_dkw(self):
        est = estimate(OracleKind("dkw"), [(None, 0.5)], None, 100)
        assert est(0.4) == 0.0 and est(0.5) == 1.0
        assert est.eps == pytest.approx(np.sqrt(np.log(2e4) / 2))

    def test_empty_history_is_wide(self):
        for kind in ("dkw", "bernstein"):
            est = estimate(OracleKind(kind), [], None, 100)
            assert est.wide and est.radius == 1.0

    def test_bernstein_radius_formula(self):
        est = estimate(OracleKind("bernstein"), [(None, m) for m in np.linspace(0, 1, 1000)], None, 100)
        assert est.delta == pytest.approx(DEFAULT_C_BERNSTEIN * np.sqrt(np.log(2e4) / 1000))
        assert bernstein_radius(1, 100) == 1.0

    def test_perfect(self):
        G = UniformHob(0.2, 0.6)
        est = estimate(OracleKind("perfect"), [(None, 0.3)], None, 10, truth=G)
        assert est.cdf_hat is G and est.eps == 0.0 and est.delta == 0.0
        with pytest.raises(ValueError):
            estimate(OracleKind("perfect"), [], None, 10)

    def test_incremental_matches_snapshot(self):
        rng = np.random.default_rng(0)
        hobs = rng.uniform(size=50)
        dkw, bern = EmpiricalDkwOracle(100), EmpiricalBernsteinOracle(100)
        for m in hobs:
            dkw.observe(None, m)
            bern.observe(None, m)
        grid = np.linspace(0, 1, 101)
        hist = [(None, m) for m in hobs]
        np.testing.assert_array_equal(dkw.estimate()(grid), estimate(OracleKind("dkw"), hist, None, 100)(grid))
        assert bern.estimate().delta == estimate(OracleKind("bernstein"), hist, None, 100).delta

    def test_dkw_coverage(self):
        rows = coverage_report(UniformHob(), 10**4, [10**4], 1000, np.random.default_rng(1))
        assert np.mean([ok for *_, ok in rows]) >= 0.99

    @pytest.mark.parametrize("t", [10**2, 10**3, 10**4])
    def test_bernstein_band_coverage(self, t):
        rows = coverage_report(GaussianHob(0.5, 0.1), 10**4, [t], 100, np.random.default_rng(t), kind="bernstein")
        assert np.mean([ok for *_, ok in rows]) >= 0.95

    def test_calibration_csv(self, tmp_path):
        rows = coverage_report(UniformHob(), 100, [10, 50], 2, np.random.default_rng(2))
        write_calibration_csv(rows, tmp_path / "cal.csv")
        lines = (tmp_path / "cal.csv").read_text().splitlines()
        assert lines[0] == "t,realized_error,radius,covered" and len(lines) == 5

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40), st.sampled_from(["dkw", "bernstein"]))
    def test_monotone(self, hobs, kind):
        est = estimate(OracleKind(kind), [(None, m) for m in hobs], None, 1000)
        assert np.all(np.diff(est(np.linspace(0, 1, 1001))) >= 0)

    def test_radius_decreasing(self):
        r = [dkw_radius(n, 1000) for n in range(0, 200)]
        assert np.all(np.diff(r[1:]) < 0) and r[0] == 1.0


class TestSplit:
    def test_two_identical(self):
        x = np.array([[1.0, 0.0], [1.0, 0.0]])
        S, rho = split_history(x)
        assert S.size == 1
        # direct oracle: generalized eigenvalues of (18 I + x x^T, 18 I + 2 x x^T)
        A_s = 18 * np.eye(2) + np.outer(x[0], x[0])
        full = 18 * np.eye(2) + 2 * np.outer(x[0], x[0])
        assert rho == pytest.approx(scipy.linalg.eigh(A_s, full, eigvals_only=True)[0])
        assert rho == pytest.approx(19 / 20)

    def test_empty(self):
        S, rho = split_history(np.zeros((0, 3)))
        assert S.size == 0 and rho == 1.0

    def test_random_unit_vectors(self):
        X = np.random.default_rng(3).normal(size=(100, 4))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        S, rho = split_history(X)
        assert S.size <= 50
        A_s = 18 * np.eye(4) + X[S].T @ X[S]
        full = 18 * np.eye(4) + X.T @ X
        assert np.linalg.eigvalsh(A_s - rho * full).min() >= -1e-9
        assert rho >= 1 / 9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 300), st.integers(0, 2**32 - 1))
    def test_half_size_and_dominance(self, d, n, seed):
        X = np.random.default_rng(seed).normal(size=(n, d))
        if n:
            X /= np.maximum(1, np.linalg.norm(X, axis=1, keepdims=True))
        S, rho = split_history(X)
        assert 2 * S.size <= n
        A_s = 18 * np.eye(d) + X[S].T @ X[S]
        full = 18 * np.eye(d) + X.T @ X
        assert np.linalg.eigvalsh(A_s - rho * full).min() >= -1e-9

    def test_inflation(self):
        assert split_inflation(0.5) == 1.0
        assert split_inflation(1 / 36) == pytest.approx(2.0)


class TestLinearHob:
    def test_noiseless_step(self):
        # repeated context: the residual shift cancels the ridge bias exactly
        phi = np.array([0.5, 0.2, -0.1, 0.1])
        x = np.array([0.6, 0.0, 0.8, 0.0])
        est = linear_hob_estimate([(x, phi @ x)] * 50, x, 1000)
        grid = np.arange(10**4 + 1) / 10**4
        G = est(grid)
        assert set(np.unique(G)) == {0.0, 1.0}
        assert abs(quantile(est.cdf_hat, 0.5) - phi @ x) <= 1e-4

    def test_noiseless_step_random_contexts(self):
        # shifted values are phi^T x + (phi_hat - phi)^T (x - x_s); ridge bias shrinks like 1/n
        rng = np.random.default_rng(4)
        phi = np.array([0.5, 0.2, -0.1, 0.1])
        x = np.array([0.6, 0.0, 0.8, 0.0])
        spread = []
        for n in (1000, 10_000):
            X = sphere_contexts(rng, n, 4)
            est = linear_hob_estimate(list(zip(X, X @ phi)), x, n + 1)
            lo, hi = quantile(est.cdf_hat, 1e-9), quantile(est.cdf_hat, 1.0)
            assert lo <= phi @ x <= hi
            spread.append(hi - lo)
        assert spread[1] < spread[0] / 5

    def test_short_history_wide(self):
        est = linear_hob_estimate([(np.array([1.0, 0.0]), 0.3), (np.array([0.0, 1.0]), 0.4)],
                                  np.array([0.6, 0.8]), 100)
        assert est.wide and est.delta >= 1.0

    def test_incremental_matches_one_shot(self):
        rng = np.random.default_rng(5)
        X = sphere_contexts(rng, 300, 3)
        M = X @ np.array([0.4, 0.1, 0.1]) + rng.normal(0, 0.05, 300)
        x = X[0]
        o = LinearHobOracle(1000, 3)
        for a, m in zip(X, M):
            o.observe(a, m)
        a, b = o.estimate(x), linear_hob_estimate(list(zip(X, M)), x, 1000)
        grid = np.linspace(0, 1, 501)
        np.testing.assert_array_equal(a(grid), b(grid))
        assert a.delta == b.delta and a.rho == b.rho

    def test_bernstein_calibration(self):
        rng = np.random.default_rng(6)
        d, T = 4, 5000
        phi = np.array([0.5, 0.1, -0.1, 0.05])
        x = np.array([0.6, 0.8, 0.0, 0.0])
        bids = np.linspace(0.05, 0.95, 20)
        G = GaussianHob(phi @ x, 0.1)(bids)
        hits = []
        for _ in range(200):
            X = sphere_contexts(rng, T - 1, d)
            M = X @ phi + rng.normal(0, 0.1, T - 1)
            est = linear_hob_estimate(list(zip(X, M)), x, T, kappa=1.0)
            hits.append(np.all(np.abs(est(bids) - G) <= bernstein_band(G, est.delta)))
        assert np.mean(hits) >= 0.95
