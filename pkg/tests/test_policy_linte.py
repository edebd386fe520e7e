import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpabid.auction_core import EmpiricalCdf, UniformHob, expected_payoff, grid_argmax, quantile
from fpabid.environments import ConstantBaseline, ContextSchedule, IidHob, LinearTeInstance, generate_stream
from fpabid.hob_estimation import CdfEstimate
from fpabid.policy_linte import (ConstantsConfig, LinTeStage, SupLinTePolicy, SupLinTeState, base_evaluate_te,
                                 criterion_select, inverse_variance_weight, ipw_value, master_step_te,
                                 record_feedback_te, truncate_bid, truncated_ipw, truncation_level,
                                 variance_proxy)

THETA = np.r_[0.5, 0.1, 0.1, 0.1]
G = UniformHob(0.2, 0.6)
SPHERE = ContextSchedule("intercept_sphere", radius=0.8, intercept=0.6)


def est(G, delta):
    return CdfEstimate(G, delta=delta)


def inject(stage, theta, n):
    for k in range(stage.dim):
        stage.gram.update(np.eye(stage.dim)[k], n)
    stage.target = (1 + n) * np.asarray(theta)


class TestIpw:
    def test_win(self):
        assert truncated_ipw(0.5, 0.3, 1.0, True, est(lambda b: 0.5, 0.1)) == 2.0

    def test_loss(self):
        assert truncated_ipw(0.5, 0.7, 1.0, False, est(lambda b: 0.75, 0.01)) == -4.0

    def test_truncation_active(self):
        assert truncated_ipw(0.5, 0.3, 1.0, True, est(lambda b: 1e-4, 0.1)) == pytest.approx(100.0)

    def test_inconsistent_flag(self):
        with pytest.raises(ValueError):
            truncated_ipw(0.5, 0.3, 1.0, False, est(lambda b: 0.5, 0.1))

    @given(st.floats(0, 1), st.floats(1e-3, 1), st.floats(0, 1), st.booleans())
    def test_bounded_by_clamp(self, g, delta, obs, won):
        e = ipw_value(g, delta, obs, won)
        assert abs(e) <= obs / delta**2 * (1 + 1e-12)
        assert (e >= 0) == won or e == 0


class TestVarianceProxy:
    @pytest.mark.parametrize("g,delta,sigma", [(0.5, 0.1, 2.0), (0.1, 0.1, 1 / 0.3), (0.0, 0.1, 10.05),
                                               (1.0, 0.1, 10.05)])
    def test_values(self, g, delta, sigma):
        assert variance_proxy(0.4, est(lambda b: g, delta)) == pytest.approx(sigma, abs=5e-3)

    def test_exact_clamp(self):
        assert variance_proxy(0.4, est(lambda b: 0.0, 0.1)) == pytest.approx(1 / np.sqrt(0.01 * 0.99))

    @given(st.floats(0, 1), st.floats(1e-3, 1))
    def test_at_least_two(self, g, delta):
        assert variance_proxy(0.4, est(lambda b: g, delta)) >= 2.0 - 1e-12


class TestBaseEvaluate:
    def test_cold_start_quadratic_argmax(self):
        consts = ConstantsConfig(c1=0.1, c2=0.1)
        x = np.array([0.5, 0.0, 0.0, 0.0])
        grid = np.linspace(0, 1, 1001)
        stage = LinTeStage(4)
        ev = base_evaluate_te(stage, grid, UniformHob(), x, 100, consts)
        gm = stage.gamma(100, consts) * 0.5
        np.testing.assert_allclose(ev.u0, grid * (gm - grid))
        assert grid[ev.i_star0] == pytest.approx(gm / 2, abs=1e-3)
        assert ev.effect_hat == 0.0 and ev.x_norm == pytest.approx(0.5)

    def test_gamma(self):
        stage = LinTeStage(2)
        stage.delta_sq_sum = 4.0
        assert stage.gamma(50, ConstantsConfig()) == pytest.approx(1 + 3 * np.log(100) + 3 * 2)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 40))
    def test_interval_order(self, seed, n):
        rng = np.random.default_rng(seed)
        stage = LinTeStage(3)
        for _ in range(n):
            z = rng.normal(size=3)
            stage.gram.update(z / np.linalg.norm(z), rng.uniform(0, 0.25))
        stage.target = rng.normal(size=3) * 5
        grid = np.linspace(0, 1, 201)
        g = np.sort(rng.uniform(size=201))
        x = rng.normal(size=3)
        x /= np.linalg.norm(x)
        ev = base_evaluate_te(stage, grid, g, x, 1000, ConstantsConfig())
        assert ev.i_star1 <= ev.i_star0

    def test_width_monotone_in_variance(self):
        stage = LinTeStage(2)
        stage.gram.update(np.array([0.6, 0.8]), 3.0)
        g = np.linspace(0, 0.5, 51)
        w = base_evaluate_te(stage, np.linspace(0, 1, 51), g, np.array([1.0, 0.0]), 100, ConstantsConfig()).width
        assert np.all(np.diff(w) >= 0)

    @pytest.mark.parametrize("n", [1e8, 1e10])
    @pytest.mark.parametrize("x", [np.array([0.6, 0.8, 0, 0]), np.array([0.6, 0, -0.8, 0]),
                                   np.array([1.0, 0, 0, 0])])
    def test_ucb_gap_on_interval(self, n, x):
        # true theta injected, exact CDF: u_i - r_i lies in [0, 2 w] on [b*_1, b*_0]
        consts = ConstantsConfig(L=2.5)
        stage = LinTeStage(4)
        inject(stage, THETA, n)
        grid = np.linspace(0, 1, 2001)
        g = G(grid)
        ev = base_evaluate_te(stage, grid, g, x, 10**4, consts)
        assert 2 * ev.gamma * ev.x_norm <= 1 / (20 * consts.L)
        e = THETA @ x
        r0 = g * (e - grid)
        r1 = r0 - e
        sl = slice(ev.i_star1, ev.i_star0 + 1)
        for u, r in ((ev.u0, r0), (ev.u1, r1)):
            gap = (u - r)[sl]
            assert np.all(gap >= -1e-12)
            assert np.all(gap <= 2 * ev.width[sl] + 1e-12)


class TestCriterion:
    def test_values(self):
        assert criterion_select(lambda b: 0.3, 0.5, 1.0) == 1
        assert criterion_select(lambda b: 0.02, 0.5, 1.0) == 0
        assert criterion_select(lambda b: 1 / 40, 0.5, 1.0) == 0

    def test_audited_flags_match_recomputation(self):
        T = 2000
        inst = LinearTeInstance(np.r_[0.3, 0.1, 0.1, 0.1], SPHERE, IidHob(G), 2.5, T, ConstantBaseline(0.2))
        s = generate_stream(inst, np.random.default_rng(0))
        pol = SupLinTePolicy(T, 4, ConstantsConfig(c1=0.05, c2=0.05, c3=0.05, L=2.5))
        pol.audit = []
        flags = []
        for t in range(T):
            x = s.contexts[t]
            e = est(G, 0.02)
            bid, _ = pol.act(x, e)
            for rec in pol.audit[-1]:
                assert rec["criterion"] == int(rec["g_star_1"] > 1 / (40 * 2.5))
                flags.append(rec["criterion"])
            pol.audit[-1] = None
            pol.update(x, bid, s.hob[t], s.v_win[t] if bid >= s.hob[t] else s.v_lose[t], e)
        assert len(flags) > T


class TestMasterStep:
    def test_cold_start_explores(self):
        state = SupLinTeState.start(1000, 4)
        bid, tag, gamma, info = master_step_te(state, np.array([0.6, 0.8, 0, 0]), G, ConstantsConfig())
        assert tag == 1 and bid == 0.0

    @pytest.mark.parametrize("x", [np.array([0.6, 0.8, 0, 0]), np.array([0.6, 0, 0, -0.8])])
    def test_exploit_matches_grid_argmax(self, x):
        T = 10**4
        consts = ConstantsConfig(L=2.5)
        state = SupLinTeState.start(T, 4)
        for stage in state.stages:
            inject(stage, THETA, 1e12)
        bid, tag, _, info = master_step_te(state, x, G, consts)
        assert tag == "exploit"
        ref, _ = grid_argmax(lambda b: expected_payoff(b, G, (THETA @ x, 0.0)), state.bid_grid)
        step = state.bid_grid[1] - state.bid_grid[0]
        assert abs(bid - ref) <= step + 1e-12

    def test_gamma_from_producing_stage(self):
        state = SupLinTeState.start(256, 2)
        state.stages[0].delta_sq_sum = 9.0
        _, tag, gamma, _ = master_step_te(state, np.array([0.6, 0.8]), G, ConstantsConfig())
        assert tag == 1 and gamma == pytest.approx(state.stages[0].gamma(256, ConstantsConfig()))


class TestTruncation:
    def test_level(self):
        assert truncation_level(5, 4, 10**4, 0.01) == pytest.approx(0.14)
        assert truncation_level(100, 4, 100, 0.1) == 0.5

    def test_half_forces_median(self):
        for bid in (0.0, 0.3, 1.0):
            b, z = truncate_bid(bid, G, 100, 4, 100, 0.2)
            assert z == 0.5 and b == pytest.approx(0.4)

    def test_clip(self):
        b, z = truncate_bid(0.21, G, 5, 4, 10**4, 0.01)
        assert b == pytest.approx(quantile(G, 0.14))
        b, _ = truncate_bid(0.59, G, 5, 4, 10**4, 0.01)
        assert b == pytest.approx(quantile(G, 0.86))
        assert truncate_bid(0.4, G, 5, 4, 10**4, 0.01)[0] == 0.4

    def test_grid_version_is_grid_inverse(self):
        grid = np.linspace(0, 1, 101)
        Gh = EmpiricalCdf(np.array([0.15, 0.33, 0.47, 0.52, 0.8]))
        b, z = truncate_bid(0.0, Gh, 5, 4, 10**4, 0.05, grid=grid)
        assert z == pytest.approx(0.3)
        assert b == pytest.approx(0.33) and Gh(b) >= z and Gh(b - 0.01) < z

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.floats(0.1, 0.5), st.floats(0.05, 0.3), st.floats(0, 0.1))
    def test_propensity_window(self, bid, lo, w, delta):
        Gh = UniformHob(lo, lo + w)
        b, z = truncate_bid(bid, Gh, 2.0, 4, 10**4, delta)
        assert z - 1e-12 <= Gh(b) <= 1 - z + 1e-12


class TestRecordFeedback:
    def test_exploit_unchanged(self):
        state = SupLinTeState.start(100, 2)
        record_feedback_te(state, "exploit", 1, np.array([0.6, 0.8]), 0.5, 0.3, 1.0, est(lambda b: 0.5, 0.1))
        assert all(s.index_set == [] and s.delta_sq_sum == 0 for s in state.stages)

    def test_one_win(self):
        state = SupLinTeState.start(100, 2)
        x = np.array([0.6, 0.8])
        record_feedback_te(state, 1, 1, x, 0.5, 0.3, 1.0, est(lambda b: 0.5, 0.1))
        stage = state.stages[0]
        np.testing.assert_allclose(stage.gram.matrix, np.eye(2) + 0.25 * np.outer(x, x))
        np.testing.assert_allclose(stage.target, x / 2)
        assert stage.delta_sq_sum == pytest.approx(0.01)
        assert inverse_variance_weight(0.5, 0.1) == 0.25

    def test_double_record(self):
        state = SupLinTeState.start(100, 2)
        record_feedback_te(state, 1, 1, np.array([0.6, 0.8]), 0.5, 0.3, 1.0, est(lambda b: 0.5, 0.1))
        with pytest.raises(ValueError):
            record_feedback_te(state, 1, 1, np.array([0.6, 0.8]), 0.5, 0.3, 1.0, est(lambda b: 0.5, 0.1))

    def test_replay(self):
        T = 1000
        inst = LinearTeInstance(np.r_[0.3, 0.1, 0.1, 0.1], SPHERE, IidHob(G), 2.5, T, ConstantBaseline(0.2))
        s = generate_stream(inst, np.random.default_rng(1))
        pol = SupLinTePolicy(T, 4, ConstantsConfig(c1=0.05, c2=0.05, c3=0.05, L=2.5))
        log = []
        for t in range(T):
            x, e = s.contexts[t], est(G, 0.02)
            bid, info = pol.act(x, e)
            obs = s.v_win[t] if bid >= s.hob[t] else s.v_lose[t]
            pol.update(x, bid, s.hob[t], obs, e)
            log.append((info["stage"], t + 1, x, bid, s.hob[t], obs, e))
        fresh = SupLinTeState.start(T, 4)
        for row in log:
            record_feedback_te(fresh, *row)
        for a, b in zip(pol.state.stages, fresh.stages):
            np.testing.assert_array_equal(a.gram.matrix, b.gram.matrix)
            np.testing.assert_array_equal(a.target, b.target)
            assert a.index_set == b.index_set


def test_ipw_unbiased_untruncated():
    rng = np.random.default_rng(2)
    n, b, theta_x, base = 100_000, 0.45, 0.4, 0.3
    g = G(b)
    M = G.sample(rng, size=n)
    won = b >= M
    obs = np.where(won, base + theta_x, base)
    e = np.array([ipw_value(g, 0.0, o, w) for o, w in zip(obs, won)])
    assert abs(e.mean() - theta_x) <= 4 * e.std(ddof=1) / np.sqrt(n)
