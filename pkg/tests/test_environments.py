import numpy as np
import pytest
from scipy import stats

from fpabid.auction_core import GaussianHob, UniformHob, lower_bound_mixture
from fpabid.environments import (ConstantBaseline, ContextSchedule, IidHob, LinearHob, LinearPoInstance,
                                 LinearTeInstance, LowerBoundInstance, PerRound, QuadraticBaseline,
                                 constant_schedule, drifting_schedule, generate_round, generate_stream,
                                 instance_from_dict, instance_to_dict, lecam_pair, lower_bound_delta,
                                 piecewise_schedule, true_cdf, validate_instance)

SPHERE = ContextSchedule("intercept_sphere", radius=0.8, intercept=0.6)


def po_instance(T=100, **kw):
    w = np.ones(3) / np.sqrt(3)
    args = dict(theta_win=np.r_[0.9, 0.3 * w], theta_lose=np.r_[0.3, 0.1 * w], schedule=SPHERE,
                hob=IidHob(UniformHob(0.2, 0.6)), L=2.5, T=T)
    args.update(kw)
    return LinearPoInstance(**args)


class TestGenerateRound:
    def test_linear_po_mean(self):
        inst = LinearPoInstance(np.array([0.5, 0.0]), np.zeros(2),
                                ContextSchedule("corpus", points=((1.0, 0.0),)), IidHob(UniformHob()), 1.0,
                                T=1, outcome_noise="fixed")
        x, (vw, vl), _ = generate_round(inst, 1, np.random.default_rng(0))
        np.testing.assert_array_equal(x, [1.0, 0.0])
        assert (vw, vl) == (0.5, 0.0)

    def test_lower_bound_bernoulli_mean(self):
        D = lower_bound_delta(10**4)
        inst = LowerBoundInstance(mu=0.25 + D).as_adversarial(100_000)
        s = generate_stream(inst, np.random.default_rng(1))
        se = s.v_win.std(ddof=1) / np.sqrt(s.T)
        assert abs(s.v_win.mean() - (0.25 + D)) <= 4 * se
        assert np.all(s.v_lose == 0)

    def test_iid_uniform_dkw(self):
        inst = constant_schedule(100_000, 0.5, 0.5, UniformHob())
        M = np.sort(generate_stream(inst, np.random.default_rng(2)).hob)
        n = M.size
        i = np.arange(1, n + 1)
        gap = max(np.max(i / n - M), np.max(M - (i - 1) / n))
        assert gap <= np.sqrt(np.log(2 / 1e-6) / (2 * n))

    def test_round_index_checked(self):
        with pytest.raises(ValueError):
            generate_round(po_instance(T=5), 6, np.random.default_rng(0))


class TestValidate:
    def test_valid(self):
        assert validate_instance(po_instance()) == []

    def test_parameter_norm(self):
        inst = po_instance(theta_win=np.array([1.2, 0, 0, 0]))
        assert "parameter norm > 1" in validate_instance(inst)

    def test_baseline_pushes_win_mean_out(self):
        inst = LinearTeInstance(np.array([0.3]), ContextSchedule("corpus", points=((1.0,),)),
                                IidHob(UniformHob()), 1.0, 10, ConstantBaseline(0.9))
        assert "win mean 1.2 ∉ [0,1]" in validate_instance(inst)

    def test_lower_bound_mixture_lipschitz(self):
        assert validate_instance(LowerBoundInstance(0.25, L=100).as_adversarial(10)) == []
        assert validate_instance(LowerBoundInstance(0.25, L=50).as_adversarial(10)) == []
        bad = validate_instance(LowerBoundInstance(0.25, L=49).as_adversarial(10))
        assert any("Lipschitz" in v for v in bad)

    def test_context_norm(self):
        inst = po_instance(schedule=ContextSchedule("intercept_sphere", radius=0.9, intercept=0.6))
        assert "context norm > 1" in validate_instance(inst)

    def test_linear_hob_clamping(self):
        inst = po_instance(hob=LinearHob(np.array([0.5, 0, 0, 0]), 0.3), L=2.0)
        assert any("clamp" in v for v in validate_instance(inst))
        ok = po_instance(hob=LinearHob(np.array([0.6, 0.1, 0, 0]), 0.05), L=8.0)
        assert validate_instance(ok) == []


class TestLeCam:
    def test_means(self):
        a, b = lecam_pair(lower_bound_delta(10**4))
        assert (a.mu, b.mu) == pytest.approx((0.2475, 0.2525))

    def test_degenerate(self):
        a, b = lecam_pair(0.0)
        assert a == b
        grid = np.linspace(0, 1, 10001)
        G = a.mixture(grid)
        r = G * (a.mu - grid)
        assert np.min(2 * (r.max() - r)) == 0.0

    def test_range(self):
        with pytest.raises(ValueError):
            lecam_pair(0.25)


class TestModel3:
    def test_effect_mean_nonlinear_baseline(self):
        rng = np.random.default_rng(3)
        theta = np.r_[0.4, 0.2, 0.0, 0.0]
        x = np.array([0.6, 0.0, 0.8, 0.0])
        inst = LinearTeInstance(theta, ContextSchedule("corpus", points=(tuple(x),)), IidHob(UniformHob()),
                                1.0, 100_000, QuadraticBaseline(0.2, 0.5, coord=2))
        s = generate_stream(inst, rng)
        e = s.v_win - s.v_lose
        assert abs(e.mean() - theta @ x) <= 4 * e.std(ddof=1) / np.sqrt(e.size)


class TestLinearHob:
    def test_conditional_gaussian(self):
        phi = np.array([0.5, 0.2, -0.1])
        hob = LinearHob(phi, 0.05)
        rng = np.random.default_rng(4)
        for x in (np.array([0.6, 0.5, 0.0]), np.array([0.6, -0.5, 0.3]), np.array([0.8, 0.0, 0.0])):
            X = np.tile(x, (20_000, 1))
            M, _ = hob.sample_all(rng, X, X.shape[0])
            assert stats.kstest(M, GaussianHob(phi @ x, 0.05).cdf).pvalue > 1e-4
        assert true_cdf(po_instance(hob=hob, L=8.0), 1, x).mean == pytest.approx(phi @ x)


class TestSchedules:
    def test_oblivious(self):
        inst = piecewise_schedule(10, [(0.5, 0.8, 0.1, UniformHob()), (0.5, 0.3, 0.1, UniformHob(0, 0.5))])
        assert inst.win_means.tolist() == [0.8] * 5 + [0.3] * 5
        assert isinstance(inst.hob, PerRound)
        d = drifting_schedule(5, 0.2, 0.6, 0.1, UniformHob())
        np.testing.assert_allclose(d.win_means, np.linspace(0.2, 0.6, 5))

    def test_blocks(self):
        X = ContextSchedule("blocks").materialize(6, 4)
        np.testing.assert_array_equal(X[:, 0], 0.5)
        assert [int(np.argmax(x[1:])) for x in X] == [0, 0, 1, 1, 2, 2]

    def test_block_embedding_means(self):
        inst = LowerBoundInstance(0.25, delta=0.05, block_dim=3, signs=(1, -1)).as_linear_po(4)
        mw, _ = inst.means_all(inst.contexts())
        np.testing.assert_allclose(mw, [0.3, 0.3, 0.2, 0.2])

    def test_seeded_schedule_ignores_rng(self):
        s = ContextSchedule("sphere", seed=7)
        np.testing.assert_array_equal(s.materialize(5, 3, np.random.default_rng(1)),
                                      s.materialize(5, 3, np.random.default_rng(2)))


def test_json_round_trip():
    inst = po_instance(T=50)
    doc = instance_to_dict(inst)
    back = instance_from_dict(doc, 50)
    np.testing.assert_array_equal(back.theta_win, inst.theta_win)
    assert back.hob == inst.hob and back.schedule == inst.schedule
    adv = constant_schedule(20, 0.7, 0.1, lower_bound_mixture(), L=50)
    assert instance_to_dict(instance_from_dict(instance_to_dict(adv), 20)) == instance_to_dict(adv)


def test_stream_independent_draw_order():
    inst = po_instance(T=200)
    a = generate_stream(inst, np.random.default_rng(9))
    b = generate_stream(inst, np.random.default_rng(9))
    np.testing.assert_array_equal(a.hob, b.hob)
    np.testing.assert_array_equal(a.v_win, b.v_win)
