"""Property suites: lemma-level checks runnable from the CLI and the tests.

Each suite returns a :class:`SuiteResult` with a pass flag, the number of
checks and failures, and the smallest slack observed (negative slack means a
violation). :func:`run_property_suites` runs a selection and returns a
JSON-serializable report.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import isqrt

import numpy as np
from scipy.optimize import brentq

from .auction_core import DiscreteHob, EmpiricalCdf, MixtureHob, UniformHob, grid_argmax
from .environments import (ContextSchedule, IidHob, LinearPoInstance, LinearTeInstance, QuadraticBaseline,
                           generate_stream, lecam_pair, lower_bound_delta)
from .hob_estimation import CdfEstimate, PerfectOracle
from .numerics import elliptical_potential_audit
from .policy_linpo import SupLinPoPolicy
from .policy_linte import ConstantsConfig, SupLinTePolicy, base_evaluate_te, ipw_value, LinTeStage, truncate_bid


@dataclass
class SuiteResult:
    name: str
    passed: bool
    n_checks: int
    n_failures: int
    min_margin: float
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.n_checks} checks, {self.n_failures} failures, "
                f"min margin {self.min_margin:.3g}")


def _result(name, margins, t0, **details) -> SuiteResult:
    m = np.asarray(margins, dtype=float)
    fails = int(np.sum(m < 0))
    return SuiteResult(name, fails == 0, int(m.size), fails, float(m.min()) if m.size else np.inf,
                       time.perf_counter() - t0, details)


def _random_uniform_mixture(rng, k_max: int = 3) -> MixtureHob:
    k = int(rng.integers(1, k_max + 1))
    comps = []
    for _ in range(k):
        width = rng.uniform(0.02, 0.6)
        lo = rng.uniform(0.0, 1.0 - width)
        comps.append(UniformHob(lo, lo + width))
    w = rng.dirichlet(np.ones(k))
    w[-1] = 1.0 - w[:-1].sum()
    return MixtureHob(tuple(comps), tuple(w))


def _breakpoints(*mixtures) -> np.ndarray:
    pts = [0.0, 1.0]
    for m in mixtures:
        for c in m.components:
            pts += [c.lo, c.hi]
    return np.unique(pts)


# ----------------------------------------------------------------------------
# exact-inequality suites


def elliptical_suite(n_streams: int = 100, seed: int = 0) -> SuiteResult:
    """Potential sum against its log bound on random streams, ``d = 1..8``."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    margins = []
    for i in range(n_streams):
        d = 1 + i % 8
        n = int(rng.integers(1, 400))
        Z = rng.normal(size=(n, d))
        Z *= (rng.uniform(0, 1, size=n) ** (1 / d) / np.linalg.norm(Z, axis=1))[:, None]
        reg = float(rng.choice([1.0, 1.0, 2.0, 5.0]))
        try:
            total, bound = elliptical_potential_audit(Z, reg=reg)
        except AssertionError:
            margins.append(-1.0)
            continue
        margins.append(bound - total)
    return _result("elliptical", margins, t0)


def truncation_suite(n_tuples: int = 1000, seed: int = 1) -> SuiteResult:
    """Truncation step on random ``(G, G_hat, bid, v)`` with a known sup
    distance ``eps = 2 delta``: ``z <= G_hat(b') <= 1 - z + 2 eps`` and the
    payoff loss under ``G_hat`` is at most ``z + 2 eps``."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    margins = []
    for _ in range(n_tuples):
        G = _random_uniform_mixture(rng)
        if rng.random() < 0.5:
            n = int(rng.integers(5, 400))
            x = np.sort(G.sample(rng, size=n))
            Gx = G(x)
            i = np.arange(1, n + 1)
            eps = float(max(np.max(i / n - Gx), np.max(Gx - (i - 1) / n)))
            Ghat = EmpiricalCdf.from_sorted(x)
        else:
            H = _random_uniform_mixture(rng)
            a = rng.uniform(0.0, 0.3)
            comps = G.components + H.components
            w = [*(np.asarray(G.weights) * (1 - a)), *(np.asarray(H.weights) * a)]
            w[-1] = 1.0 - sum(w[:-1])
            Ghat = MixtureHob(comps, tuple(w))
            bp = _breakpoints(G, H)
            eps = float(np.max(np.abs(G(bp) - Ghat(bp))))  # both piecewise linear
        delta = eps / 2
        gamma = rng.uniform(1.0, 30.0)
        d = int(rng.integers(1, 9))
        T = int(rng.integers(100, 10**6))
        bid, v = rng.uniform(0, 1), rng.uniform(0, 1)
        est = CdfEstimate(Ghat, delta=delta)
        b2, z = truncate_bid(bid, est, gamma, d, T, delta)
        g1, g2 = float(Ghat(bid)), float(Ghat(b2))
        loss = g1 * (v - bid) - g2 * (v - b2)
        margins.append(min(g2 - z, 1 - z + 2 * eps - g2, z + 2 * eps - loss))
    return _result("truncation", margins, t0)


def monotone_suite(n_cdfs: int = 1000, grid_size: int = 1001, seed: int = 2) -> SuiteResult:
    """For step CDFs and ``v1 < v2``, the largest grid maximizer of
    ``G(b) (v - b)`` is nondecreasing in ``v``."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, grid_size)
    margins = []
    for _ in range(n_cdfs):
        k = int(rng.integers(1, 11))
        atoms = rng.choice(grid, size=k, replace=False) if rng.random() < 0.5 else rng.uniform(0, 1, k)
        p = rng.dirichlet(np.ones(k))
        p[-1] = 1.0 - p[:-1].sum()
        G = DiscreteHob(tuple(atoms), tuple(p))
        g = G(grid)
        v1, v2 = np.sort(rng.uniform(-0.2, 1.2, size=2))
        b1 = grid_argmax(lambda b: g * (v1 - grid), grid)[0]
        b2 = grid_argmax(lambda b: g * (v2 - grid), grid)[0]
        margins.append(b2 - b1)
    return _result("monotone", margins, t0)


_W3 = np.ones(3) / np.sqrt(3)


def _te_instance(T: int, theta=(0.5, *(0.3 * _W3))) -> LinearTeInstance:
    return LinearTeInstance(np.asarray(theta), ContextSchedule("intercept_sphere", radius=0.8, intercept=0.6),
                            IidHob(UniformHob(0.2, 0.6)), 2.5, T, QuadraticBaseline(0.3, 0.2, coord=1))


def _po_instance(T: int) -> LinearPoInstance:
    w2 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    return LinearPoInstance(np.array([0.9, *(0.3 * _W3)]), np.array([0.3, *(0.2 * w2)]),
                            ContextSchedule("intercept_sphere", radius=0.8, intercept=0.6),
                            IidHob(UniformHob(0.2, 0.6)), 2.5, T)


def _run_audited_te(instance, T: int, consts: ConstantsConfig, seed: int, grid_size: int = 200):
    rng = np.random.default_rng(seed)
    stream = generate_stream(instance, rng)
    oracle = PerfectOracle(lambda t, x: instance.hob.distribution(t, x))
    pol = SupLinTePolicy(T, instance.d, consts, grid=np.linspace(0, 1, grid_size))
    pol.audit = []
    for t in range(T):
        x = stream.contexts[t]
        est = oracle.estimate(x)
        bid, _ = pol.act(x, est)
        won = bid >= stream.hob[t]
        pol.update(x, bid, stream.hob[t], stream.v_win[t] if won else stream.v_lose[t], est)
        oracle.observe(x, stream.hob[t])
    return pol.audit


def interval_order_suite(n_random: int = 1000, seed: int = 3) -> SuiteResult:
    """``b_{*,1} <= b_{*,0}``: on random stage states and estimates, and on
    every audited stage of short SUP-LIN-TE runs."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    margins = []
    consts = ConstantsConfig()
    grid = np.linspace(0, 1, 501)
    for _ in range(n_random):
        d = int(rng.integers(1, 6))
        stage = LinTeStage(d)
        for _ in range(int(rng.integers(0, 30))):
            x = rng.normal(size=d)
            x /= max(1.0, np.linalg.norm(x))
            stage.gram.update(x, rng.uniform(0, 0.25))
            stage.target = stage.target + rng.normal(size=d)
        stage.delta_sq_sum = rng.uniform(0, 5)
        x = rng.normal(size=d)
        x /= max(1.0, np.linalg.norm(x))
        G = DiscreteHob(tuple(rng.uniform(0, 1, 5)), tuple(np.full(5, 0.2)))
        ev = base_evaluate_te(stage, grid, G(grid), x, 1000, consts)
        margins.append(grid[ev.i_star0] - grid[ev.i_star1])
    n_rounds = 0
    for T, c, s in ((400, ConstantsConfig(L=2.5), 0),
                    (600, ConstantsConfig(c1=0.05, c2=0.05, c3=0.05, L=2.5), 1)):
        for rec in _run_audited_te(_te_instance(T), T, c, s):
            n_rounds += 1
            margins.extend(st["b_star_0"] - st["b_star_1"] for st in rec)
    return _result("interval_order", margins, t0, audited_rounds=n_rounds)


def lemma51_bounds(g_hat: float, delta: float, G: float, n_means: int = 11) -> tuple[float, float]:
    """Worst bias and variance of the truncated IPW estimate at one
    ``(G_hat, delta, G)``, over outcomes in ``[0, 1]``.

    The bias is affine in the outcome means, so corners suffice; the
    variance is maximized over a grid of Bernoulli means.
    """
    A = 1.0 / max(delta * delta, g_hat)
    B = 1.0 / max(delta * delta, 1.0 - g_hat)
    a, c = G * A - 1.0, (1.0 - G) * B - 1.0
    bias = max(abs(a), abs(c), abs(a - c))
    p = np.linspace(0.0, 1.0, n_means)
    p1, p0 = np.meshgrid(p, p)
    second = G * A * A * p1 + (1 - G) * B * B * p0
    first = G * A * p1 - (1 - G) * B * p0
    return float(bias), float(np.max(second - first**2))


def feasible_extremes(g_hat: float, delta: float, n: int = 20001) -> tuple[float, float]:
    """Smallest and largest ``G`` with ``|G_hat - G| <= delta sqrt(G(1-G)) +
    delta^2``: the adversarial truths at the boundary of the band."""
    def slack(G):
        return delta * np.sqrt(np.clip(G * (1 - G), 0, None)) + delta**2 - abs(g_hat - G)

    grid = np.linspace(0.0, 1.0, n)
    s = slack(grid)
    ok = np.flatnonzero(s >= 0)
    lo_i, hi_i = ok[0], ok[-1]
    lo = grid[lo_i] if lo_i == 0 else brentq(slack, grid[lo_i - 1], grid[lo_i], xtol=1e-15)
    hi = grid[hi_i] if hi_i == n - 1 else brentq(slack, grid[hi_i], grid[hi_i + 1], xtol=1e-15)
    return float(lo), float(hi)


def lemma51_suite(n_g: int = 20, n_delta: int = 10, c_bias: float = 10 * np.sqrt(6),
                  c_var: float = 16.0) -> SuiteResult:
    """Bias ``<= c_bias sigma delta`` and variance ``<= c_var max(1/G_hat,
    1/(1-G_hat))`` on a ``n_g x n_delta`` grid, with ``G`` at both extremes
    of the estimation band."""
    t0 = time.perf_counter()
    logit = np.linspace(-7.0, 7.0, n_g)
    g_vals = 1.0 / (1.0 + np.exp(-logit))
    deltas = np.geomspace(1e-3, 0.1, n_delta)
    margins, worst = [], {}
    for gh in g_vals:
        sigma = 1.0 / np.sqrt(gh * (1 - gh))
        vbound = c_var * max(1 / gh, 1 / (1 - gh))
        for dl in deltas:
            for G in feasible_extremes(gh, dl):
                bias, var = lemma51_bounds(gh, dl, G)
                mb = (c_bias * sigma * dl - bias) / (c_bias * sigma * dl)
                mv = (vbound - var) / vbound
                margins += [mb, mv]
                if not worst or min(mb, mv) < worst["margin"]:
                    worst = {"margin": float(min(mb, mv)), "g_hat": float(gh), "delta": float(dl), "G": G}
    return _result("lemma51", margins, t0, worst=worst, relative_margins=True)


def lecam_suite(horizons=(100, 10**4, 10**6), step_den: int = 10**5) -> SuiteResult:
    """Exact rational sweep: for the two-point pair with ``Delta = 1/(4
    sqrt T)``, every bid ``k / step_den`` has ``gap_1 + gap_2 >= Delta / 2``.

    Horizons must be perfect squares so that ``Delta`` is rational.
    """
    t0 = time.perf_counter()
    margins, per_T = [], {}
    for T in horizons:
        r = isqrt(T)
        if r * r != T:
            raise ValueError("horizons must be perfect squares for an exact sweep")
        D = Fraction(1, 4 * r)
        a, b = lecam_pair(float(D))
        comps = [(Fraction(str(c.lo)), Fraction(str(c.hi)), Fraction(str(w)))
                 for c, w in zip(a.mixture.components, a.mixture.weights)]

        def G(x):
            s = Fraction(0)
            for lo, hi, w in comps:
                if x >= hi:
                    s += w
                elif x > lo:
                    s += w * (x - lo) / (hi - lo)
            return s

        mu1, mu2 = Fraction(1, 4) - D, Fraction(1, 4) + D
        bids = [Fraction(k, step_den) for k in range(step_den + 1)]
        gs = [G(x) for x in bids]
        r1 = [g * (mu1 - x) for g, x in zip(gs, bids)]
        r2 = [g * (mu2 - x) for g, x in zip(gs, bids)]
        m1, m2 = max(r1), max(r2)
        slack = min((m1 - u) + (m2 - w) for u, w in zip(r1, r2)) - D / 2
        margins.append(float(slack))
        per_T[T] = {"delta": float(D), "min_slack": str(slack)}
        assert float(D) == lower_bound_delta(T)
    return _result("lecam", margins, t0, horizons=per_T)


# ----------------------------------------------------------------------------
# Monte Carlo suites


def ipw_suite(n_rounds: int = 10**5, seed: int = 4, bids=(0.3, 0.45)) -> SuiteResult:
    """With the true CDF (``delta = 0``) the IPW estimate at fixed ``(x, b)``
    averages to the effect within four standard errors."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    inst = _te_instance(n_rounds)
    x = np.array([0.6, 0.8, 0.0, 0.0])
    mw, ml = inst.mean_outcomes(1, x)
    G = inst.hob.G
    margins, info = [], {}
    for b in bids:
        g = float(G(b))
        M = G.sample(rng, size=n_rounds)
        won = b >= M
        v = np.where(won, rng.random(n_rounds) < mw, rng.random(n_rounds) < ml).astype(float)
        e = np.array([ipw_value(g, 0.0, vi, w) for vi, w in zip(v, won)])
        se = e.std(ddof=1) / np.sqrt(n_rounds)
        err = abs(e.mean() - (mw - ml))
        margins.append(4 * se - err)
        info[str(b)] = {"mean": float(e.mean()), "effect": float(mw - ml), "se": float(se)}
    return _result("ipw", margins, t0, **info)


def survival_suite(n_runs: int = 200, T: int = 256, seed: int = 5, grid_size: int = 200,
                   required: float = 0.95) -> SuiteResult:
    """SUP-LIN-PO with the true CDF: in each run, the best grid bid under the
    true payoff survives every stage, and every stage-``s`` candidate is
    within ``8 * 2^-s`` of it. Passes if at least ``required`` of the runs
    are clean; confidence-event failures are counted alongside."""
    t0 = time.perf_counter()
    grid = np.linspace(0, 1, grid_size)
    clean, width_events = 0, 0
    worst = np.inf
    for r in range(n_runs):
        inst = _po_instance(T)
        rng = np.random.default_rng([seed, r])
        stream = generate_stream(inst, rng)
        g = inst.hob.G(grid)
        pol = SupLinPoPolicy(T, inst.d, grid=grid)
        pol.audit = []
        ok, events_ok = True, True
        for t in range(T):
            x = stream.contexts[t]
            est = CdfEstimate(inst.hob.G, eps=0.0, delta=0.0)
            bid, _ = pol.act(x, est)
            mw, ml = inst.mean_outcomes(t + 1, x)
            true_r = g * (mw - ml - grid) + ml
            best = int(np.flatnonzero(true_r == true_r.max())[-1])
            for st in pol.audit[-1]:
                cand, s = st["candidates"], st["stage"]
                if not np.all(np.abs(st["r_hat"] - true_r[cand]) <= st["width"]):
                    events_ok = False
                gap_room = 8 * 2.0**-s - (true_r.max() - true_r[cand].min())
                worst = min(worst, gap_room)
                if best not in cand or gap_room < 0:
                    ok = False
            won = bid >= stream.hob[t]
            pol.update(x, bid, stream.hob[t], stream.v_win[t] if won else stream.v_lose[t])
        clean += ok
        width_events += events_ok
    frac = clean / n_runs
    res = _result("survival", [frac - required], t0, clean_fraction=frac,
                  runs_with_all_width_events=width_events, min_gap_room=float(worst))
    res.n_checks = n_runs
    return res


SUITES = {
    "elliptical": elliptical_suite,
    "truncation": truncation_suite,
    "monotone": monotone_suite,
    "interval_order": interval_order_suite,
    "lemma51": lemma51_suite,
    "lecam": lecam_suite,
    "ipw": ipw_suite,
    "survival": survival_suite,
}
GROUPS = {
    "all": tuple(SUITES),
    "exact": ("elliptical", "truncation", "monotone", "interval_order"),
}


def run_property_suites(selector: str = "all") -> dict:
    """Run the suites named by ``selector`` (a suite name, a group name, or
    a comma-separated list) and return a report with one entry per suite
    and an overall ``passed`` flag."""
    names = []
    for part in selector.split(","):
        part = part.strip()
        if part in GROUPS:
            names += GROUPS[part]
        elif part in SUITES:
            names.append(part)
        else:
            raise ValueError(f"unknown suite {part!r}; choose from {sorted(SUITES) + sorted(GROUPS)}")
    results = [SUITES[n]() for n in dict.fromkeys(names)]
    return {"passed": all(r.passed for r in results),
            "suites": [asdict(r) for r in results],
            "lines": [r.line() for r in results]}
