"""Staged elimination for the linear treatment-effect model.

Only the effect ``v_win - v_lose`` is linear, so each stage regresses a
truncated inverse-propensity estimate of the effect on the context with
weighted least squares, weights ``G_hat(b) (1 - G_hat(b))`` at the played
bid. Two upper confidence bounds are formed per bid; ``u0`` loses little
when ``G_hat`` is small and ``u1`` when it is large, and the master picks
one per stage based on ``G_hat`` at the ``u1`` maximizer. Played bids are
finally clipped between two quantiles of ``G_hat`` so the propensity of
winning never gets too close to 0 or 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .auction_core import argmax_values, quantile
from .numerics import GramMatrix, mahalanobis, ridge_solve
from .policy_linpo import LAMBDA, _ghat_values, policy_grid, stage_count

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstantsConfig:
    """Absolute constants of the treatment-effect learner.

    ``c1, c2`` enter the confidence radius ``gamma``, ``c3`` the width;
    ``c_bias`` and ``c_var`` are the bias and variance constants of the
    truncated IPW estimate; ``L`` is the known density bound.
    """

    c1: float = 3.0
    c2: float = 3.0
    c3: float = 80.0
    c_bias: float = 10 * np.sqrt(6)
    c_var: float = 16.0
    L: float = 1.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"constant {k} must be positive")


def _delta_of(ghat) -> float:
    d = getattr(ghat, "delta", None)
    if d is None:
        d = getattr(ghat, "eps", None)
    return 0.0 if d is None else float(d)


def _floor(delta: float) -> float:
    # clamp level delta^2, kept below 1/2 so that [f, 1 - f] is nonempty
    return min(delta * delta, 0.5)


def ipw_value(g: float, delta: float, observed: float, won: bool) -> float:
    """Truncated IPW effect estimate from ``g = G_hat(bid)``."""
    if won:
        return observed / max(delta * delta, g)
    return -observed / max(delta * delta, 1.0 - g)


def truncated_ipw(bid: float, hob: float, observed: float, won: bool, ghat) -> float:
    """``observed / max(delta^2, G_hat(b))`` on a win and
    ``-observed / max(delta^2, 1 - G_hat(b))`` on a loss."""
    if won != (bid >= hob):
        raise ValueError("won flag inconsistent with bid >= hob")
    return ipw_value(float(ghat(bid)), _delta_of(ghat), observed, won)


def inverse_variance_weight(g, delta: float):
    """``sigma^{-2} = g (1 - g)`` after clamping ``g`` into
    ``[delta^2, 1 - delta^2]``."""
    f = _floor(delta)
    g = np.clip(np.asarray(g, dtype=float), f, 1.0 - f)
    return g * (1.0 - g)


def variance_proxy(bid, ghat) -> float:
    """``sigma(b) = 1 / sqrt(G_hat(b) (1 - G_hat(b)))`` with the clamp;
    infinite when ``delta = 0`` and ``G_hat(b)`` is 0 or 1."""
    w = float(inverse_variance_weight(ghat(bid), _delta_of(ghat)))
    return np.inf if w == 0 else 1.0 / np.sqrt(w)


@dataclass
class LinTeStage:
    dim: int
    gram: GramMatrix = None
    target: np.ndarray = None
    index_set: list = field(default_factory=list)
    delta_sq_sum: float = 0.0

    def __post_init__(self):
        self.gram = self.gram or GramMatrix(self.dim, LAMBDA)
        self.target = np.zeros(self.dim) if self.target is None else self.target

    def gamma(self, T: int, consts: ConstantsConfig) -> float:
        return float(LAMBDA + consts.c1 * np.log(2 * T) + consts.c2 * np.sqrt(self.delta_sq_sum))


@dataclass
class SupLinTeState:
    stages: list
    bid_grid: np.ndarray
    horizon: int
    recorded: set = field(default_factory=set)
    n_interval_fallback: int = 0

    @classmethod
    def start(cls, T: int, d: int, grid=None) -> "SupLinTeState":
        grid = policy_grid(T) if grid is None else np.asarray(grid, dtype=float)
        return cls([LinTeStage(d) for _ in range(stage_count(T))], grid, int(T))

    @property
    def S(self) -> int:
        return len(self.stages)


@dataclass
class TeEvaluation:
    u0: np.ndarray
    u1: np.ndarray
    width: np.ndarray
    i_star0: int
    i_star1: int
    gamma: float
    x_norm: float
    effect_hat: float


def base_evaluate_te(stage: LinTeStage, candidates, ghat, x, T: int, consts: ConstantsConfig) -> TeEvaluation:
    """Upper confidence bounds ``u0, u1``, widths, and the indices (into
    ``candidates``) of their maximizers, ties going to the largest bid.

    The maximizers are taken on ``G_hat(b) (v - b)`` with ``v`` the upper or
    lower effect bound; ``u0`` and ``u1`` differ from these only by
    constants in ``b``.
    """
    b = np.asarray(candidates, dtype=float)
    g = _ghat_values(ghat, b)
    x = np.asarray(x, dtype=float)
    effect = float(ridge_solve(stage.gram, stage.target) @ x)
    m = mahalanobis(stage.gram, x)
    gamma = stage.gamma(T, consts)
    v_hi, v_lo = effect + gamma * m, effect - gamma * m
    core0 = g * (v_hi - b)
    core1 = g * (v_lo - b)
    u0 = core0
    u1 = core1 - v_lo
    w = consts.c3 * consts.L * gamma * (g * (1 - g) * m + gamma * m * m)
    return TeEvaluation(u0, u1, w, argmax_values(core0, "max"), argmax_values(core1, "max"),
                        gamma, m, effect)


def criterion_select(ghat, b_star_1: float, L: float) -> int:
    """1 when ``G_hat(b_{*,1}) > 1 / (40 L)``, else 0."""
    g = float(ghat(b_star_1)) if callable(ghat) else float(ghat)
    return int(g > 1.0 / (40.0 * L))


def master_step_te(state: SupLinTeState, x, ghat, consts: ConstantsConfig,
                   force_criterion: int | None = None, audit: list | None = None):
    """Pick the pre-truncation bid.

    Returns ``(bid, tag, gamma_t, info)``; ``tag`` is the exploring stage
    or ``"exploit"``, ``gamma_t`` comes from the stage that produced the bid
    (the deepest stage reached when exploiting). ``force_criterion`` pins
    the criterion for ablations.
    """
    grid = state.bid_grid
    g_all = _ghat_values(ghat, grid)
    cand = np.arange(grid.size)
    T = state.horizon
    for s in range(1, state.S + 1):
        ev = base_evaluate_te(state.stages[s - 1], grid[cand], g_all[cand], x, T, consts)
        i_crit = criterion_select(g_all[cand[ev.i_star1]], None, consts.L)
        if force_criterion is not None:
            i_crit = int(force_criterion)
        u = ev.u1 if i_crit == 1 else ev.u0
        info = {"criterion": i_crit, "b_star_0": float(grid[cand[ev.i_star0]]),
                "b_star_1": float(grid[cand[ev.i_star1]]), "x_norm": ev.x_norm}
        if audit is not None:
            audit.append({"stage": s, "candidates": cand.copy(), "u0": ev.u0, "u1": ev.u1,
                          "width": ev.width, "criterion": i_crit, "g_star_1": float(g_all[cand[ev.i_star1]]),
                          **info})
        level = 2.0**-s
        wide = np.flatnonzero(ev.width > level)
        if wide.size:
            j = wide[0]
            return float(grid[cand[j]]), s, ev.gamma, {**info, "width": float(ev.width[j])}
        if np.all(ev.width <= 1.0 / np.sqrt(T)):
            j = argmax_values(u, "max")
            return float(grid[cand[j]]), "exploit", ev.gamma, {**info, "width": float(ev.width[j])}
        j_star = ev.i_star1 if i_crit == 1 else ev.i_star0
        keep = u >= u[j_star] - 2 * level
        lo, hi = min(ev.i_star1, ev.i_star0), max(ev.i_star1, ev.i_star0)
        if ev.i_star1 > ev.i_star0:
            logger.warning("maximizer order reversed at stage %d", s)
        pos = np.arange(cand.size)
        keep &= (pos >= lo) & (pos <= hi)
        if not keep.any():
            state.n_interval_fallback += 1
            logger.warning("empty candidate set after interval clip; keeping the maximizer")
            keep[j_star] = True
        cand = cand[keep]
    logger.warning("stage loop exhausted; exploiting the last candidate set")
    return float(grid[cand[-1]]), "exploit", ev.gamma, {**info, "width": float(ev.width[-1])}


def truncation_level(gamma_t: float, d: int, T: int, delta: float) -> float:
    """``z = min(gamma_t sqrt(d / T) + 4 delta, 1/2)``."""
    return float(min(gamma_t * np.sqrt(d / T) + 4.0 * delta, 0.5))


def truncate_bid(bid: float, ghat, gamma_t: float, d: int, T: int, delta: float, grid=None,
                 g_grid=None) -> tuple[float, float]:
    """Clip ``bid`` into ``[G_hat^{-1}(z), G_hat^{-1}(1 - z)]``.

    With a ``grid`` the generalized inverse is taken over grid points
    (smallest grid bid with ``G_hat >= level``), so the result stays on the
    grid. Returns ``(bid, z)``.
    """
    z = truncation_level(gamma_t, d, T, delta)
    if grid is None:
        lo, hi = quantile(ghat, z), quantile(ghat, 1.0 - z)
    else:
        grid = np.asarray(grid, dtype=float)
        g = _ghat_values(ghat, grid) if g_grid is None else g_grid
        k = np.searchsorted(g, [z, 1.0 - z], side="left")
        lo, hi = (float(grid[min(i, grid.size - 1)]) for i in k)
    return float(min(max(bid, lo), hi)), z


def record_feedback_te(state: SupLinTeState, tag, t: int, x, bid: float, hob: float, observed: float,
                       ghat, delta: float | None = None) -> SupLinTeState:
    """Add round ``t`` to its exploring stage: weight ``sigma^{-2}``, target
    ``sigma^{-2} x e_tilde`` and ``delta^2``."""
    if t in state.recorded:
        raise ValueError(f"round {t} already recorded")
    state.recorded.add(t)
    if tag == "exploit":
        return state
    delta = _delta_of(ghat) if delta is None else float(delta)
    g = float(ghat(bid)) if callable(ghat) else float(ghat)
    won = bid >= hob
    e_tilde = ipw_value(g, delta, observed, won)
    weight = float(inverse_variance_weight(g, delta))
    stage = state.stages[int(tag) - 1]
    x = np.asarray(x, dtype=float)
    stage.gram.update(x, weight)
    stage.target = stage.target + weight * e_tilde * x
    stage.delta_sq_sum += delta * delta
    stage.index_set.append(t)
    return state


class SupLinTePolicy:
    name = "suplinte"

    def __init__(self, T: int, d: int, consts: ConstantsConfig, rng=None, grid=None,
                 force_criterion: int | None = None):
        self.state = SupLinTeState.start(T, d, grid)
        self.consts = consts
        self.d, self.T = int(d), int(T)
        self.force_criterion = force_criterion
        self.t = 0
        self._tag = None
        self.audit: list | None = None

    @property
    def grid(self) -> np.ndarray:
        return self.state.bid_grid

    def act(self, x, estimate):
        self.t += 1
        grid = self.state.bid_grid
        g_grid = np.asarray(estimate(grid), dtype=float)
        if self.audit is not None:
            self.audit.append([])
        raw, tag, gamma_t, info = master_step_te(self.state, x, g_grid, self.consts, self.force_criterion,
                                                 self.audit[-1] if self.audit is not None else None)
        delta = _delta_of(estimate)
        bid, z = truncate_bid(raw, None, gamma_t, self.d, self.T, delta, grid, g_grid)
        self._tag = tag
        info.update(stage=tag, raw_bid=raw, z=z, gamma=gamma_t, delta=delta,
                    sigma=variance_proxy(bid, estimate))
        return bid, info

    def update(self, x, bid, hob, observed, estimate):
        record_feedback_te(self.state, self._tag, self.t, x, bid, hob, observed, estimate)
