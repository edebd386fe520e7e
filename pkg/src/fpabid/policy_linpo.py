"""Staged elimination for linear potential outcomes.

The master keeps ``S`` independent stages. Each stage runs ridge regression
of the observed outcome on the context separately for won and lost rounds,
and scores a bid by

    r(b) = G_hat(b) (theta_win^T x - b) + (1 - G_hat(b)) theta_lose^T x

with a confidence width ``w(b)`` mixing the two Mahalanobis norms. A round
is explored in the first stage whose widths are too large; otherwise the
candidate set is pruned and the next stage consulted, or the bidder exploits
once all widths are below ``1 / sqrt(T)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .auction_core import argmax_values
from .numerics import GramMatrix, mahalanobis, ridge_solve

logger = logging.getLogger(__name__)

LAMBDA = 1.0
DEFAULT_GRID_SIZE = 2000


def stage_count(T: int) -> int:
    """``ceil(log2 sqrt(T))`` computed in integers (smallest ``S`` with
    ``4^S >= T``), and at least one."""
    S = 0
    while 4**S < T:
        S += 1
    return max(S, 1)


def policy_grid(T: int, size: int | None = None) -> np.ndarray:
    """Uniform bid grid on [0, 1] with ``min(T, 2000)`` points by default."""
    n = min(T, DEFAULT_GRID_SIZE) if size is None else size
    return np.linspace(0.0, 1.0, max(int(n), 2))


def confidence_beta(T: int) -> float:
    """``sqrt(log(2T))`` with the natural logarithm."""
    return float(np.sqrt(np.log(2 * T)))


def _ghat_values(ghat, candidates):
    if callable(ghat):
        return np.asarray(ghat(np.asarray(candidates, dtype=float)), dtype=float)
    return np.asarray(ghat, dtype=float)


@dataclass
class LinPoStage:
    """Ridge statistics of one stage, split by auction result."""

    dim: int
    gram_win: GramMatrix = None
    gram_lose: GramMatrix = None
    target_win: np.ndarray = None
    target_lose: np.ndarray = None
    index_set: list = field(default_factory=list)

    def __post_init__(self):
        self.gram_win = self.gram_win or GramMatrix(self.dim, LAMBDA)
        self.gram_lose = self.gram_lose or GramMatrix(self.dim, LAMBDA)
        self.target_win = np.zeros(self.dim) if self.target_win is None else self.target_win
        self.target_lose = np.zeros(self.dim) if self.target_lose is None else self.target_lose


@dataclass
class SupLinPoState:
    stages: list
    bid_grid: np.ndarray
    horizon: int
    recorded: set = field(default_factory=set)
    n_exploit: int = 0

    @classmethod
    def start(cls, T: int, d: int, grid=None) -> "SupLinPoState":
        grid = policy_grid(T) if grid is None else np.asarray(grid, dtype=float)
        return cls([LinPoStage(d) for _ in range(stage_count(T))], grid, int(T))

    @property
    def S(self) -> int:
        return len(self.stages)


def base_evaluate(stage: LinPoStage, candidates, ghat, x, T: int):
    """Reward estimates and widths for ``candidates``.

    ``ghat`` is an estimate (callable) or the precomputed values of
    ``G_hat`` at the candidates. Returns ``(r_hat, w)``.
    """
    b = np.asarray(candidates, dtype=float)
    g = _ghat_values(ghat, b)
    x = np.asarray(x, dtype=float)
    v_win = ridge_solve(stage.gram_win, stage.target_win) @ x
    v_lose = ridge_solve(stage.gram_lose, stage.target_lose) @ x
    r_hat = g * (v_win - b) + (1 - g) * v_lose
    scale = confidence_beta(T) + LAMBDA
    w = scale * (g * mahalanobis(stage.gram_win, x) + (1 - g) * mahalanobis(stage.gram_lose, x))
    return r_hat, w


def master_step(state: SupLinPoState, x, ghat, audit: list | None = None):
    """Pick the round's bid. Returns ``(bid, tag, width)`` with ``tag`` the
    1-based stage that explored, or ``"exploit"``.

    ``audit``, if given, receives one record per visited stage with the
    candidate indices, estimates and widths.
    """
    grid = state.bid_grid
    g_all = _ghat_values(ghat, grid)
    cand = np.arange(grid.size)
    T = state.horizon
    for s in range(1, state.S + 1):
        r_hat, w = base_evaluate(state.stages[s - 1], grid[cand], g_all[cand], x, T)
        level = 2.0**-s
        if audit is not None:
            audit.append({"stage": s, "candidates": cand.copy(), "r_hat": r_hat, "width": w})
        wide = np.flatnonzero(w > level)
        if wide.size:
            i = wide[0]  # smallest qualifying bid
            return float(grid[cand[i]]), s, float(w[i])
        if np.all(w <= 1.0 / np.sqrt(T)):
            i = argmax_values(r_hat, "max")
            state.n_exploit += 1
            return float(grid[cand[i]]), "exploit", float(w[i])
        ucb = r_hat + w
        keep = ucb >= ucb.max() - 2 * level
        cand = cand[keep]
    # unreachable in exact arithmetic: at s = S every width is <= 1/sqrt(T)
    logger.warning("stage loop exhausted; exploiting the last candidate set")
    i = argmax_values(r_hat[keep], "max")
    return float(grid[cand[i]]), "exploit", float(w[keep][i])


def record_feedback(state: SupLinPoState, tag, t: int, x, bid: float, hob: float, observed: float) -> SupLinPoState:
    """Add round ``t`` to the stage that explored it (won rounds feed the
    win regression, lost rounds the lose regression)."""
    if t in state.recorded:
        raise ValueError(f"round {t} already recorded")
    state.recorded.add(t)
    if tag == "exploit":
        return state
    stage = state.stages[int(tag) - 1]
    x = np.asarray(x, dtype=float)
    if bid >= hob:
        stage.gram_win.update(x)
        stage.target_win = stage.target_win + observed * x
    else:
        stage.gram_lose.update(x)
        stage.target_lose = stage.target_lose + observed * x
    stage.index_set.append(t)
    return state


class SupLinPoPolicy:
    name = "suplinpo"

    def __init__(self, T: int, d: int, rng=None, grid=None):
        self.state = SupLinPoState.start(T, d, grid)
        self.t = 0
        self._tag = None
        self.audit: list | None = None

    @property
    def grid(self) -> np.ndarray:
        return self.state.bid_grid

    def act(self, x, estimate):
        self.t += 1
        if self.audit is not None:
            self.audit.append([])
        bid, tag, width = master_step(self.state, x, estimate,
                                      self.audit[-1] if self.audit is not None else None)
        self._tag = tag
        return bid, {"stage": tag, "width": width}

    def update(self, x, bid, hob, observed, estimate=None):
        record_feedback(self.state, self._tag, self.t, x, bid, hob, observed)
