"""Exponential weights over a finite bid grid with full-HOB feedback.

Each round the bidder draws a grid bid from ``p``, sees the HOB ``M`` and
one potential outcome, and builds an importance-weighted payoff estimate for
*every* grid bid: bids on the same side of ``M`` as the drawn bid would
have produced the same outcome, so their payoff is known up to the
probability of landing on that side.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

GRID_CAP = 10_000
RENORM_THRESHOLD = 2.0**300


def default_learning_rate(T: int, grid_size: int) -> float:
    """``sqrt(log K / ((4e - 2) T))``; requires ``log K < (e - 1) T``."""
    if T < 1 or grid_size < 1:
        raise ValueError("T and grid_size must be positive")
    if not np.log(grid_size) < (np.e - 1) * T:
        raise ValueError("learning-rate hypothesis log K < (e - 1) T violated")
    return float(np.sqrt(np.log(grid_size) / ((4 * np.e - 2) * T)))


def make_grid(T: int, cap: int = GRID_CAP) -> tuple[np.ndarray, bool]:
    """The grid ``{k / T : k = 1..T}``; above ``cap`` points it is thinned to
    ``{j / cap : j = 1..cap}``. Returns ``(grid, capped)``."""
    if T < 1:
        raise ValueError("T must be positive")
    if T <= cap:
        return np.arange(1, T + 1) / T, False
    return np.arange(1, cap + 1) / cap, True


@dataclass
class Exp3State:
    """Mutable per-run state.

    ``weights`` are kept within ``[1/threshold, threshold]`` of each other's
    maximum by rescaling with a power of two, which leaves every ratio, and
    hence the action distribution, bit-for-bit unchanged.
    """

    grid: np.ndarray
    weights: np.ndarray
    eta: float
    t: int = 1
    renorm_threshold: float = RENORM_THRESHOLD
    n_renorm: int = 0

    @classmethod
    def start(cls, grid, eta: float, renorm_threshold: float = RENORM_THRESHOLD) -> "Exp3State":
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be a nonempty strictly increasing array")
        if not 0.0 <= eta < 0.5:
            raise ValueError("eta must lie in [0, 1/2)")
        if grid.size == 1:
            warnings.warn("single-point grid: the policy always bids that point", stacklevel=2)
        return cls(grid, np.ones(grid.size), float(eta), renorm_threshold=renorm_threshold)


def action_distribution(s: Exp3State) -> np.ndarray:
    """``p(b) = (1 - 2 eta) w_b / W + eta 1[b = min] + eta 1[b = max]``."""
    p = (1 - 2 * s.eta) * (s.weights / s.weights.sum())
    p[0] += s.eta
    p[-1] += s.eta
    return p


def payoff_estimator(s: Exp3State, p: np.ndarray, bid_drawn: float, hob: float, observed: float) -> np.ndarray:
    """Importance-weighted payoff estimate for every grid bid.

    On a win, ``r(b) = 1[b >= M] (observed - b) / P(b' >= M)``; on a loss,
    ``r(b) = 1[b < M] observed / P(b' < M)``.
    """
    k = int(np.searchsorted(s.grid, hob, side="left"))  # first grid bid >= hob
    est = np.zeros(s.grid.size)
    if bid_drawn >= hob:
        est[k:] = (observed - s.grid[k:]) / p[k:].sum()
    else:
        est[:k] = observed / p[:k].sum()
    return est


def update_weights(s: Exp3State, estimates: np.ndarray) -> Exp3State:
    """``w_b <- w_b exp(eta r_b)`` then power-of-two rescaling if needed."""
    s.weights = s.weights * np.exp(s.eta * estimates)
    top = s.weights.max()
    if top > s.renorm_threshold or top < 1.0 / s.renorm_threshold:
        _, e = np.frexp(top)
        s.weights = np.ldexp(s.weights, -int(e))
        s.n_renorm += 1
    s.t += 1
    return s


def sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw on the grid order."""
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), p.size - 1))


class Exp3Policy:
    """Policy wrapper: ``act()`` returns a bid, ``update(...)`` learns."""

    name = "exp3"

    def __init__(self, T: int, rng: np.random.Generator, grid=None, eta: float | None = None,
                 grid_cap: int = GRID_CAP, renorm_threshold: float = RENORM_THRESHOLD):
        if grid is None:
            grid, self.capped = make_grid(T, grid_cap)
        else:
            self.capped = False
        grid = np.asarray(grid, dtype=float)
        if eta is None:
            eta = default_learning_rate(T, grid.size)
        self.state = Exp3State.start(grid, eta, renorm_threshold)
        self.rng = rng
        self.p = None
        self._idx = None

    def act(self, x=None, estimate=None) -> tuple[float, dict]:
        self.p = action_distribution(self.state)
        self._idx = sample_index(self.p, self.rng)
        return float(self.state.grid[self._idx]), {}

    def update(self, x, bid: float, hob: float, observed: float, estimate=None):
        est = payoff_estimator(self.state, self.p, bid, hob, observed)
        update_weights(self.state, est)
        return est
