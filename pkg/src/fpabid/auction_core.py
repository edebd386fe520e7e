"""Payoff mathematics and HOB distribution types for first-price auctions.

A round of the auction: the bidder submits ``b``, the highest other bid
``M`` is revealed, the bidder wins iff ``b >= M`` (ties go to the bidder)
and then observes ``v_win`` on a win or ``v_lose`` on a loss.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

logger = logging.getLogger(__name__)

_ONE_BITS = np.float64(1.0).view(np.int64)


def check_bid(bid: float) -> float:
    """Return ``bid`` as a float after checking it lies in [0, 1]."""
    b = float(bid)
    if not 0.0 <= b <= 1.0:
        raise ValueError(f"bid {b} outside [0, 1]")
    return b


def check_context(x, dim: int | None = None, tol: float = 1e-12) -> np.ndarray:
    """Return ``x`` as a 1-d float array with Euclidean norm at most one."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("context must be one-dimensional")
    if dim is not None and x.shape[0] != dim:
        raise ValueError(f"context has dimension {x.shape[0]}, expected {dim}")
    if np.linalg.norm(x) > 1.0 + tol:
        raise ValueError("context norm exceeds 1")
    return x


@dataclass(frozen=True)
class PotentialOutcomes:
    """Outcome values on winning (``v_win``) and on losing (``v_lose``)."""

    v_win: float
    v_lose: float

    def __post_init__(self):
        for name in ("v_win", "v_lose"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def effect(self) -> float:
        return self.v_win - self.v_lose


def realized_payoff(bid, hob, outcomes: PotentialOutcomes | tuple):
    """Realized payoff ``1[b >= M](v_win - b) + 1[b < M] v_lose``.

    Works elementwise on arrays; ``outcomes`` may be a
    :class:`PotentialOutcomes` or a ``(v_win, v_lose)`` pair of arrays.
    """
    v_win, v_lose = _unpack(outcomes)
    bid = np.asarray(bid, dtype=float)
    out = np.where(bid >= np.asarray(hob, dtype=float), v_win - bid, v_lose)
    return float(out) if out.ndim == 0 else out


def expected_payoff(bid, G, mean_outcomes: PotentialOutcomes | tuple):
    """Expected payoff ``G(b)(v_win - v_lose - b) + v_lose``.

    ``G`` is anything callable on bids (a :class:`Cdf`, a ``CdfEstimate``
    or a plain function).
    """
    v_win, v_lose = _unpack(mean_outcomes)
    bid = np.asarray(bid, dtype=float)
    out = _as_callable(G)(bid) * (v_win - v_lose - bid) + v_lose
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def _unpack(outcomes):
    if isinstance(outcomes, PotentialOutcomes):
        return outcomes.v_win, outcomes.v_lose
    v_win, v_lose = outcomes
    return np.asarray(v_win, dtype=float), np.asarray(v_lose, dtype=float)


def _as_callable(G) -> Callable:
    return getattr(G, "cdf_hat", G)


@dataclass(frozen=True)
class RoundFeedback:
    """What the bidder sees after one auction."""

    bid: float
    hob: float
    won: bool
    observed_outcome: float
    realized_payoff: float

    def __post_init__(self):
        if self.won != (self.bid >= self.hob):
            raise ValueError("won flag inconsistent with bid >= hob")
        expected = (self.observed_outcome - self.bid) if self.won else self.observed_outcome
        if abs(expected - self.realized_payoff) > 1e-12:
            raise ValueError("realized payoff inconsistent with the outcome")

    @classmethod
    def from_round(cls, bid: float, hob: float, outcomes: PotentialOutcomes) -> "RoundFeedback":
        won = bool(bid >= hob)
        observed = outcomes.v_win if won else outcomes.v_lose
        return cls(bid=float(bid), hob=float(hob), won=won, observed_outcome=float(observed),
                   realized_payoff=float(realized_payoff(bid, hob, outcomes)))


class Cdf:
    """A distribution function restricted to the bid space [0, 1].

    Subclasses implement :meth:`cdf` on float arrays. The generalized
    inverse is computed by bisection over the ordered bit patterns of the
    nonnegative doubles, so it returns the smallest float ``x`` with
    ``G(x) >= z`` exactly (at most 63 halvings).
    """

    def cdf(self, b):
        raise NotImplementedError

    def __call__(self, b):
        out = self.cdf(np.asarray(b, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, z):
        return _bisect_quantile(self.cdf, z)


def _bisect_quantile(cdf, z):
    z = np.asarray(z, dtype=float)
    zs = np.atleast_1d(z)
    lo = np.zeros(zs.shape, dtype=np.int64)
    hi = np.full(zs.shape, _ONE_BITS, dtype=np.int64)
    at_zero = np.asarray(cdf(np.zeros(zs.shape))) >= zs
    unreachable = np.asarray(cdf(np.ones(zs.shape))) < zs
    # invariant: cdf(bits lo) < z <= cdf(bits hi)
    active = ~(at_zero | unreachable)
    while np.any(active):
        mid = lo + (hi - lo) // 2
        ok = np.asarray(cdf(mid.view(np.float64))) >= zs
        hi = np.where(active & ok, mid, hi)
        lo = np.where(active & ~ok, mid, lo)
        active &= (hi - lo) > 1
    out = hi.view(np.float64).copy()
    out[at_zero] = 0.0
    out[unreachable] = 1.0
    if np.any(unreachable):
        logger.warning("quantile: level above G(1); returning 1 by convention")
    return float(out[0]) if z.ndim == 0 else out


class HobDistribution(Cdf):
    """A HOB law on [0, 1] with a density bound ``L`` and a sampler."""

    density_bound: float = np.inf

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError


@dataclass(frozen=True)
class UniformHob(HobDistribution):
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ValueError("need 0 <= lo < hi <= 1")

    @property
    def density_bound(self) -> float:
        return 1.0 / (self.hi - self.lo)

    def cdf(self, b):
        return np.clip((np.asarray(b, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size=size)


@dataclass(frozen=True)
class MixtureHob(HobDistribution):
    components: tuple
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.components) != len(w) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be a probability vector over the components")

    @property
    def density_bound(self) -> float:
        return float(sum(w * c.density_bound for c, w in zip(self.components, self.weights)))

    def cdf(self, b):
        b = np.asarray(b, dtype=float)
        return sum(w * c.cdf(b) for c, w in zip(self.components, self.weights))

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        which = rng.choice(len(self.components), size=n, p=np.asarray(self.weights, dtype=float))
        draws = np.empty(n)
        for k, comp in enumerate(self.components):
            mask = which == k
            draws[mask] = comp.sample(rng, size=int(mask.sum()))
        return float(draws[0]) if size is None else draws.reshape(size)


@dataclass(frozen=True)
class GaussianHob(HobDistribution):
    """Normal law ``N(mean, sd^2)``; the CDF is evaluated unclipped on [0, 1]
    and samples are clamped into [0, 1]."""

    mean: float
    sd: float

    def __post_init__(self):
        if self.sd <= 0:
            raise ValueError("sd must be positive")

    @property
    def density_bound(self) -> float:
        return 1.0 / (self.sd * np.sqrt(2 * np.pi))

    def cdf(self, b):
        return ndtr((np.asarray(b, dtype=float) - self.mean) / self.sd)

    def sample(self, rng, size=None):
        return np.clip(rng.normal(self.mean, self.sd, size=size), 0.0, 1.0)


@dataclass(frozen=True)
class DiscreteHob(HobDistribution):
    """Finitely many atoms; has no density (``L = inf``). Used in tests."""

    atoms: tuple
    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if len(p) != len(self.atoms) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("probs must be a probability vector over atoms")

    def cdf(self, b):
        b = np.asarray(b, dtype=float)
        a = np.asarray(self.atoms, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        return np.minimum((p * (a <= b[..., None])).sum(axis=-1), 1.0)

    def sample(self, rng, size=None):
        return rng.choice(np.asarray(self.atoms, dtype=float), size=size,
                          p=np.asarray(self.probs, dtype=float))


def lower_bound_mixture() -> MixtureHob:
    """Two-spike mixture ``1/2 U[0, 1/100] + 1/2 U[1/8 - 1/200, 1/8 + 1/200]``."""
    return MixtureHob(components=(UniformHob(0.0, 0.01), UniformHob(0.125 - 0.005, 0.125 + 0.005)),
                      weights=(0.5, 0.5))


@dataclass(frozen=True, eq=False)
class EmpiricalCdf(Cdf):
    """Right-continuous step CDF of a finite sample (values may lie outside
    [0, 1]; the CDF is still only queried on bids)."""

    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float).ravel())
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def cdf(self, b):
        if self.n == 0:
            return np.zeros(np.shape(b))
        return np.searchsorted(self.samples, b, side="right") / self.n

    @classmethod
    def from_sorted(cls, samples: np.ndarray) -> "EmpiricalCdf":
        """Wrap an already ascending 1-d array without copying or sorting."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "samples", samples)
        return obj

    def quantile(self, z):
        z = np.asarray(z, dtype=float)
        zs = np.atleast_1d(z)
        if self.n == 0:
            out = np.where(zs > 0, 1.0, 0.0)
        else:
            # level k/n is first reached at the k-th order statistic
            levels = np.arange(1, self.n + 1) / self.n
            idx = np.searchsorted(levels, zs, side="left")
            vals = np.where(idx < self.n, self.samples[np.minimum(idx, self.n - 1)], np.inf)
            if np.any(vals > 1.0):
                logger.warning("quantile: level above G(1); returning 1 by convention")
            # below 0 the infimum over [0, 1] is the left edge
            out = np.clip(vals, 0.0, 1.0)
            out[zs <= 0] = 0.0
        return float(out[0]) if z.ndim == 0 else out


def quantile(G, z):
    """Generalized inverse ``inf{x in [0, 1] : G(x) >= z}``.

    ``G`` may be a :class:`Cdf` or an estimate exposing ``cdf_hat``. When no
    point reaches ``z`` the result is 1 and a warning is logged.
    """
    G = _as_callable(G)
    if isinstance(G, Cdf):
        return G.quantile(z)
    return _bisect_quantile(G, z)


def argmax_values(values, tie_break: str = "max") -> int:
    """Index of the maximum of ``values``; ties go to the last (``max``) or
    first (``min``) index."""
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("empty grid")
    if tie_break == "min":
        return int(np.argmax(values))
    if tie_break == "max":
        return int(values.size - 1 - np.argmax(values[::-1]))
    raise ValueError(f"unknown tie_break {tie_break!r}")


def grid_argmax(f: Callable, grid: Sequence[float], tie_break: str = "max"):
    """Brute-force maximizer of ``f`` over a sorted grid.

    Returns ``(bid, value)``. ``f`` is tried vectorized first and falls back
    to pointwise evaluation.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    try:
        values = np.asarray(f(grid), dtype=float)
        if values.shape != grid.shape:
            raise ValueError
    except (TypeError, ValueError):
        values = np.array([float(f(b)) for b in grid])
    i = argmax_values(values, tie_break)
    return float(grid[i]), float(values[i])


def lipschitz_violation(G, L: float, grid_size: int = 20001, tol: float = 1e-9) -> float:
    """Largest excess of ``|G(b+h) - G(b)|`` over ``L h`` on a uniform grid
    (zero when the check passes)."""
    b = np.linspace(0.0, 1.0, grid_size)
    g = np.asarray(_as_callable(G)(b), dtype=float)
    excess = np.abs(np.diff(g)) - L * np.diff(b) - tol
    nonmono = np.maximum(-np.diff(g) - tol, 0.0)
    return float(max(np.max(excess, initial=0.0), np.max(nonmono, initial=0.0), 0.0))
