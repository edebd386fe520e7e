"""Estimation oracles for the HOB distribution.

An oracle sees the past ``(x_tau, M_tau)`` pairs and the current context and
returns a :class:`CdfEstimate`: an estimated CDF together with a confidence
radius, either in sup norm (``eps``) or in Bernstein form (``delta``)::

    |G_hat(b) - G(b)| <= delta * sqrt(G(b) (1 - G(b))) + delta^2.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .auction_core import EmpiricalCdf, HobDistribution, UniformHob
from .numerics import GramMatrix, mahalanobis, ridge_solve

HOB_REG = 18.0
SPLIT_TARGET = 1.0 / 9.0
DEFAULT_C_BERNSTEIN = 2 * np.sqrt(2) + 1


@dataclass(frozen=True)
class CdfEstimate:
    """``G_hat`` with its confidence radius.

    ``wide`` marks the uninformative early-round estimate; ``rho`` is the
    split quality reported by the linear-HOB oracle.
    """

    cdf_hat: Callable
    eps: float | None = None
    delta: float | None = None
    wide: bool = False
    rho: float | None = None

    def __post_init__(self):
        if self.eps is None and self.delta is None:
            raise ValueError("an estimate needs eps or delta")

    def __call__(self, b):
        return self.cdf_hat(b)

    @property
    def radius(self) -> float:
        return self.delta if self.delta is not None else self.eps


@dataclass(frozen=True)
class OracleKind:
    """Which oracle to run and its constants.

    kind
        ``perfect`` (needs the true law), ``dkw``, ``bernstein`` or ``linear``.
    """

    kind: str = "dkw"
    c_bernstein: float = DEFAULT_C_BERNSTEIN
    kappa: float = 1.0
    reg: float = HOB_REG

    def __post_init__(self):
        if self.kind not in ("perfect", "dkw", "bernstein", "linear"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")


def dkw_radius(n: int, T: int) -> float:
    """``sqrt(log(2 T^2) / (2 n))`` for ``n`` past samples; 1 when ``n = 0``."""
    if n <= 0:
        return 1.0
    return float(np.sqrt(np.log(2.0 * T * T) / (2.0 * n)))


def bernstein_radius(n: int, T: int, c_bernstein: float = DEFAULT_C_BERNSTEIN) -> float:
    """``c_B sqrt(log(2 T^2) / n)`` capped at 1 (the bound is vacuous beyond)."""
    if n <= 0:
        return 1.0
    return float(min(1.0, c_bernstein * np.sqrt(np.log(2.0 * T * T) / n)))


def bernstein_band(G, delta: float):
    """Half-width of the Bernstein-form band around ``G`` values."""
    G = np.asarray(G, dtype=float)
    return delta * np.sqrt(np.clip(G * (1 - G), 0.0, None)) + delta**2


def _wide(history_hobs=None) -> CdfEstimate:
    G = UniformHob() if history_hobs is None or len(history_hobs) == 0 else EmpiricalCdf(history_hobs)
    return CdfEstimate(G, eps=1.0, delta=1.0, wide=True)


# ----------------------------------------------------------------------------
# incremental oracles used inside simulation loops


class PerfectOracle:
    """Returns the true law (test mode only); ``truth(t, x)`` supplies it."""

    def __init__(self, truth: Callable[[int, np.ndarray], HobDistribution]):
        self.truth = truth
        self.t = 1

    def observe(self, x, hob):
        self.t += 1

    def estimate(self, x_now=None) -> CdfEstimate:
        return CdfEstimate(self.truth(self.t, x_now), eps=0.0, delta=0.0)


class _SortedBuffer:
    def __init__(self, capacity: int):
        self._buf = np.empty(max(int(capacity), 1))
        self.n = 0

    def add(self, v: float):
        if self.n == self._buf.shape[0]:
            self._buf = np.concatenate([self._buf, np.empty(self.n)])
        i = int(np.searchsorted(self._buf[: self.n], v, side="right"))
        self._buf[i + 1 : self.n + 1] = self._buf[i : self.n]
        self._buf[i] = v
        self.n += 1

    def view(self) -> np.ndarray:
        return self._buf[: self.n]


class EmpiricalDkwOracle:
    """Empirical CDF of past HOBs with the DKW sup-norm radius."""

    def __init__(self, T: int):
        self.T = int(T)
        self._hobs = _SortedBuffer(T)

    def observe(self, x, hob):
        self._hobs.add(float(hob))

    def estimate(self, x_now=None) -> CdfEstimate:
        n = self._hobs.n
        if n == 0:
            return _wide()
        return CdfEstimate(EmpiricalCdf.from_sorted(self._hobs.view().copy()), eps=dkw_radius(n, self.T))


class EmpiricalBernsteinOracle(EmpiricalDkwOracle):
    """Empirical CDF of past HOBs with the Bernstein-form radius."""

    def __init__(self, T: int, c_bernstein: float = DEFAULT_C_BERNSTEIN):
        super().__init__(T)
        self.c_bernstein = float(c_bernstein)

    def estimate(self, x_now=None) -> CdfEstimate:
        n = self._hobs.n
        if n == 0:
            return _wide()
        return CdfEstimate(EmpiricalCdf.from_sorted(self._hobs.view().copy()),
                           delta=bernstein_radius(n, self.T, self.c_bernstein))


# ----------------------------------------------------------------------------
# linear HOB model


@dataclass
class HistorySplit:
    """Online greedy split of contexts into a regression half ``S`` and its
    complement.

    A new vector goes to the complement unless ``S`` is strictly smaller, in
    which case it goes to whichever side currently has the smaller energy
    ``x^T A_side x`` (``A_side = reg I + sum_side x x^T``). This keeps
    ``|S| <= n / 2`` and spreads every direction over both sides.
    """

    dim: int
    reg: float = HOB_REG
    in_s: list = field(default_factory=list)

    def __post_init__(self):
        self.A_s = self.reg * np.eye(self.dim)
        self.A_c = self.reg * np.eye(self.dim)
        self.n_s = 0

    def add(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        n_c = len(self.in_s) - self.n_s
        to_s = self.n_s < n_c and (x @ self.A_s @ x) < (x @ self.A_c @ x)
        if to_s:
            self.A_s += np.outer(x, x)
            self.n_s += 1
        else:
            self.A_c += np.outer(x, x)
        self.in_s.append(to_s)
        return to_s

    def rho(self) -> float:
        """Smallest generalized eigenvalue of ``A_S`` against the full
        regularized Gram matrix."""
        full = self.A_s + self.A_c - self.reg * np.eye(self.dim)
        return float(scipy.linalg.eigh(self.A_s, full, eigvals_only=True)[0])

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.in_s)


def split_history(contexts, reg: float = HOB_REG) -> tuple[np.ndarray, float]:
    """Split ``contexts`` (``n x d``) and report ``(S, rho)``.

    ``rho`` is the largest ``c`` with ``reg I + sum_S x x^T >= c (reg I +
    sum_all x x^T)``; an empty input gives ``rho = 1``.
    """
    X = np.asarray(contexts, dtype=float)
    if X.size == 0:
        return np.array([], dtype=int), 1.0
    X = np.atleast_2d(X)
    sp = HistorySplit(X.shape[1], reg)
    for x in X:
        sp.add(x)
    return sp.indices, sp.rho()


def split_inflation(rho: float) -> float:
    """Factor applied to ``delta`` when the split falls short of 1/9."""
    return float(max(1.0, np.sqrt(SPLIT_TARGET / rho)))


def linear_hob_radius(t: int, T: int, d: int, x_norm: float, kappa: float = 1.0) -> float:
    """``kappa (log^{3/2}(T) sqrt(d / t) + log(T) ||x||_{Sigma_t^{-1}})``."""
    logT = np.log(T)
    return float(kappa * (logT**1.5 * np.sqrt(d / t) + logT * x_norm))


class LinearHobOracle:
    """Sample-split regression estimate for ``M = phi^T x + noise``."""

    def __init__(self, T: int, d: int, kappa: float = 1.0, reg: float = HOB_REG):
        self.T, self.d, self.kappa, self.reg = int(T), int(d), float(kappa), float(reg)
        self.split = HistorySplit(d, reg)
        self.gram_s = GramMatrix(d, reg)
        self.z_s = np.zeros(d)
        self.sigma = GramMatrix(d, reg)
        self.X: list = []
        self.M: list = []

    def observe(self, x, hob):
        x = np.asarray(x, dtype=float)
        if self.split.add(x):
            self.gram_s.update(x)
            self.z_s += hob * x
        self.sigma.update(x)
        self.X.append(x)
        self.M.append(float(hob))

    def radius(self, x_now) -> float:
        t = len(self.M) + 1
        return linear_hob_radius(t, self.T, self.d, mahalanobis(self.sigma, x_now), self.kappa)

    def estimate(self, x_now) -> CdfEstimate:
        t = len(self.M) + 1
        if t <= self.d or t <= 2:
            return _wide(np.asarray(self.M))
        phi = ridge_solve(self.gram_s, self.z_s)
        mask = ~np.asarray(self.split.in_s)
        X, M = np.asarray(self.X)[mask], np.asarray(self.M)[mask]
        # held-out HOBs with their fitted mean moved to the current context
        shifted = M - X @ phi + float(phi @ np.asarray(x_now, dtype=float))
        rho = self.split.rho()
        delta = self.radius(x_now) * split_inflation(rho)
        # a radius of one or more makes the band vacuous
        return CdfEstimate(EmpiricalCdf(shifted), delta=delta, wide=delta >= 1.0, rho=rho)


def linear_hob_estimate(history, x_now, T: int, kappa: float = 1.0, reg: float = HOB_REG) -> CdfEstimate:
    """One-shot linear-HOB estimate from ``history = [(x, M), ...]``."""
    x_now = np.asarray(x_now, dtype=float)
    oracle = LinearHobOracle(T, x_now.shape[0], kappa, reg)
    for x, m in history:
        oracle.observe(x, m)
    return oracle.estimate(x_now)


def make_oracle(kind: OracleKind, T: int, d: int, truth=None):
    """Incremental oracle with ``observe(x, hob)`` and ``estimate(x_now)``."""
    if kind.kind == "perfect":
        if truth is None:
            raise ValueError("the perfect oracle needs the true law")
        return PerfectOracle(truth)
    if kind.kind == "dkw":
        return EmpiricalDkwOracle(T)
    if kind.kind == "bernstein":
        return EmpiricalBernsteinOracle(T, kind.c_bernstein)
    return LinearHobOracle(T, d, kind.kappa, kind.reg)


def estimate(kind: OracleKind, history, x_now, T: int, truth: HobDistribution | None = None) -> CdfEstimate:
    """Estimate from a history snapshot ``[(x_tau, M_tau), ...]``."""
    if kind.kind == "perfect":
        if truth is None:
            raise ValueError("the perfect oracle needs the true law")
        return CdfEstimate(truth, eps=0.0, delta=0.0)
    if kind.kind == "linear":
        return linear_hob_estimate(history, x_now, T, kind.kappa, kind.reg)
    hobs = np.array([m for _, m in history], dtype=float)
    if hobs.size == 0:
        return _wide()
    G = EmpiricalCdf(hobs)
    if kind.kind == "dkw":
        return CdfEstimate(G, eps=dkw_radius(hobs.size, T))
    return CdfEstimate(G, delta=bernstein_radius(hobs.size, T, kind.c_bernstein))


# ----------------------------------------------------------------------------
# calibration


def coverage_report(G: HobDistribution, T: int, checkpoints, n_reps: int, rng, kind: str = "dkw",
                    c_bernstein: float = DEFAULT_C_BERNSTEIN, n_grid: int = 2001):
    """Monte-Carlo coverage of the i.i.d. oracles.

    Returns rows ``(t, sup_error, radius, covered)`` with one row per
    replication and checkpoint. For ``dkw`` the error is the sup-norm gap;
    for ``bernstein`` it is the largest ratio of the gap to the Bernstein
    band, and ``covered`` means the ratio is at most one.
    """
    grid = np.linspace(0.0, 1.0, n_grid)
    g_true = G(grid)
    rows = []
    t_max = max(checkpoints)
    for _ in range(n_reps):
        draws = G.sample(rng, size=t_max - 1)
        for t in checkpoints:
            emp = np.sort(draws[: t - 1])
            if kind == "dkw":
                # sup over all b attained at the sample points (both sides)
                n = emp.size
                hi = np.arange(1, n + 1) / n - G(emp)
                lo = G(emp) - np.arange(0, n) / n
                err = float(max(hi.max(), lo.max(), 0.0))
                r = dkw_radius(n, T)
                rows.append((t, err, r, err <= r))
            else:
                gh = np.searchsorted(emp, grid, side="right") / emp.size
                r = bernstein_radius(emp.size, T, c_bernstein)
                ratio = float(np.max(np.abs(gh - g_true) / bernstein_band(g_true, r)))
                rows.append((t, ratio, r, ratio <= 1.0))
    return rows


def write_calibration_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "realized_error", "radius", "covered"])
        for t, err, r, ok in rows:
            w.writerow([t, repr(float(err)), repr(float(r)), int(bool(ok))])
