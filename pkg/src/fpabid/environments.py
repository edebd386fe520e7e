"""Environment instances for the three valuation models.

* Model 1 (:class:`AdversarialInstance`): an oblivious schedule of mean
  outcomes and HOB laws, no contexts.
* Model 2 (:class:`LinearPoInstance`): both potential outcomes are linear in
  the context, ``E[v_win | x] = theta_win^T x`` and ``E[v_lose | x] =
  theta_lose^T x``.
* Model 3 (:class:`LinearTeInstance`): only the effect is linear,
  ``E[v_win - v_lose | x] = theta^T x``; the baseline ``mu0(x)`` is arbitrary.

Every instance is immutable. A replication turns it into a :class:`Stream`
(contexts, outcomes and HOBs for all rounds) before the first bid, so the
policy cannot influence what it faces.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .auction_core import (
    GaussianHob,
    HobDistribution,
    MixtureHob,
    UniformHob,
    lipschitz_violation,
    lower_bound_mixture,
)

logger = logging.getLogger(__name__)

MAX_CLAMP_RATE = 1e-3
NORM_TOL = 1e-12


# ----------------------------------------------------------------------------
# HOB processes


@dataclass(frozen=True)
class IidHob:
    """``M_t`` i.i.d. from a fixed law."""

    G: HobDistribution

    def distribution(self, t: int, x=None) -> HobDistribution:
        return self.G

    def sample_all(self, rng, contexts: np.ndarray, T: int) -> tuple[np.ndarray, int]:
        return np.asarray(self.G.sample(rng, size=T), dtype=float), 0


@dataclass(frozen=True, eq=False)
class PerRound:
    """A fixed sequence of HOB laws: round ``t`` (1-based) uses
    ``distributions[index[t - 1]]``."""

    distributions: tuple
    index: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=int)
        if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= len(self.distributions)):
            raise ValueError("index must point into distributions")
        object.__setattr__(self, "index", idx)

    def distribution(self, t: int, x=None) -> HobDistribution:
        return self.distributions[self.index[t - 1]]

    def sample_all(self, rng, contexts, T):
        if self.index.shape[0] != T:
            raise ValueError("per-round schedule length differs from T")
        out = np.empty(T)
        for k, G in enumerate(self.distributions):
            mask = self.index == k
            out[mask] = G.sample(rng, size=int(mask.sum()))
        return out, 0


@dataclass(frozen=True, eq=False)
class LinearHob:
    """``M_t = phi^T x_t + eta_t`` with ``eta_t ~ N(0, sigma^2)``.

    Draws are clamped into [0, 1] and the clamp events counted. The
    tail-flatness constants ``a0, a1, a2`` are carried as declared metadata.
    """

    phi: np.ndarray
    sigma: float
    a0: float = 0.05
    a1: float = 0.5
    a2: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def density_bound(self) -> float:
        return np.inf if self.sigma == 0 else 1.0 / (self.sigma * np.sqrt(2 * np.pi))

    def distribution(self, t: int, x=None) -> HobDistribution:
        return GaussianHob(float(self.phi @ np.asarray(x, dtype=float)), self.sigma)

    def sample_all(self, rng, contexts, T):
        raw = contexts @ self.phi + self.sigma * rng.standard_normal(T)
        clamped = int(np.count_nonzero((raw < 0) | (raw > 1)))
        return np.clip(raw, 0.0, 1.0), clamped

    def clamp_probability(self, contexts: np.ndarray) -> float:
        """Average probability that a raw draw leaves [0, 1]."""
        if self.sigma == 0:
            m = contexts @ self.phi
            return float(np.mean((m < 0) | (m > 1)))
        m = contexts @ self.phi
        return float(np.mean(ndtr(-m / self.sigma) + ndtr((m - 1) / self.sigma)))


# ----------------------------------------------------------------------------
# context schedules


def _unit_sphere(rng, n: int, dim: int) -> np.ndarray:
    if dim == 0:
        return np.zeros((n, 0))
    u = rng.standard_normal((n, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


@dataclass(frozen=True)
class ContextSchedule:
    """A recipe for the sequence ``x_1..x_T``.

    kind
        ``sphere``: ``radius * u`` with ``u`` uniform on the unit sphere.
        ``intercept_sphere``: ``(intercept, radius * u)`` with ``u`` on the
        unit sphere of dimension ``d - 1``.
        ``blocks``: the horizon is cut into ``d - 1`` equal blocks and block
        ``i`` uses ``(1/2, 0, .., 1/2, .., 0)`` with the second 1/2 at
        coordinate ``i + 1``.
        ``corpus``: draw from a fixed list of points, either round robin or
        i.i.d. uniformly.
    seed
        Fixed seed for the schedule; ``None`` means the replication supplies
        the generator.
    """

    kind: str = "sphere"
    radius: float = 0.9
    intercept: float = 0.0
    points: tuple = ()
    order: str = "round_robin"
    seed: int | None = None

    def materialize(self, T: int, d: int, rng=None) -> np.ndarray:
        if self.seed is not None or rng is None:
            rng = np.random.default_rng(0 if self.seed is None else self.seed)
        if self.kind == "sphere":
            return self.radius * _unit_sphere(rng, T, d)
        if self.kind == "intercept_sphere":
            X = np.empty((T, d))
            X[:, 0] = self.intercept
            X[:, 1:] = self.radius * _unit_sphere(rng, T, d - 1)
            return X
        if self.kind == "blocks":
            if d < 2:
                return np.ones((T, 1))
            block = np.minimum((np.arange(T) * (d - 1)) // T, d - 2)
            X = np.zeros((T, d))
            X[:, 0] = 0.5
            X[np.arange(T), block + 1] = 0.5
            return X
        if self.kind == "corpus":
            P = np.asarray(self.points, dtype=float).reshape(len(self.points), d)
            if self.order == "round_robin":
                return P[np.arange(T) % len(P)]
            if self.order == "iid":
                return P[rng.integers(len(P), size=T)]
            raise ValueError(f"unknown corpus order {self.order!r}")
        raise ValueError(f"unknown context schedule {self.kind!r}")

    def support_sample(self, d: int, n: int = 20000, directions=()) -> np.ndarray:
        """Points covering the schedule's support, for validation.

        For the sphere kinds this is a random sample plus the extreme points
        along the coordinate axes and along each vector in ``directions``,
        where linear functionals of the context attain their range.
        """
        if self.kind == "corpus":
            return np.asarray(self.points, dtype=float).reshape(len(self.points), d)
        if self.kind == "blocks":
            return np.unique(self.materialize(max(d - 1, 1) * 4, d), axis=0)
        X = ContextSchedule(self.kind, self.radius, self.intercept, seed=12345).materialize(n, d)
        k = 1 if self.kind == "intercept_sphere" else 0
        dirs = [np.eye(d - k)[j] for j in range(d - k)]
        for v in directions:
            v = np.asarray(v, dtype=float)[k:]
            if np.linalg.norm(v) > 0:
                dirs.append(v / np.linalg.norm(v))
        E = np.zeros((2 * len(dirs), d))
        if k:
            E[:, 0] = self.intercept
        for j, u in enumerate(dirs):
            E[2 * j, k:] = self.radius * u
            E[2 * j + 1, k:] = -self.radius * u
        return np.vstack([X, E])


# ----------------------------------------------------------------------------
# baselines for Model 3


@dataclass(frozen=True)
class QuadraticBaseline:
    """``mu0(x) = clip(intercept + scale * x[coord]^2, 0, 1)``."""

    intercept: float = 0.4
    scale: float = 0.2
    coord: int = 0

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return np.clip(self.intercept + self.scale * X[..., self.coord] ** 2, 0.0, 1.0)


@dataclass(frozen=True)
class LinearBaseline:
    """``mu0(x) = intercept + w^T x`` (not clipped, so validation sees it)."""

    w: tuple
    intercept: float = 0.0

    def __call__(self, X):
        return self.intercept + np.asarray(X, dtype=float) @ np.asarray(self.w, dtype=float)


@dataclass(frozen=True)
class ConstantBaseline:
    value: float

    def __call__(self, X):
        return np.full(np.asarray(X).shape[:-1], float(self.value))


# ----------------------------------------------------------------------------
# instances


@dataclass(frozen=True, eq=False)
class Stream:
    """All draws of one replication, materialized before play."""

    contexts: np.ndarray
    v_win: np.ndarray
    v_lose: np.ndarray
    hob: np.ndarray
    n_clamped: int = 0

    @property
    def T(self) -> int:
        return self.hob.shape[0]


def _draw_outcomes(rng, means: np.ndarray, noise: str) -> np.ndarray:
    if noise == "fixed":
        return means.astype(float).copy()
    if noise == "bernoulli":
        return (rng.random(means.shape) < means).astype(float)
    raise ValueError(f"unknown outcome noise {noise!r}")


@dataclass(frozen=True, eq=False)
class AdversarialInstance:
    """Model 1: per-round mean outcomes and HOB laws fixed in advance."""

    win_means: np.ndarray
    lose_means: np.ndarray
    hob: IidHob | PerRound
    L: float
    outcome_noise: str = "bernoulli"
    model: str = field(default="adversarial", init=False)
    d: int = field(default=0, init=False)

    def __post_init__(self):
        object.__setattr__(self, "win_means", np.asarray(self.win_means, dtype=float))
        object.__setattr__(self, "lose_means", np.asarray(self.lose_means, dtype=float))
        if self.win_means.shape != self.lose_means.shape or self.win_means.ndim != 1:
            raise ValueError("mean schedules must be 1-d arrays of equal length")

    @property
    def T(self) -> int:
        return self.win_means.shape[0]

    def contexts(self, rng=None) -> np.ndarray:
        return np.zeros((self.T, 0))

    def mean_outcomes(self, t: int, x=None) -> tuple[float, float]:
        return float(self.win_means[t - 1]), float(self.lose_means[t - 1])

    def means_all(self, X) -> tuple[np.ndarray, np.ndarray]:
        return self.win_means, self.lose_means

    def hob_groups(self):
        """``(G, mask)`` pairs partitioning the rounds by HOB law."""
        if isinstance(self.hob, IidHob):
            return [(self.hob.G, np.ones(self.T, dtype=bool))]
        return [(G, self.hob.index == k) for k, G in enumerate(self.hob.distributions)]


@dataclass(frozen=True, eq=False)
class LinearPoInstance:
    """Model 2: ``E[v_win|x] = theta_win^T x``, ``E[v_lose|x] = theta_lose^T x``."""

    theta_win: np.ndarray
    theta_lose: np.ndarray
    schedule: ContextSchedule
    hob: IidHob | LinearHob | PerRound
    L: float
    T: int
    outcome_noise: str = "bernoulli"
    model: str = field(default="linear_po", init=False)

    def __post_init__(self):
        object.__setattr__(self, "theta_win", np.asarray(self.theta_win, dtype=float))
        object.__setattr__(self, "theta_lose", np.asarray(self.theta_lose, dtype=float))

    @property
    def d(self) -> int:
        return self.theta_win.shape[0]

    def contexts(self, rng=None) -> np.ndarray:
        return self.schedule.materialize(self.T, self.d, rng)

    def mean_outcomes(self, t: int, x) -> tuple[float, float]:
        x = np.asarray(x, dtype=float)
        return float(self.theta_win @ x), float(self.theta_lose @ x)

    def means_all(self, X):
        return X @ self.theta_win, X @ self.theta_lose


@dataclass(frozen=True, eq=False)
class LinearTeInstance:
    """Model 3: ``v_lose ~ Bern(mu0(x))``, ``v_win ~ Bern(mu0(x) + theta^T x)``."""

    theta: np.ndarray
    schedule: ContextSchedule
    hob: IidHob | LinearHob | PerRound
    L: float
    T: int
    baseline: object = field(default_factory=QuadraticBaseline)
    outcome_noise: str = "bernoulli"
    model: str = field(default="linear_te", init=False)

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    def contexts(self, rng=None) -> np.ndarray:
        return self.schedule.materialize(self.T, self.d, rng)

    def mean_outcomes(self, t: int, x) -> tuple[float, float]:
        x = np.asarray(x, dtype=float)
        mu0 = float(self.baseline(x))
        return mu0 + float(self.theta @ x), mu0

    def means_all(self, X):
        mu0 = np.asarray(self.baseline(X), dtype=float)
        return mu0 + X @ self.theta, mu0


@dataclass(frozen=True)
class LowerBoundInstance:
    """The two-spike lower-bound instance.

    With ``block_dim = 1`` this is Model 1 with ``v_win ~ Bern(mu)``,
    ``v_lose = 0`` and i.i.d. HOBs from the mixture. With ``block_dim = d >=
    2`` the horizon is split into ``d - 1`` blocks and block ``i`` sees
    ``E[v_win] = 1/4 + signs[i] * delta`` through the context embedding
    (``mu`` is then unused).
    """

    mu: float
    delta: float = 0.0
    block_dim: int = 1
    signs: tuple = ()
    mixture: MixtureHob = field(default_factory=lower_bound_mixture)
    L: float = 50.0

    def as_adversarial(self, T: int, outcome_noise: str = "bernoulli") -> AdversarialInstance:
        return AdversarialInstance(np.full(T, self.mu), np.zeros(T), IidHob(self.mixture),
                                   L=self.L, outcome_noise=outcome_noise)

    def as_linear_po(self, T: int, outcome_noise: str = "bernoulli") -> LinearPoInstance:
        d = self.block_dim
        if d < 2:
            return LinearPoInstance(np.array([self.mu]), np.zeros(1), ContextSchedule("blocks"),
                                    IidHob(self.mixture), self.L, T, outcome_noise)
        signs = np.asarray(self.signs if self.signs else np.ones(d - 1), dtype=float)
        if signs.shape != (d - 1,):
            raise ValueError("need one sign per block")
        theta = np.concatenate([[0.5], 2 * self.delta * signs])
        return LinearPoInstance(theta, np.zeros(d), ContextSchedule("blocks"), IidHob(self.mixture),
                                self.L, T, outcome_noise)


def lecam_pair(delta: float) -> tuple[LowerBoundInstance, LowerBoundInstance]:
    """The ``mu = 1/4 - delta`` and ``mu = 1/4 + delta`` pair on the shared
    two-spike mixture. ``delta = 0`` gives two identical instances."""
    if not 0.0 <= delta < 0.25:
        raise ValueError("delta must lie in [0, 1/4)")
    return (LowerBoundInstance(mu=0.25 - delta, delta=delta),
            LowerBoundInstance(mu=0.25 + delta, delta=delta))


def lower_bound_delta(T: int) -> float:
    """Gap ``1 / (4 sqrt(T))`` used in the two-point construction."""
    return 1.0 / (4.0 * np.sqrt(T))


# ----------------------------------------------------------------------------
# adversarial schedule library


def constant_schedule(T, win_mean, lose_mean, G, L=None, outcome_noise="bernoulli"):
    return AdversarialInstance(np.full(T, float(win_mean)), np.full(T, float(lose_mean)), IidHob(G),
                               L=G.density_bound if L is None else L, outcome_noise=outcome_noise)


def piecewise_schedule(T, segments: Sequence[tuple], L=None, outcome_noise="bernoulli"):
    """``segments`` is a list of ``(fraction, win_mean, lose_mean, G)``; the
    fractions are rescaled to cover ``T`` rounds."""
    fr = np.array([s[0] for s in segments], dtype=float)
    ends = np.round(np.cumsum(fr) / fr.sum() * T).astype(int)
    starts = np.concatenate([[0], ends[:-1]])
    win, lose, idx = np.empty(T), np.empty(T), np.empty(T, dtype=int)
    for k, ((_, vw, vl, _G), a, b) in enumerate(zip(segments, starts, ends)):
        win[a:b], lose[a:b], idx[a:b] = vw, vl, k
    dists = tuple(s[3] for s in segments)
    if L is None:
        L = max(G.density_bound for G in dists)
    return AdversarialInstance(win, lose, PerRound(dists, idx), L=L, outcome_noise=outcome_noise)


def drifting_schedule(T, win_start, win_end, lose_mean, G, L=None, outcome_noise="bernoulli"):
    """Win mean moves linearly from ``win_start`` to ``win_end``."""
    return AdversarialInstance(np.linspace(win_start, win_end, T), np.full(T, float(lose_mean)),
                               IidHob(G), L=G.density_bound if L is None else L,
                               outcome_noise=outcome_noise)


# ----------------------------------------------------------------------------
# generation


def generate_stream(instance, rng: np.random.Generator) -> Stream:
    """Draw contexts, outcomes and HOBs for every round.

    Contexts come first, then HOBs, then ``v_lose`` and ``v_win`` draws.
    Outcomes and HOBs use separate draws, so they are conditionally
    independent given the context.
    """
    T = instance.T
    X = instance.contexts(rng)
    hob, clamped = instance.hob.sample_all(rng, X, T)
    mw, ml = instance.means_all(X)
    mw = np.broadcast_to(np.asarray(mw, dtype=float), (T,))
    ml = np.broadcast_to(np.asarray(ml, dtype=float), (T,))
    if instance.outcome_noise == "bernoulli" and (np.any((mw < 0) | (mw > 1)) or np.any((ml < 0) | (ml > 1))):
        raise ValueError("outcome mean outside [0, 1]; validate the instance first")
    v_lose = _draw_outcomes(rng, ml, instance.outcome_noise)
    v_win = _draw_outcomes(rng, mw, instance.outcome_noise)
    if clamped:
        logger.info("HOB draws clamped into [0, 1]: %d of %d", clamped, T)
    return Stream(X, v_win, v_lose, hob, clamped)


def generate_round(instance, t: int, rng: np.random.Generator):
    """Draw round ``t``: returns ``(x, (v_win, v_lose), hob)``.

    The context comes from the instance's schedule (seeded, so it does not
    depend on ``rng``); the HOB and outcomes are fresh draws from ``rng``.
    """
    if not 1 <= t <= instance.T:
        raise ValueError("round index out of range")
    X = instance.contexts(None)
    x = X[t - 1]
    if isinstance(instance.hob, LinearHob):
        hob = float(np.clip(instance.hob.phi @ x + instance.hob.sigma * rng.standard_normal(), 0, 1))
    else:
        hob = float(instance.hob.distribution(t, x).sample(rng))
    mw, ml = instance.mean_outcomes(t, x)
    v_lose = float(_draw_outcomes(rng, np.array(ml), instance.outcome_noise))
    v_win = float(_draw_outcomes(rng, np.array(mw), instance.outcome_noise))
    return x, (v_win, v_lose), hob


def true_cdf(instance, t: int, x) -> HobDistribution:
    """The HOB law faced in round ``t`` (harness and test use only)."""
    return instance.hob.distribution(t, x)


# ----------------------------------------------------------------------------
# validation


def _dists_of(hob):
    if isinstance(hob, IidHob):
        return [hob.G]
    if isinstance(hob, PerRound):
        return list(hob.distributions)
    return []


def validate_instance(instance) -> list[str]:
    """Return a list of human-readable violations (empty when valid)."""
    out: list[str] = []

    def mean_range(name, vals):
        vals = np.asarray(vals, dtype=float)
        if vals.size == 0:
            return
        lo, hi = float(vals.min()), float(vals.max())
        if lo < -NORM_TOL:
            out.append(f"{name} mean {lo:.6g} ∉ [0,1]")
        if hi > 1 + NORM_TOL:
            out.append(f"{name} mean {hi:.6g} ∉ [0,1]")

    if instance.L <= 0:
        out.append("density bound L must be positive")
    for G in _dists_of(instance.hob):
        if lipschitz_violation(G, instance.L) > 0:
            out.append(f"HOB CDF {G!r} is not {instance.L}-Lipschitz")

    if isinstance(instance, AdversarialInstance):
        mean_range("win", instance.win_means)
        mean_range("lose", instance.lose_means)
        if isinstance(instance.hob, PerRound) and instance.hob.index.shape[0] != instance.T:
            out.append("per-round HOB schedule length differs from T")
        if isinstance(instance.hob, LinearHob):
            out.append("linear HOB needs contexts")
        return out

    if isinstance(instance, LinearPoInstance):
        dirs = (instance.theta_win, instance.theta_lose)
    else:
        dirs = (instance.theta,)
    X = instance.schedule.support_sample(instance.d, directions=dirs)
    if np.any(np.linalg.norm(X, axis=1) > 1 + NORM_TOL):
        out.append("context norm > 1")
    if isinstance(instance, LinearPoInstance):
        for th in (instance.theta_win, instance.theta_lose):
            if np.linalg.norm(th) > 1 + NORM_TOL:
                out.append("parameter norm > 1")
        mean_range("win", X @ instance.theta_win)
        mean_range("lose", X @ instance.theta_lose)
    elif isinstance(instance, LinearTeInstance):
        if np.linalg.norm(instance.theta) > 1 + NORM_TOL:
            out.append("parameter norm > 1")
        mu0 = np.asarray(instance.baseline(X), dtype=float)
        mean_range("lose", mu0)
        mean_range("win", mu0 + X @ instance.theta)
    if isinstance(instance.hob, LinearHob):
        if np.linalg.norm(instance.hob.phi) > 1 + NORM_TOL:
            out.append("HOB parameter norm > 1")
        if instance.hob.density_bound > instance.L + 1e-12:
            out.append(f"HOB noise density exceeds L={instance.L}")
        p = instance.hob.clamp_probability(X)
        if p >= MAX_CLAMP_RATE:
            out.append(f"HOB clamp probability {p:.3g} ≥ {MAX_CLAMP_RATE}")
    return out


# ----------------------------------------------------------------------------
# JSON (de)serialization


def dist_from_dict(doc: dict) -> HobDistribution:
    kind = doc["kind"]
    if kind == "uniform":
        return UniformHob(doc.get("lo", 0.0), doc.get("hi", 1.0))
    if kind == "gaussian":
        return GaussianHob(doc["mean"], doc["sd"])
    if kind == "mixture":
        return MixtureHob(tuple(dist_from_dict(c) for c in doc["components"]), tuple(doc["weights"]))
    if kind == "lower_bound_mixture":
        return lower_bound_mixture()
    raise ValueError(f"unknown distribution kind {kind!r}")


def dist_to_dict(G) -> dict:
    if G == lower_bound_mixture():
        return {"kind": "lower_bound_mixture"}
    if isinstance(G, UniformHob):
        return {"kind": "uniform", "lo": G.lo, "hi": G.hi}
    if isinstance(G, GaussianHob):
        return {"kind": "gaussian", "mean": G.mean, "sd": G.sd}
    if isinstance(G, MixtureHob):
        return {"kind": "mixture", "components": [dist_to_dict(c) for c in G.components],
                "weights": list(G.weights)}
    raise ValueError(f"cannot serialize {G!r}")


def _hob_from_dict(doc: dict, T: int):
    kind = doc["kind"]
    if kind == "iid":
        return IidHob(dist_from_dict(doc["dist"]))
    if kind == "linear":
        return LinearHob(np.asarray(doc["phi"], dtype=float), doc["sigma"],
                         doc.get("a0", 0.05), doc.get("a1", 0.5), doc.get("a2", 2.0))
    raise ValueError(f"unknown HOB process {kind!r}")


def _hob_to_dict(hob) -> dict:
    if isinstance(hob, IidHob):
        return {"kind": "iid", "dist": dist_to_dict(hob.G)}
    if isinstance(hob, LinearHob):
        return {"kind": "linear", "phi": hob.phi.tolist(), "sigma": hob.sigma,
                "a0": hob.a0, "a1": hob.a1, "a2": hob.a2}
    raise ValueError("per-round HOB schedules serialize through their adversarial schedule")


def _schedule_from_dict(doc: dict) -> ContextSchedule:
    doc = dict(doc)
    if "points" in doc:
        doc["points"] = tuple(tuple(p) for p in doc["points"])
    return ContextSchedule(**doc)


def _schedule_to_dict(s: ContextSchedule) -> dict:
    out = {"kind": s.kind, "radius": s.radius, "intercept": s.intercept, "order": s.order,
           "seed": s.seed}
    if s.points:
        out["points"] = [list(p) for p in s.points]
    return out


def _baseline_from_dict(doc: dict):
    kind = doc.get("kind", "quadratic")
    if kind == "quadratic":
        return QuadraticBaseline(doc.get("intercept", 0.4), doc.get("scale", 0.2), doc.get("coord", 0))
    if kind == "linear":
        return LinearBaseline(tuple(doc["w"]), doc.get("intercept", 0.0))
    if kind == "constant":
        return ConstantBaseline(doc["value"])
    raise ValueError(f"unknown baseline {kind!r}")


def _baseline_to_dict(b) -> dict:
    if isinstance(b, QuadraticBaseline):
        return {"kind": "quadratic", "intercept": b.intercept, "scale": b.scale, "coord": b.coord}
    if isinstance(b, LinearBaseline):
        return {"kind": "linear", "w": list(b.w), "intercept": b.intercept}
    if isinstance(b, ConstantBaseline):
        return {"kind": "constant", "value": b.value}
    raise ValueError("custom baselines cannot be serialized")


def instance_from_dict(doc: dict, T: int, d: int | None = None):
    """Build an instance from its JSON form (see the README for the schema)."""
    model = doc["model"]
    noise = doc.get("outcome_noise", "bernoulli")
    if model == "adversarial":
        sched = doc["schedule"]
        kind = sched["kind"]
        L = doc.get("L")
        if kind == "constant":
            return constant_schedule(T, sched["win_mean"], sched["lose_mean"],
                                     dist_from_dict(sched["hob"]), L, noise)
        if kind == "piecewise":
            segs = [(s["fraction"], s["win_mean"], s["lose_mean"], dist_from_dict(s["hob"]))
                    for s in sched["segments"]]
            return piecewise_schedule(T, segs, L, noise)
        if kind == "drift":
            return drifting_schedule(T, sched["win_start"], sched["win_end"], sched["lose_mean"],
                                     dist_from_dict(sched["hob"]), L, noise)
        if kind == "lower_bound":
            return LowerBoundInstance(mu=sched["mu"], L=L or 50.0).as_adversarial(T, noise)
        raise ValueError(f"unknown adversarial schedule {kind!r}")
    hob = _hob_from_dict(doc["hob"], T)
    schedule = _schedule_from_dict(doc.get("contexts", {}))
    L = doc.get("L")
    if L is None:
        L = hob.density_bound if isinstance(hob, LinearHob) else hob.G.density_bound
    if model == "linear_po":
        if "lower_bound" in doc:
            lb = doc["lower_bound"]
            return LowerBoundInstance(mu=0.25, delta=lb["delta"], block_dim=d,
                                      signs=tuple(lb.get("signs", ())), L=L).as_linear_po(T, noise)
        return LinearPoInstance(doc["theta_win"], doc["theta_lose"], schedule, hob, L, T, noise)
    if model == "linear_te":
        return LinearTeInstance(doc["theta"], schedule, hob, L, T,
                                _baseline_from_dict(doc.get("baseline", {})), noise)
    raise ValueError(f"unknown model {model!r}")


def instance_to_dict(instance) -> dict:
    """JSON form of a Model 2 or Model 3 instance, or of a constant Model 1
    instance."""
    noise = instance.outcome_noise
    if isinstance(instance, AdversarialInstance):
        if not isinstance(instance.hob, IidHob) or np.ptp(instance.win_means) or np.ptp(instance.lose_means):
            raise ValueError("only constant adversarial schedules have a canonical JSON form")
        return {"model": "adversarial", "L": instance.L, "outcome_noise": noise,
                "schedule": {"kind": "constant", "win_mean": float(instance.win_means[0]),
                             "lose_mean": float(instance.lose_means[0]),
                             "hob": dist_to_dict(instance.hob.G)}}
    base = {"L": instance.L, "outcome_noise": noise, "hob": _hob_to_dict(instance.hob),
            "contexts": _schedule_to_dict(instance.schedule)}
    if isinstance(instance, LinearPoInstance):
        return {"model": "linear_po", "theta_win": instance.theta_win.tolist(),
                "theta_lose": instance.theta_lose.tolist(), **base}
    return {"model": "linear_te", "theta": instance.theta.tolist(),
            "baseline": _baseline_to_dict(instance.baseline), **base}
