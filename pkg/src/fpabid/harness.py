"""Experiment runner: configs, replications, regret, slopes and CSV output.

Regret is pseudo-regret: both the benchmark and the policy are scored by
their expected payoff under the true HOB law and true outcome means, so the
only randomness left is in which bids the policy ends up making.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import jsonschema
import numpy as np
from scipy import stats
from scipy.special import ndtr

from .auction_core import argmax_values
from .environments import (
    AdversarialInstance,
    IidHob,
    LinearHob,
    PerRound,
    generate_stream,
    instance_from_dict,
    true_cdf,
    validate_instance,
)
from .hob_estimation import OracleKind, make_oracle
from .policy_exp3 import GRID_CAP, Exp3Policy, make_grid
from .policy_linpo import SupLinPoPolicy, policy_grid
from .policy_linte import ConstantsConfig, SupLinTePolicy

logger = logging.getLogger(__name__)

MODELS = ("adversarial", "linear_po", "linear_te")
POLICIES = ("exp3", "suplinpo", "suplinte", "fixed_oracle", "contextual_oracle")
COMPATIBLE = {
    "exp3": MODELS,
    "suplinpo": ("linear_po",),
    "suplinte": ("linear_po", "linear_te"),
    "fixed_oracle": ("adversarial",),
    "contextual_oracle": ("linear_po", "linear_te"),
}
CSV_COLUMNS = ("seed", "t", "bid", "hob", "won", "stage", "criterion", "inst_regret", "cum_regret",
               "epsilon_or_delta")
ORACLE_GRID_SIZE = 2001
FIXED_BID_STEP = 1e-5

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "policy", "T", "instance"],
    "properties": {
        "name": {"type": "string"},
        "model": {"enum": list(MODELS)},
        "policy": {"enum": list(POLICIES)},
        "T": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 0},
        "n_seeds": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0},
        "horizons": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "instance": {"type": "object"},
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["perfect", "dkw", "bernstein", "linear"]},
                "c_bernstein": {"type": "number", "exclusiveMinimum": 0},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "reg": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "policy_size": {"type": ["integer", "null"], "minimum": 2},
                "oracle_size": {"type": "integer", "minimum": 2},
                "exp3_cap": {"type": "integer", "minimum": 1},
                "fixed_step": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "constants": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                           for k in ("c1", "c2", "c3", "c_bias", "c_var", "L")},
        },
        "exp3": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"eta": {"type": ["number", "null"], "exclusiveMinimum": 0}},
        },
        "force_criterion": {"enum": [None, 0, 1]},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    policy: str
    T: int
    instance: dict
    d: int = 0
    n_seeds: int = 1
    base_seed: int = 0
    name: str = ""
    horizons: tuple = ()
    oracle: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    exp3: dict = field(default_factory=dict)
    force_criterion: int | None = None

    def __post_init__(self):
        if self.model not in COMPATIBLE[self.policy]:
            raise ValueError(f"policy {self.policy} is not compatible with model {self.model}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        jsonschema.validate(doc, CONFIG_SCHEMA)
        doc = dict(doc)
        if "horizons" in doc:
            doc["horizons"] = tuple(doc["horizons"])
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["horizons"] = list(self.horizons)
        if not out["horizons"]:
            del out["horizons"]
        return out

    def with_(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **kw})

    def build_instance(self, T: int | None = None):
        return instance_from_dict({"model": self.model, **self.instance}, self.T if T is None else T,
                                  self.d)

    def oracle_kind(self) -> OracleKind:
        return OracleKind(**self.oracle)

    def constants_config(self, L: float) -> ConstantsConfig:
        return ConstantsConfig(**{"L": L, **self.constants})


@dataclass(eq=False)
class RegretTrace:
    """Per-round expected payoffs of benchmark and policy and the regret."""

    oracle_payoff: np.ndarray
    policy_payoff: np.ndarray
    inst_regret: np.ndarray
    cum_regret: np.ndarray
    benchmark: dict = field(default_factory=dict)

    @classmethod
    def from_payoffs(cls, oracle_payoff, policy_payoff, benchmark=None) -> "RegretTrace":
        inst = np.asarray(oracle_payoff) - np.asarray(policy_payoff)
        return cls(np.asarray(oracle_payoff, dtype=float), np.asarray(policy_payoff, dtype=float),
                   inst, np.cumsum(inst), benchmark or {})

    @property
    def final(self) -> float:
        return float(self.cum_regret[-1]) if self.cum_regret.size else 0.0


@dataclass(eq=False)
class RoundLog:
    """Per-round log columns (see ``CSV_COLUMNS``)."""

    seed: np.ndarray
    t: np.ndarray
    bid: np.ndarray
    hob: np.ndarray
    won: np.ndarray
    stage: np.ndarray
    criterion: np.ndarray
    inst_regret: np.ndarray
    cum_regret: np.ndarray
    epsilon_or_delta: np.ndarray
    extras: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        return all(np.array_equal(getattr(self, c), getattr(other, c),
                                  equal_nan=getattr(self, c).dtype.kind == "f")
                   for c in CSV_COLUMNS)


@dataclass(eq=False)
class ReplicationResult:
    seed: int
    trace: RegretTrace
    log: RoundLog
    summary: dict


# ----------------------------------------------------------------------------
# oracles for the benchmark


def _fixed_bid_grid(policy_bids, step: float) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.union1d(np.arange(n + 1) / n, np.asarray(policy_bids, dtype=float))


def _groups(instance: AdversarialInstance):
    return instance.hob_groups()


def fixed_benchmark(instance: AdversarialInstance, grid) -> tuple[float, float, np.ndarray]:
    """Best fixed bid on ``grid`` for the horizon-summed expected payoff.

    Returns ``(bid, total, per_round_payoff)``.
    """
    grid = np.asarray(grid, dtype=float)
    total = np.zeros(grid.size)
    eff = instance.win_means - instance.lose_means
    for G, mask in _groups(instance):
        n = mask.sum()
        total += G(grid) * (eff[mask].sum() - n * grid) + instance.lose_means[mask].sum()
    i = argmax_values(total, "max")
    b = float(grid[i])
    return b, float(total[i]), per_round_payoff(instance, np.full(instance.T, b))


def per_round_payoff(instance, bids, X=None) -> np.ndarray:
    """Expected payoff of ``bids[t]`` in each round under the truth."""
    bids = np.asarray(bids, dtype=float)
    if X is None:
        X = instance.contexts()
    mw, ml = instance.means_all(X)
    g = true_cdf_values(instance, bids, X)
    return g * (mw - ml - bids) + ml


def true_cdf_values(instance, bids, X) -> np.ndarray:
    """``G_t(b_t)`` for every round."""
    bids = np.asarray(bids, dtype=float)
    hob = instance.hob
    if isinstance(hob, IidHob):
        return np.asarray(hob.G(bids), dtype=float)
    if isinstance(hob, LinearHob):
        return ndtr((bids - X @ hob.phi) / hob.sigma)
    out = np.empty(bids.size)
    for k, G in enumerate(hob.distributions):
        m = hob.index == k
        out[m] = G(bids[m])
    return out


def contextual_oracle(instance, X, grid, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Per-round best bid on ``grid`` and its expected payoff, ties to the
    largest bid."""
    grid = np.asarray(grid, dtype=float)
    mw, ml = instance.means_all(X)
    mw = np.broadcast_to(mw, (X.shape[0],))
    ml = np.broadcast_to(ml, (X.shape[0],))
    T = X.shape[0]
    bids, vals = np.empty(T), np.empty(T)
    hob = instance.hob
    g_fixed = np.asarray(hob.G(grid)) if isinstance(hob, IidHob) else None
    for a in range(0, T, chunk):
        b = min(a + chunk, T)
        if g_fixed is not None:
            G = np.broadcast_to(g_fixed, (b - a, grid.size))
        elif isinstance(hob, LinearHob):
            G = ndtr((grid[None, :] - (X[a:b] @ hob.phi)[:, None]) / hob.sigma)
        else:
            G = np.vstack([hob.distribution(t + 1)(grid) for t in range(a, b)])
        obj = G * ((mw[a:b] - ml[a:b])[:, None] - grid[None, :]) + ml[a:b, None]
        j = grid.size - 1 - np.argmax(obj[:, ::-1], axis=1)
        bids[a:b] = grid[j]
        vals[a:b] = obj[np.arange(b - a), j]
    return bids, vals


def oracle_bid(instance, t: int | None = None, x=None, grid=None):
    """Benchmark bid: the per-round optimum for contextual models, or the
    best fixed bid over the whole schedule for Model 1."""
    if isinstance(instance, AdversarialInstance):
        grid = _fixed_bid_grid([], FIXED_BID_STEP) if grid is None else grid
        return fixed_benchmark(instance, grid)[0]
    grid = np.linspace(0, 1, ORACLE_GRID_SIZE) if grid is None else np.asarray(grid, dtype=float)
    x = np.asarray(x, dtype=float)
    G = true_cdf(instance, t, x)
    mw, ml = instance.mean_outcomes(t, x)
    obj = G(grid) * (mw - ml - grid) + ml
    return float(grid[argmax_values(obj, "max")])


# ----------------------------------------------------------------------------
# replications


def replication_seeds(base_seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent environment and policy generators for replication
    ``index``."""
    env, pol = np.random.SeedSequence(base_seed, spawn_key=(index,)).spawn(2)
    return np.random.default_rng(env), np.random.default_rng(pol)


class _FixedBidPolicy:
    name = "fixed_oracle"

    def __init__(self, bid):
        self.bid = float(bid)

    def act(self, x, estimate):
        return self.bid, {}

    def update(self, *a):
        pass


class _ContextualOraclePolicy:
    name = "contextual_oracle"

    def __init__(self, bids):
        self.bids = bids
        self.t = 0

    def act(self, x, estimate):
        self.t += 1
        return float(self.bids[self.t - 1]), {}

    def update(self, *a):
        pass


def _build_policy(cfg: ExperimentConfig, instance, T, X, rng, fixed_bid, oracle_bids):
    d = instance.d
    gsize = cfg.grid.get("policy_size")
    if cfg.policy == "exp3":
        return Exp3Policy(T, rng, eta=cfg.exp3.get("eta"), grid_cap=cfg.grid.get("exp3_cap", GRID_CAP))
    if cfg.policy == "suplinpo":
        return SupLinPoPolicy(T, d, rng, grid=policy_grid(T, gsize))
    if cfg.policy == "suplinte":
        return SupLinTePolicy(T, d, cfg.constants_config(instance.L), rng, grid=policy_grid(T, gsize),
                              force_criterion=cfg.force_criterion)
    if cfg.policy == "fixed_oracle":
        return _FixedBidPolicy(fixed_bid)
    return _ContextualOraclePolicy(oracle_bids)


def run_replication(cfg: ExperimentConfig, seed: int, T: int | None = None, audit: bool = False) -> ReplicationResult:
    """One seeded run; deterministic in ``(cfg, seed)``.

    The policy only sees contexts, its own feedback, the revealed HOBs and
    the oracle's estimates. Truth is used afterwards to score it.
    """
    T = cfg.T if T is None else int(T)
    instance = cfg.build_instance(T)
    problems = validate_instance(instance)
    if problems:
        raise ValueError("invalid instance: " + "; ".join(problems))
    env_rng, pol_rng = replication_seeds(cfg.base_seed, seed)
    stream = generate_stream(instance, env_rng)
    X = stream.contexts
    d = instance.d
    is_adv = isinstance(instance, AdversarialInstance)

    fixed_bid = oracle_vals = oracle_bids = None
    benchmark: dict = {}
    if is_adv:
        pol_grid = make_grid(T, cfg.grid.get("exp3_cap", GRID_CAP))[0] if cfg.policy == "exp3" else []
        fgrid = _fixed_bid_grid(pol_grid, cfg.grid.get("fixed_step", FIXED_BID_STEP))
        fixed_bid, total, oracle_vals = fixed_benchmark(instance, fgrid)
        benchmark.update(bid=fixed_bid, total=total)
        if cfg.policy == "exp3":
            gb, gtot, _ = fixed_benchmark(instance, pol_grid)
            benchmark.update(grid_bid=gb, grid_total=gtot)
    else:
        gsize = cfg.grid.get("policy_size")
        ogrid = np.union1d(np.linspace(0, 1, cfg.grid.get("oracle_size", ORACLE_GRID_SIZE)),
                           policy_grid(T, gsize))
        oracle_bids, oracle_vals = contextual_oracle(instance, X, ogrid)

    policy = _build_policy(cfg, instance, T, X, pol_rng, fixed_bid, oracle_bids)
    if audit and hasattr(policy, "audit"):
        policy.audit = []
    kind = cfg.oracle_kind()
    needs_estimate = cfg.policy in ("suplinpo", "suplinte")
    oracle = make_oracle(kind, T, d, truth=lambda t, x: true_cdf(instance, t, x)) if needs_estimate else None

    bids = np.empty(T)
    stage = np.empty(T, dtype=object)
    criterion = np.full(T, -1, dtype=int)
    radius = np.full(T, np.nan)
    extras = {k: np.full(T, np.nan) for k in ("raw_bid", "z", "b_star_0", "b_star_1", "sigma", "width")}
    exp3_payoff = np.empty(T) if cfg.policy == "exp3" else None
    if exp3_payoff is not None:
        pgrid = policy.state.grid
        eff = instance.win_means - instance.lose_means if is_adv else None
        if is_adv:
            g_groups = [np.asarray(G(pgrid)) for G, _ in _groups(instance)]
            g_index = (np.zeros(T, dtype=int) if isinstance(instance.hob, IidHob) else instance.hob.index)
        else:
            mw_all, ml_all = instance.means_all(X)

    for t in range(1, T + 1):
        x = X[t - 1]
        est = oracle.estimate(x) if oracle is not None else None
        bid, info = policy.act(x, est)
        hob = stream.hob[t - 1]
        won = bid >= hob
        observed = stream.v_win[t - 1] if won else stream.v_lose[t - 1]
        if exp3_payoff is not None:
            p = policy.p
            if is_adv:
                g = g_groups[g_index[t - 1]]
                exp3_payoff[t - 1] = p @ (g * (eff[t - 1] - pgrid)) + instance.lose_means[t - 1]
            else:
                g = true_cdf(instance, t, x)(pgrid)
                exp3_payoff[t - 1] = p @ (g * (mw_all[t - 1] - ml_all[t - 1] - pgrid)) + ml_all[t - 1]
        policy.update(x, bid, hob, observed, est)
        if oracle is not None:
            oracle.observe(x, hob)
            radius[t - 1] = est.radius
        bids[t - 1] = bid
        tag = info.get("stage", "")
        stage[t - 1] = str(tag)
        criterion[t - 1] = info.get("criterion", -1)
        for k in extras:
            if k in info:
                extras[k][t - 1] = info[k]

    pol_vals = exp3_payoff if exp3_payoff is not None else per_round_payoff(instance, bids, X)
    trace = RegretTrace.from_payoffs(oracle_vals, pol_vals, benchmark)
    log = RoundLog(np.full(T, seed), np.arange(1, T + 1), bids, stream.hob.copy(),
                   (bids >= stream.hob).astype(int), stage.astype(str), criterion, trace.inst_regret,
                   trace.cum_regret, radius, extras)
    summary = {"seed": seed, "T": T, "final_regret": trace.final, "n_clamped": stream.n_clamped,
               **{f"benchmark_{k}": v for k, v in benchmark.items()}}
    if cfg.policy == "exp3" and "grid_total" in benchmark:
        summary["final_regret_grid"] = benchmark["grid_total"] - float(pol_vals.sum())
    if cfg.policy == "suplinte":
        summary["constants"] = asdict(policy.consts)
    if audit and getattr(policy, "audit", None) is not None:
        summary["audit"] = policy.audit
    return ReplicationResult(seed, trace, log, summary)


def _run_one(args):
    cfg_doc, seed, T = args
    return run_replication(ExperimentConfig.from_dict(cfg_doc), seed, T)


def run_experiment(cfg: ExperimentConfig, n_seeds: int | None = None, threads: int = 1,
                   T: int | None = None) -> list[ReplicationResult]:
    """All replications, in seed order regardless of ``threads``."""
    n = cfg.n_seeds if n_seeds is None else n_seeds
    jobs = [(cfg.to_dict(), i, T) for i in range(n)]
    if threads <= 1 or n == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(_run_one, jobs))


# ----------------------------------------------------------------------------
# slopes


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    n_points: int
    n_excluded: int


def slope_fit(regrets_by_T: dict, min_points: int = 4, min_seeds: int = 20) -> SlopeFit:
    """Least-squares slope of ``log(mean final regret)`` against ``log T``.

    ``regrets_by_T`` maps a horizon to the per-seed final regrets. Horizons
    whose mean regret is not positive are dropped and counted.
    """
    Ts, ys, excluded = [], [], 0
    for T, r in sorted(regrets_by_T.items()):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if r.size < min_seeds:
            raise ValueError(f"horizon {T} has {r.size} seeds, need {min_seeds}")
        m = r.mean()
        if m <= 0:
            excluded += 1
            continue
        Ts.append(np.log(T))
        ys.append(np.log(m))
    if len(Ts) < min_points:
        raise ValueError(f"need {min_points} horizons with positive regret, have {len(Ts)}")
    fit = stats.linregress(Ts, ys)
    return SlopeFit(float(fit.slope), float(fit.stderr), float(fit.intercept), len(Ts), excluded)


def run_sweep(cfg: ExperimentConfig, horizons=None, n_seeds=None, threads=1):
    """Final regrets for each horizon and the fitted slope."""
    horizons = list(horizons or cfg.horizons)
    out = {}
    for T in horizons:
        out[T] = np.array([r.trace.final for r in run_experiment(cfg, n_seeds, threads, T)])
    n = len(next(iter(out.values())))
    return out, slope_fit(out, min_seeds=min(20, n))


# ----------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_log_csv(path, logs) -> None:
    """Write one or more :class:`RoundLog` objects to a single CSV."""
    if isinstance(logs, RoundLog):
        logs = [logs]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for lg in logs:
            cols = [getattr(lg, c) for c in CSV_COLUMNS]
            for row in zip(*cols):
                w.writerow([_fmt(v) for v in row])


def read_log_csv(path) -> RoundLog:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = ("seed", "t", "won", "criterion")
    floats = ("bid", "hob", "inst_regret", "cum_regret", "epsilon_or_delta")
    cols = {}
    for c in CSV_COLUMNS:
        vals = [r[c] for r in rows]
        if c in ints:
            cols[c] = np.array(vals, dtype=int)
        elif c in floats:
            cols[c] = np.array([float(v) for v in vals])
        else:
            cols[c] = np.array(vals, dtype=str)
    return RoundLog(**cols)


def concat_logs(logs) -> RoundLog:
    return RoundLog(*[np.concatenate([getattr(lg, c) for lg in logs]) for c in CSV_COLUMNS])


def write_results(results, out_dir, cfg: ExperimentConfig) -> dict:
    """Write ``rounds.csv`` and ``summary.json`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    write_log_csv(os.path.join(out_dir, "rounds.csv"), [r.log for r in results])
    finals = np.array([r.trace.final for r in results])
    summary = {
        "config": cfg.to_dict(),
        "constants": asdict(cfg.constants_config(cfg.build_instance().L)) if cfg.policy == "suplinte" else None,
        "n_seeds": len(results),
        "mean_final_regret": float(finals.mean()),
        "se_final_regret": float(finals.std(ddof=1) / np.sqrt(finals.size)) if finals.size > 1 else 0.0,
        "replications": [{k: v for k, v in r.summary.items() if k != "audit"} for r in results],
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
    return summary
