"""Command-line entry point: ``fpabid {run,sweep,verify,export}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .harness import ExperimentConfig, run_experiment, run_sweep, write_log_csv, write_results
from .suites import run_property_suites


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise SystemExit("--config is required for this command")
    return ExperimentConfig.from_json(args.config)


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)


def cmd_run(args) -> int:
    cfg = _load(args)
    results = run_experiment(cfg, args.seeds, args.threads)
    out = args.out or f"out/{cfg.name or 'run'}"
    summary = write_results(results, out, cfg)
    print(f"{cfg.name or cfg.policy}: T={cfg.T} seeds={summary['n_seeds']} "
          f"mean regret {summary['mean_final_regret']:.3f} (se {summary['se_final_regret']:.3f}) -> {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    horizons = args.horizons or list(cfg.horizons) or [cfg.T]
    regrets, fit = run_sweep(cfg, horizons, args.seeds, args.threads)
    report = {"config": cfg.to_dict(), "horizons": horizons,
              "mean_regret": {str(T): float(np.mean(r)) for T, r in regrets.items()},
              "regrets": {str(T): r.tolist() for T, r in regrets.items()},
              "slope": fit.slope, "slope_stderr": fit.stderr, "n_excluded": fit.n_excluded}
    out = args.out or f"out/{cfg.name or 'sweep'}"
    os.makedirs(out, exist_ok=True)
    _dump(report, os.path.join(out, "sweep.json"))
    for T in horizons:
        print(f"T={T}: mean regret {report['mean_regret'][str(T)]:.3f}")
    print(f"slope {fit.slope:.3f} +- {fit.stderr:.3f} -> {out}")
    return 0


def cmd_verify(args) -> int:
    report = run_property_suites(args.suite)
    for line in report["lines"]:
        print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _dump(report, os.path.join(args.out, "verify.json"))
    return 0 if report["passed"] else 1


def cmd_export(args) -> int:
    cfg = _load(args)
    results = run_experiment(cfg, args.seeds, args.threads)
    out = args.out or f"out/{cfg.name or 'export'}"
    os.makedirs(out, exist_ok=True)
    write_log_csv(os.path.join(out, "rounds.csv"), [r.log for r in results])
    C = np.vstack([r.trace.cum_regret for r in results])
    mean = C.mean(axis=0)
    se = C.std(axis=0, ddof=1) / np.sqrt(C.shape[0]) if C.shape[0] > 1 else np.zeros_like(mean)
    with open(os.path.join(out, "curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_cum_regret", "se_cum_regret", "n_seeds"])
        for t, (m, s) in enumerate(zip(mean, se), start=1):
            w.writerow([t, repr(float(m)), repr(float(s)), C.shape[0]])
    print(f"wrote {out}/curve.csv and {out}/rounds.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpabid", description="First-price auction bidding experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
            sp.add_argument("--seeds", type=int, metavar="N", help="number of replications")
            sp.add_argument("--threads", type=int, default=1, metavar="K", help="worker processes")
        sp.add_argument("--out", metavar="DIR", help="output directory")

    common(sub.add_parser("run", help="run one config"))
    sp = sub.add_parser("sweep", help="run a config over a horizon grid and fit the regret slope")
    common(sp)
    sp.add_argument("--horizons", type=int, nargs="+", metavar="T")
    sp = sub.add_parser("verify", help="run property suites")
    common(sp, config=False)
    sp.add_argument("--suite", default="all", metavar="NAME", help="suite, group (all, exact) or comma list")
    common(sub.add_parser("export", help="run a config and write a plot-ready regret curve"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "export": cmd_export}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
