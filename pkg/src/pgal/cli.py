"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import agent as ag
from . import backends
from . import lut as lutmod
from .harness import (
    ConfigError,
    ExperimentConfig,
    compare_strategies,
    initial_state,
    make_oracle,
    make_world,
    run_al_experiment,
    stream_rng,
)
from .plot import emit_curve_svg
from .pool import SelectionBatch

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _int_list(text):
    return [int(s) for s in text.split(",") if s.strip()]


def _str_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


# (flag, config field, type)
CONFIG_FLAGS = [
    ("--backend", "backend", str),
    ("--n-clusters", "n_clusters", int),
    ("--per-cluster", "per_cluster", int),
    ("--dim", "dim", int),
    ("--sigma", "sigma", float),
    ("--n-points", "n_points", int),
    ("--radius", "radius", float),
    ("--noise", "noise", float),
    ("--strategies", "strategies", _str_list),
    ("--seeds", "seeds", _int_list),
    ("--initial", "initial", int),
    ("--budget", "budget", int),
    ("--cycles", "cycles", int),
    ("--rl-iters", "rl_iters", int),
    ("--lr", "lr", float),
    ("--lam", "lam", float),
    ("--baseline-mode", "baseline_mode", str),
    ("--clip-norm", "clip_norm", float),
    ("--hidden", "hidden", int),
    ("--lut-size", "lut_size", int),
    ("--k", "k", int),
    ("--lut-eps", "lut_eps", float),
    ("--workers", "workers", int),
    ("--out", "out", str),
]


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    for flag, dest, typ in CONFIG_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None)
    p.add_argument("--warm-start", dest="warm_start", action="store_true", default=None,
                   help="carry agent parameters across cycles")
    p.add_argument("--no-standardize", dest="standardize", action="store_false", default=None)


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for _, dest, _ in CONFIG_FLAGS:
        val = getattr(args, dest)
        if val is not None:
            setattr(cfg, dest, val)
    for dest in ("warm_start", "standardize"):
        val = getattr(args, dest)
        if val is not None:
            setattr(cfg, dest, val)
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgal", description="Batch active learning with a learned sampling agent")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one (strategy, seed) cell")
    _add_config_flags(p)
    p.add_argument("--strategy", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("compare", help="run the strategy x seed matrix and write curves.csv")
    _add_config_flags(p)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("build-lut", help="build a lookup table for the initial labeled set")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)

    p = sub.add_parser("estimate", help="query a saved lookup table with a list of ids")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lut", required=True)
    p.add_argument("--ids", required=True, type=_int_list)
    p.add_argument("--save", action="store_true", help="write the table back if a direct evaluation grew it")

    p = sub.add_parser("plot", help="render curves.csv as SVG")
    p.add_argument("csv")
    p.add_argument("--output", required=True)
    return parser


def _setup(cfg, seed):
    world = make_world(cfg, seed)
    return world, make_oracle(cfg, world), initial_state(cfg, world, seed)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "plot":
            emit_curve_svg(args.csv, args.output)
            return EXIT_OK
        cfg = config_from_args(args)
        if args.command == "run":
            if args.strategy not in cfg.strategies:
                cfg.strategies = [args.strategy]
                cfg.validate()
            out = Path(cfg.out) / args.strategy / f"seed{args.seed}"
            res = run_al_experiment(cfg, args.strategy, args.seed, out)
            for p in res.points:
                print(f"cycle={p.cycle} labeled={p.labeled} performance={p.performance:.6f}")
        elif args.command == "compare":
            compare_strategies(cfg, cfg.out, jobs=args.jobs)
            print(Path(cfg.out) / "curves.csv")
        elif args.command == "build-lut":
            _, oracle, state = _setup(cfg, args.seed)
            table = lutmod.build_lut(state, oracle, cfg.lut_size, cfg.budget,
                                     stream_rng(args.seed, "build-lut"), workers=cfg.workers)
            table.save(args.output)
            print(f"{table.M} entries -> {args.output}")
        elif args.command == "estimate":
            _, oracle, state = _setup(cfg, args.seed)
            table = lutmod.LookupTable.load(args.lut)
            grown = table.M
            res = lutmod.estimate_performance(table, SelectionBatch(tuple(args.ids)), state.pool,
                                              cfg.k, oracle, seed=args.seed, eps=cfg.lut_eps)
            if args.save and table.M != grown:
                table.save(args.lut)
            print(json.dumps({"value": res.value, "source": res.source,
                              "min_distance": res.min_distance, "threshold": res.threshold}))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
