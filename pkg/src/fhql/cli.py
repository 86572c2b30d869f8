"""Command line entry point: ``fhql <subcommand> --config cfg.json --seed S --out DIR``.

Exit codes: 0 success, 1 configuration error, 2 failed diagnostic check.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ConfigError, OutputDir

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2

log = logging.getLogger("fhql")


def _solve_dp(cfg):
    harness.run_solve_dp(cfg)
    return EXIT_OK, None


def _train(cfg):
    record = harness.run_training(cfg)[0]
    return EXIT_OK, record


def _random_mdp(cfg):
    return EXIT_OK, harness.run_random_mdp_experiment(cfg)


def _smart_grid(cfg):
    rows = harness.run_smart_grid_experiment(cfg)
    for scenario, algorithm, mean, err, _, _ in rows:
        log.info("%-28s %-13s %.4f +- %.4f", scenario, algorithm, mean, err)
    return EXIT_OK, None


def _diagnostics(cfg):
    reports = harness.run_diagnostics(cfg)
    for name, report in reports.items():
        log.info("%-18s %s", name, "pass" if report["passed"] else "FAIL")
    ok = all(report["passed"] for report in reports.values())
    return (EXIT_OK if ok else EXIT_CHECK), None


COMMANDS = {
    "solve-dp": (_solve_dp, harness.RANDOM_MDP),
    "train": (_train, harness.RANDOM_MDP),
    "random-mdp": (_random_mdp, harness.RANDOM_MDP),
    "smart-grid": (_smart_grid, harness.SMART_GRID),
    "diagnostics": (_diagnostics, harness.DIAGNOSTICS),
}


def _execute(command, cfg):
    try:
        return COMMANDS[command][0](cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG, None


def build_parser():
    parser = argparse.ArgumentParser(prog="fhql", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="master seed (u64)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--replicas", type=int, default=1,
                       help="run seeds seed..seed+k-1 into out/seed_<s>")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    default_kind = COMMANDS[args.command][1]
    try:
        cfg = harness.load_experiment_config(args.config, args.seed, args.out, default_kind)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if args.replicas < 1:
        log.error("--replicas must be >= 1")
        return EXIT_CONFIG
    if args.replicas == 1:
        return _execute(args.command, cfg)[0]

    root = Path(cfg.output_dir)
    seeds = [(cfg.seed + k) % 2**64 for k in range(args.replicas)]
    configs = []
    for s in seeds:
        one = harness.load_experiment_config(args.config, s, str(root / f"seed_{s}"), default_kind)
        configs.append(one)
    with ProcessPoolExecutor() as pool:
        outcomes = list(pool.map(_execute, [args.command] * len(configs), configs))
    records = [(s, code, rec) for s, (code, rec) in zip(seeds, outcomes)]
    rows = [(s, code, "" if rec is None else repr(rec.error),
             "" if rec is None else rec.iterations) for s, code, rec in records]
    OutputDir(root).write_rows("replicas.csv", ["seed", "exit_code", "error", "iterations"], rows)
    return max(code for _, code, _ in records)


if __name__ == "__main__":
    sys.exit(main())
