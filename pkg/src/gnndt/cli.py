"""Command-line entry point for data generation, training, and studies.

Each subcommand loads an optional JSON config (fields of ExperimentSpec)
and applies the command-line overrides on top. Exit codes: 0 on success,
2 on configuration errors, 3 on runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .env import ConfigError
from .experiments import CSV_COLUMNS, ExperimentSpec, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMMANDS = {
    "gen-data": "gen_data",
    "train": "train",
    "eval": "eval",
    "ablate": "ablate",
    "sweep-k": "k_sweep",
    "sweep-mix": "mix_sweep",
    "generalize": "generalize",
    "scale": "scale",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file of experiment fields")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=str, default=None,
                        help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS thread counts")
    parser.add_argument("--num-chargers", type=int, default=None)
    parser.add_argument("--horizon", type=int, default=None)
    parser.add_argument("--trajectories", type=int, default=None)
    parser.add_argument("--policy", type=str, default=None,
                        choices=["random", "bau", "cafap", "optimal"])
    parser.add_argument("--dataset", type=str, default=None)
    parser.add_argument("--checkpoint", type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnndt",
        description="EV-charging optimization with a graph decision transformer")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        _add_common(sub.add_parser(name))
    report = sub.add_parser("report", help="summarize one or more result CSVs")
    report.add_argument("csv", nargs="+")
    return parser


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    doc: dict = {}
    if args.config:
        doc.update(json.loads(Path(args.config).read_text()))
    doc["mode"] = COMMANDS[args.command]
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out_dir"] = args.out
    if args.num_chargers is not None:
        doc["num_chargers"] = args.num_chargers
    if args.horizon is not None:
        doc["horizon_T"] = args.horizon
    if args.trajectories is not None:
        doc["num_trajectories"] = args.trajectories
    if args.policy is not None:
        doc["policy"] = args.policy
    if args.dataset is not None:
        doc["dataset_path"] = args.dataset
    if args.checkpoint is not None:
        doc["checkpoint_path"] = args.checkpoint
    return ExperimentSpec.from_dict(doc)


def _cmd_report(paths: list[str]) -> int:
    import csv as csv_mod
    import numpy as np
    rows = []
    for path in paths:
        with open(path, newline="") as fh:
            rows.extend(csv_mod.DictReader(fh))
    if not rows:
        print("no rows found", file=sys.stderr)
        return EXIT_CONFIG
    by_algo: dict[str, list[dict]] = {}
    for row in rows:
        by_algo.setdefault(row["algorithm"], []).append(row)
    print(f"{'algorithm':<20} {'reward':>18} {'satisfaction_pct':>18} "
          f"{'violation_kw':>14} {'cost_eur':>14}")
    for algo in sorted(by_algo):
        sub = by_algo[algo]
        cells = []
        for col in ("reward", "satisfaction_pct", "violation_kw", "cost_eur"):
            vals = np.array([float(r[col]) for r in sub])
            std = vals.std(ddof=1) if len(vals) > 1 else 0.0
            cells.append(f"{vals.mean():.2f}±{std:.2f}")
        print(f"{algo:<20} {cells[0]:>18} {cells[1]:>18} "
              f"{cells[2]:>14} {cells[3]:>14}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        try:
            return _cmd_report(args.csv)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        spec = _spec_from_args(args)
    except (json.JSONDecodeError, TypeError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(spec)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    printable = {k: v for k, v in result.items() if k != "rows"}
    print(json.dumps(printable, indent=1, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
