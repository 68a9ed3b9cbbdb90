"""Command-line entry point: ``uavsense run``."""

from __future__ import annotations

import argparse
import sys

import yaml

from .harness import config_from_dict, config_to_dict, default_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uavsense")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte-Carlo experiment")
    run.add_argument("--config", help="YAML config file mirroring ExperimentConfig fields")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, help="master RNG seed")
    run.add_argument("--preset", choices=["paper", "desk"], default="paper")
    run.add_argument("--sweep", choices=["tx_power", "num_bs", "num_uavs"])
    run.add_argument("--sweep-values", type=float, nargs="+")
    run.add_argument("--trials", type=int)
    run.add_argument("--dualpol", action=argparse.BooleanOptionalAction, default=None)
    run.add_argument("--bypass-detection", action=argparse.BooleanOptionalAction,
                     default=None)
    return parser


def _load_config(args) -> dict:
    data = config_to_dict(default_config(args.preset))
    if args.config:
        with open(args.config) as fh:
            file_cfg = yaml.safe_load(fh) or {}
        if not isinstance(file_cfg, dict):
            raise ValueError("config file must hold a mapping")
        data.update(file_cfg)
    for key, val in [
        ("seed", args.seed),
        ("sweep", args.sweep),
        ("sweep_values", args.sweep_values),
        ("trials", args.trials),
        ("dualpol", args.dualpol),
        ("bypass_detection", args.bypass_detection),
    ]:
        if val is not None:
            data[key] = val
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        cfg = config_from_dict(_load_config(args))
        rows, records = run_experiment(cfg, out_dir=args.out)
        failed = sum(1 for r in records if r.failed)
        print(f"wrote {len(rows)} metric rows for {len(records)} trials "
              f"({failed} failed) to {args.out}")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
