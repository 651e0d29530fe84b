"""Command-line entry point: ``run``, ``compare`` and ``sweep``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .experiment import SWEEP_AXES, compare_strategies, run_experiment, sweep


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coldstart-al", description=__doc__)
    parser.add_argument("--out", default="runs", help="output directory (default: runs)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configuration over its seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, action="append", dest="seeds", help="override seeds (repeatable)")

    cmp_ = sub.add_parser("compare", help="run several configurations on shared seeds")
    cmp_.add_argument("--configs", nargs="+", required=True)

    sw = sub.add_parser("sweep", help="vary one protocol setting")
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--config", required=True)

    # accept --out after the subcommand as well
    for p in (run, cmp_, sw):
        p.add_argument("--out", default=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = Path(args.out)
    try:
        if args.command == "run":
            summary = run_experiment(load_config(args.config), seeds=args.seeds, out_dir=out)
            print(f"{summary.strategy} pretrain={summary.pretrain} mean={summary.mean:.4f} std={summary.std:.4f}")
        elif args.command == "compare":
            for s in compare_strategies([load_config(p) for p in args.configs], out_dir=out):
                print(f"{s.strategy} pretrain={s.pretrain} mean={s.mean:.4f} std={s.std:.4f}")
        else:
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            for value, s in sweep(args.axis, values, load_config(args.config), out_dir=out):
                print(f"{args.axis}={value} mean={s.mean:.4f} std={s.std:.4f}")
    except Exception as exc:  # noqa: BLE001 - one machine-parsable line per failure
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
