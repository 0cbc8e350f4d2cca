"""Command-line entry point.

    dexgrasp-lab <command> --config experiment.cfg [--seed N] [--out DIR]
                 [--provider builtin|host:port]

Commands: pretrain, naa, train-teacher, distill, eval, report. Each run
writes into a fresh timestamped directory under the output root and ends
with a ``manifest.json``. Failures exit nonzero with a single JSON error
object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .harness import COMMANDS, ExperimentConfig, cmd_report, new_run_dir

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dexgrasp-lab",
        description="two-stage dexterous-grasping lab: pretraining, "
                    "negative-affordance extraction, residual teachers, "
                    "distillation, and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="output root directory")
        p.add_argument("--provider", default=None,
                       help="'builtin' or a host:port wire endpoint")
        if name == "report":
            p.add_argument("--run", required=True,
                           help="eval run directory to recompute")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.out is not None:
            overrides["out"] = args.out
        if args.provider is not None:
            overrides["provider"] = args.provider
        cfg = ExperimentConfig.from_file(args.config, overrides)
        run_dir = new_run_dir(cfg.out, args.command)
        if args.command == "report":
            manifest = cmd_report(cfg, run_dir, args.run)
        else:
            manifest = COMMANDS[args.command](cfg, run_dir)
    except Exception as exc:  # noqa: BLE001 - single reporting funnel
        sys.stderr.write(json.dumps({
            "error": {"type": type(exc).__name__, "message": str(exc)},
        }) + "\n")
        return 1
    print(f"run directory: {run_dir}")
    print(json.dumps(manifest["metrics"], sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
