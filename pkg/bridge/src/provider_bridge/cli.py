"""Command line entry point: ``provider-bridge --listen host:port``."""

from __future__ import annotations

import argparse
import sys

from .backends import ModelLoadError, available_models
from .server import DEFAULT_MODELS, BridgeConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="provider-bridge",
        description="Serve vision providers behind the line-JSON wire protocol.",
    )
    parser.add_argument("--listen", default="127.0.0.1:7461", help="host:port to bind")
    for role, default in DEFAULT_MODELS.items():
        parser.add_argument(
            f"--{role}",
            default=default,
            help=f"{role} model id (available: {', '.join(available_models(role))})",
        )
    parser.add_argument("--device", default="cpu", help="device hint for model adapters")
    parser.add_argument("--timeout", type=float, default=10.0,
                        help="per-connection idle timeout in seconds")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = BridgeConfig(
            listen=args.listen,
            models={role: getattr(args, role) for role in DEFAULT_MODELS},
            device=args.device,
            timeout=args.timeout,
        )
        serve(config)
    except (ModelLoadError, ValueError) as exc:
        print(f"provider-bridge: startup failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
