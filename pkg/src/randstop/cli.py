"""Command line entry point: ``randstop run|validate|list-models``."""

from __future__ import annotations

import argparse
import inspect
import logging
import sys

from . import config as cfgmod
from .diffusion import SimulationError
from .models import REGISTRY
from .runner import run, write_csv


def _parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="randstop",
                                     description="Optimal vs randomized stopping experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment config and write a CSV table")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="CSV path ('-' for stdout)")
    p.add_argument("--trace", action="store_true", help="print per-stage partition diagnostics")
    p.add_argument("--workers", type=int, default=1, help="threads for path simulation")

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")

    sub.add_parser("list-models", help="show the built-in diffusion models")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "list-models":
        for name, factory in REGISTRY.items():
            params = ", ".join(f"{k}={v.default!r}" for k, v in inspect.signature(factory).parameters.items())
            doc = (factory.__doc__ or "").strip().splitlines()[0]
            print(f"{name}({params})\n    {doc}")
        return 0

    try:
        raw = cfgmod.load(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        problems = cfgmod.validate(raw)
        for line in problems:
            print(line)
        if not problems:
            print("ok")
        return 1 if problems else 0

    try:
        cfg = cfgmod.resolve(raw, seed=args.seed, out=args.out)
    except cfgmod.ConfigError as exc:
        for line in exc.problems:
            print(f"error: {line}", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2

    try:
        rows = run(cfg, trace=sys.stderr if args.trace else None, workers=args.workers)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    write_csv(cfg, rows, cfg.out)
    failed = [r for r in rows if not r.passed]
    print(f"{cfg.kind}: {len(rows) - len(failed)}/{len(rows)} checks passed", file=sys.stderr)
    return 0 if not failed else 1


if __name__ == "__main__":
    sys.exit(main())
