"""Command line entry point: ``nsg run|list|version``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .harness import EXPERIMENTS, CheckDomainError, ConfigError, run_config, write_csv


def _run(args) -> int:
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        report, rows = run_config(cfg, timing=not args.no_timing)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    except CheckDomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        write_csv(rows, args.csv)
    for c in report["checks"]:
        if not c["satisfied"]:
            print(f"unsatisfied: {c['name']} (margin {c['margin']})", file=sys.stderr)
    return 0 if report["satisfied"] else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nsg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--csv")
    run.add_argument("--no-timing", action="store_true",
                     help="zero runtime_ms so repeated runs are byte-identical")
    sub.add_parser("list", help="list experiments")
    sub.add_parser("version", help="print the version")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "list":
        for name, exp in EXPERIMENTS.items():
            print(f"{name}: {exp.anchor}")
        return 0
    if args.command == "version":
        print(f"nsg {__version__}")
        return 0
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
