"""Command-line entry point: ``fracpucci <command> --config FILE [--out DIR]``.

Exit status is 0 when every check passes, 2 when a check fails and 1 on
configuration or numerical errors.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError
from .runner import COMMANDS, run_scenario

log = logging.getLogger("fracpucci")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracpucci",
                                     description="Fractional extremal operator experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="scenario INI file")
        cmd.add_argument("--out", default=None, help="directory for solution.csv and summary.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        res = run_scenario(args.config, args.command, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name, passed, margin in res.checks:
        print(f"{'PASS' if passed else 'FAIL'} {name} margin={margin:.6g}")
    return 0 if res.passed else 2


if __name__ == "__main__":
    sys.exit(main())
