"""Command-line interface: ``dcircuits <command> FILE [flags]``.

Exit status is 0 when every check passes, 1 when any check fails (the
failing names are listed on the last report line) and 2 on malformed
input.  The default seed comes from ``DCIRCUITS_SEED`` when set.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

from ..errors import CircuitError, ParseError
from .commands import COMMANDS, EXAMPLES, run_example
from .document import Document, load_document
from .report import Check, Report

__all__ = ["main", "build_parser", "run", "Document", "Report", "Check", "load_document"]

SEED_ENV = "DCIRCUITS_SEED"


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"error: {SEED_ENV} must be an integer, got {raw!r}")


def _methods(text: str) -> List[str]:
    out = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in out if m not in ("vi", "linear", "mc")]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"methods must be drawn from vi, linear, mc; got {text!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")
    common.add_argument("--tol", type=float, default=1e-10, help="solver tolerance")
    common.add_argument("--slack", type=float, default=1e-9, help="assertion slack")
    common.add_argument("--mc-sigma", type=float, default=4.0, help="Monte Carlo tolerance in standard errors")
    common.add_argument("--mc-trunc", type=float, default=1e-4, help="Monte Carlo truncation error")
    common.add_argument("--n-traj", type=int, default=100_000, help="Monte Carlo trajectories")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for independent audits")
    common.add_argument("--out", default=None, help="also write a JSON report to this path")

    parser = argparse.ArgumentParser(prog="dcircuits", description="Discounted decision circuits: solve, certify and audit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        p.add_argument("file")
        if name == "solve":
            p.add_argument("--method", dest="methods", type=_methods, default=["linear"],
                           help="comma-separated subset of vi,linear,mc")
    p = sub.add_parser("example", parents=[common])
    p.add_argument("name", choices=sorted(EXAMPLES))
    return parser


def run(argv: Optional[List[str]] = None):
    """Parse ``argv`` and return ``(report, args)`` without printing."""
    args = build_parser().parse_args(argv)
    if args.seed is None:
        args.seed = _default_seed()
    if args.command == "example":
        return run_example(args.name, args), args
    return COMMANDS[args.command](load_document(args.file), args), args


def main(argv: Optional[List[str]] = None) -> int:
    try:
        report, args = run(argv)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CircuitError, TypeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(report.render())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    return 0 if report.ok else 1
