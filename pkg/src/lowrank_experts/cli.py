"""Command line entry point: ``lowrank-experts run|verify|plot``."""

import argparse
import sys
from pathlib import Path

from . import algorithms
from .errors import ContractError, NumericError


def _cmd_run(args):
    from . import harness

    try:
        rows = harness.run(args.config, args.out, jobs=args.jobs, summary_only=args.summary_only,
                           timing=not args.no_timing, plot=args.plot)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{len(rows)} runs written to {Path(args.out) / 'summary.csv'}")
    return 0


def _cmd_verify(args):
    from . import verify

    checks = verify.run_suite(args.filter, span_tol=args.span_tol)
    if not checks:
        print(f"no invariant matches filter {args.filter!r}", file=sys.stderr)
        return 2
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} invariants hold")
    return 1 if failed else 0


def _cmd_plot(args):
    from . import plotting

    summary = Path(args.summary)
    if not summary.is_file():
        print(f"error: summary file {summary} not found", file=sys.stderr)
        return 2
    try:
        n = plotting.plot_summary(summary, args.out)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{n} curves written to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="lowrank-experts", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute the runs of a JSON config")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--summary-only", action="store_true", help="skip per-round CSV files")
    p.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 for byte-stable summaries")
    p.add_argument("--plot", action="store_true", help="also render regret.svg into the output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--filter", default=None, help="only checks whose name contains this string")
    p.add_argument("--span-tol", type=float, default=algorithms.SPAN_TOL,
                   help="span tolerance for the low-rank learner (fault injection)")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("plot", help="render cumulative regret curves as SVG")
    p.add_argument("summary", help="summary.csv written by run")
    p.add_argument("out", help="output SVG path")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
