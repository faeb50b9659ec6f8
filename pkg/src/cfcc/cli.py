"""Command-line entry point ``cfcc``.

Exit codes: 0 success, 2 configuration or specification error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import CFCCError, ConfigError, DistributionSpecError, InvalidInputError
from .grammar import parse_distribution
from .inversion import DEFAULT_TOLERANCES, Tolerances, invert
from .reservoir import load_config, run_case, validate_monte_carlo

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    trace, paths = run_case(cfg, args.out, seed=args.seed)
    bad = sum(s != "converged" for s in trace.statuses)
    print(f"wrote {paths['data']} and {paths['summary']} ({trace.steps} steps, {bad} non-converged)")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    report = validate_monte_carlo(cfg, args.runs, workers=args.workers)
    out = report.to_dict()
    text = json.dumps(out, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    for j, r in enumerate(report.flood, 1):
        print(
            f"lake {j}: flood violation {r.frequency:.4f} "
            f"[{r.ci_low:.4f}, {r.ci_high:.4f}] nominal {r.limit:.3f}{' FLAGGED' if r.flagged else ''}"
        )
    print(f"in-band fraction {report.in_band_fraction:.4f} over {report.runs} runs x {report.steps} steps")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def _cmd_invert(args) -> int:
    try:
        dist = parse_distribution(args.dist_spec)
    except DistributionSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    tol = DEFAULT_TOLERANCES
    if args.tol is not None:
        try:
            tol = Tolerances(tol_abs=args.tol, tol_rel=args.tol)
        except InvalidInputError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    F, p = invert(dist, args.x, tol)
    print(f"F({args.x:.9g}) = {F.value:.9g}  (error estimate {F.error_estimate:.3g}, batch calls {F.batch_calls})")
    print(f"p({args.x:.9g}) = {p.value:.9g}  (error estimate {p.error_estimate:.3g}, batch calls {p.batch_calls})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfcc", description="Chance-constrained control via characteristic functions.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="closed-loop simulation of a reservoir case")
    run.add_argument("config")
    run.add_argument("--out", default=".", help="output directory (default: current)")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate", help="Monte-Carlo check of the flood/drought levels")
    val.add_argument("config")
    val.add_argument("--runs", type=int, required=True)
    val.add_argument("--workers", type=int, default=1)
    val.add_argument("--out", default=None, help="write the JSON report here")
    val.set_defaults(func=_cmd_validate)

    inv = sub.add_parser("invert", help="CDF and PDF of a distribution at a point")
    inv.add_argument("dist_spec")
    inv.add_argument("x", type=float)
    inv.add_argument("--tol", type=float, default=None, help="absolute and relative tolerance")
    inv.set_defaults(func=_cmd_invert)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CFCCError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
