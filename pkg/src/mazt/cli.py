"""Command-line front end: ``mazt <kind> --config <path> [--threads K] [--out DIR]``.

Exit codes: 0 when every asserted check passes, 2 on a check failure,
3 on a solver failure, 4 on a config error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    BadMass,
    MaztError,
    NonKahler,
    ParseError,
    SeshadriViolation,
    ValidationError,
    WrongRegime,
)
from .scenario import KINDS, parse_scenario, run_scenario

__all__ = ["main"]

_CONFIG_ERRORS = (
    ParseError,
    ValidationError,
    NonKahler,
    BadMass,
    SeshadriViolation,
    WrongRegime,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mazt",
        description=(
            "Run a scenario: regularized curvature-flow envelopes and their "
            "finite-temperature approximations on the flat torus."
        ),
    )
    parser.add_argument("kind", choices=KINDS, help="experiment type to run")
    parser.add_argument("--config", required=True, help="path to the TOML scenario file")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker cap, echoed into the summary for reproducibility (default 1)",
    )
    parser.add_argument(
        "--out", default=None, help="output directory (overrides the config)"
    )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        scenario = parse_scenario(args.config)
        if scenario.kind != args.kind:
            raise ValidationError(
                f"config kind {scenario.kind!r} does not match command {args.kind!r}"
            )
        result = run_scenario(scenario, threads=args.threads, out_dir=args.out)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except MaztError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    for name in sorted(result.summary["checks"]):
        check = result.summary["checks"][name]
        if check["asserted"]:
            status = "PASS" if check["passed"] else "FAIL"
        else:
            status = "INFO"
        print(f"[{status}] {name}: value={check['value']} threshold={check['threshold']}")
    print(f"summary: {result.summary_path}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
