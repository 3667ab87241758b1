"""Command-line entry point.

Exit codes: 0 on success, 2 when the scenario fails validation, 3 when a
valid scenario faults while running.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from swarmsim.estimation import EstimationFault
from swarmsim.planning import PlanningError
from swarmsim.cli.runner import (
    COMPARE_VARIANTS,
    RuntimeFault,
    format_summary,
    run_compare,
    run_scenario,
)
from swarmsim.cli.scenario import Scenario, ScenarioError, load_scenario

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAULT = 3

_COMMANDS = (
    ("track", "drive a robot along a reference trajectory"),
    ("localize", "estimate one robot's pose from its sensor reports"),
    ("consensus", "run heading agreement across a swarm"),
    ("plan", "map an arena from range scans and plan a path"),
    ("compare", "run every estimator variant on identical noise"),
    ("validate", "check a scenario file without running it"),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmsim",
        description="differential-drive swarm simulation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _COMMANDS:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("scenario", help="path to a scenario YAML file")
        cmd.add_argument("--seed", type=int, default=None,
                         help="replace the scenario seed")
        cmd.add_argument("--out", default="out",
                         help="directory for output files (default: out)")
        cmd.add_argument("--override", action="append", default=[],
                         metavar="KEY=VALUE",
                         help="set a scenario field by dotted path; repeatable")
        if name == "compare":
            cmd.add_argument("--variants", nargs="+", choices=COMPARE_VARIANTS,
                             metavar="NAME",
                             help="estimator variants to run (default: "
                                  "adaptive nonadaptive fixed_dt wheels)")
    return parser


def _check_kind(command: str, scenario: Scenario) -> None:
    expected = "localize" if command == "compare" else command
    if scenario.kind != expected:
        raise ScenarioError(
            f"scenario kind {scenario.kind!r} does not run under the "
            f"{command!r} command (expected kind {expected!r})")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        scenario = load_scenario(args.scenario, tuple(overrides))
        if args.command == "validate":
            print(f"scenario: {scenario.name}")
            print(f"kind: {scenario.kind}")
            print(f"seed: {scenario.seed}")
            print(f"config_digest: {scenario.digest}")
            print("valid: true")
            return EXIT_OK
        _check_kind(args.command, scenario)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "compare":
            if args.variants:
                summary = run_compare(scenario, out_dir, tuple(args.variants))
            else:
                summary = run_compare(scenario, out_dir)
        else:
            summary = run_scenario(scenario, out_dir)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeFault, EstimationFault, PlanningError) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    print(format_summary(summary))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
