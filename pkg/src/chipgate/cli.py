from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from chipgate.pipeline import STAGES

STAGE_COMMANDS = STAGES[:-1]  # "report" collects finished runs instead


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", type=str, help="Path to a JSON run configuration")
    source.add_argument(
        "--quickstart",
        type=int,
        choices=[2, 3],
        help="Use a shipped model-potential configuration for N oscillations",
    )
    parser.add_argument("--out", type=str, help="Output directory (overrides config and CHIPGATE_OUTPUT_DIR)")
    parser.add_argument("--seed", type=int, help="Seed for noise realisations (overrides config)")
    parser.add_argument("--jobs", type=int, help="Worker threads for independent branches (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chipgate",
        description="chipgate - microwave-potential collisional phase gate simulation and optimal control",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  chipgate all --quickstart 2 --out runs/n2           # Full pipeline on the model potential, N=2
  chipgate all --config run.json --stage simulate     # Re-run one stage on existing artifacts
  chipgate potential --config run.json                # Potentials only (plus fields for chip sources)
  chipgate validate --config run.json                 # Schema check, prints the config hash
  chipgate report runs/n2 runs/n3 --with-reference    # Table of gate performance per N
""",
    )

    general_group = parser.add_argument_group("General")
    general_group.add_argument("--version", action="store_true", help="Show version information and exit")
    general_group.add_argument("-v", "--verbose", action="store_true", help="Enable verbose debug output")

    subparsers = parser.add_subparsers(
        dest="command",
        title="commands",
        description="Pipeline stages and utilities",
        metavar="COMMAND",
        help="Use 'chipgate COMMAND --help' for more info",
    )
    subparsers.required = False
    parser.set_defaults(command=None)

    helps = {
        "fields": "Locate the trap and solve the CPW fields (chip sources)",
        "potential": "Build and save the state-dependent potentials",
        "optimize": "Two-stage optimisation of lambda(t) and omega_perp(t)",
        "simulate": "Propagate the four basis branches with the optimised controls",
        "fidelity": "Process fidelity, F(T) and noise robustness",
        "errors": "Error budget estimates",
    }
    stage_parsers = []
    for name in STAGE_COMMANDS:
        sub = subparsers.add_parser(name, help=helps[name], description=helps[name])
        _add_run_arguments(sub)
        if name == "simulate":
            sub.add_argument("--snapshots", action="store_true", help="Write binary state snapshots")
        stage_parsers.append(sub)

    all_parser = subparsers.add_parser("all", help="Run every stage", description="Run the full pipeline.")
    _add_run_arguments(all_parser)
    all_parser.add_argument("--stage", choices=list(STAGES), help="Run only this stage")
    all_parser.add_argument("--snapshots", action="store_true", help="Write binary state snapshots")

    validate_parser = subparsers.add_parser(
        "validate",
        help="Validate a run configuration",
        description="Validate a run configuration and print its hash.",
    )
    _add_run_arguments(validate_parser)

    report_parser = subparsers.add_parser(
        "report",
        help="Collect gate reports into one table",
        description="Collect report.json files into a CSV table (one row per run).",
    )
    report_parser.add_argument(
        "dirs",
        nargs="*",
        help="Run output directories (default: successful runs from the history)",
    )
    report_parser.add_argument("--out", type=str, default="table1.csv", help="CSV file to write (default: table1.csv)")
    report_parser.add_argument(
        "--with-reference",
        action="store_true",
        help="Append the tabulated reference rows",
    )

    for sub in [*stage_parsers, all_parser, validate_parser, report_parser]:
        sub.add_argument("-v", "--verbose", action="store_true", help="Enable verbose debug output")
        sub.add_argument("--version", action="store_true", help="Show version information and exit")

    return parser


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    argv_list = sys.argv[1:] if argv is None else list(argv)
    return build_parser().parse_args(argv_list)
