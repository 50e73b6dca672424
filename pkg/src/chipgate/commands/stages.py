"""Pipeline, validation and report commands."""

from __future__ import annotations

import json
import math
import logging
from argparse import Namespace
from pathlib import Path
from typing import List, Optional

from rich.console import Console
from rich.table import Table

from chipgate.artifacts import RunHistory, csv_text
from chipgate.config import RunConfig, config_hash, load_run_config, quickstart_path
from chipgate.exceptions import ConfigError
from chipgate.fidelity import GateReport
from chipgate.pipeline import STAGES, emit_table1, resolve_stages, run_pipeline

logger = logging.getLogger(__name__)


def load_config_from_args(args: Namespace) -> RunConfig:
    """RunConfig from --config/--quickstart with --out/--seed/--jobs/--snapshots applied."""
    path = args.config if getattr(args, "config", None) else quickstart_path(args.quickstart)
    overrides = {
        "output_dir": getattr(args, "out", None),
        "seed": getattr(args, "seed", None),
        "jobs": getattr(args, "jobs", None),
    }
    if getattr(args, "snapshots", False):
        overrides["snapshots"] = True
    return load_run_config(path, overrides)


def _stages_for(args: Namespace) -> tuple:
    if args.command == "all":
        return resolve_stages(getattr(args, "stage", None))
    return resolve_stages(args.command)


def _summary_table(report: GateReport) -> Table:
    table = Table(title=f"Gate report (N={report.n_oscillations})")
    table.add_column("quantity")
    table.add_column("value", justify="right")
    table.add_row("tau_g [ms]", f"{report.tau_g * 1e3:.3f}")
    for label, value in report.fidelities.items():
        table.add_row(f"F_{label}", f"{value:.4f}")
    table.add_row("phi_g / pi", f"{report.phi_g / math.pi:.4f}")
    table.add_row("F (local Z)", f"{report.fidelity:.4f}")
    if report.process.literal is not None:
        table.add_row("F (literal)", f"{report.process.literal.fidelity:.4f}")
    if report.surface_adjusted is not None:
        table.add_row("F x (1 - e_surface)", f"{report.surface_adjusted:.4f}")
    return table


def run_stage_command(args: Namespace, console: Console) -> int:
    config = load_config_from_args(args)
    stages = _stages_for(args)
    label = "all stages" if stages == STAGES else ", ".join(stages)
    with console.status(f"Running {label}..."):
        result = run_pipeline(config, stages, history=RunHistory())
    console.print(f"[green]✓[/green] {label} finished; artifacts in {config.output_dir}")
    if result.report is not None:
        console.print(_summary_table(result.report))
    return 0


def validate_command(args: Namespace, console: Console) -> int:
    config = load_config_from_args(args)
    console.print("[green]✓[/green] Configuration valid")
    console.print(f"[dim]config hash:[/dim] {config_hash(config)}")
    return 0


def _load_report(directory: Path) -> Optional[dict]:
    path = directory / "report.json"
    if not path.is_file():
        logger.warning("No report.json in %s", directory)
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def report_command(args: Namespace, console: Console) -> int:
    directories: List[Path] = [Path(d) for d in args.dirs] if args.dirs else RunHistory().report_dirs()
    reports = [report for report in (_load_report(d) for d in directories) if report is not None]
    header, rows = emit_table1(reports, with_reference=args.with_reference)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text(header, rows), encoding="utf-8")

    table = Table(title="Gate performance")
    for column in header:
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(*[f"{value:.4g}" if isinstance(value, float) else str(value) for value in row])
    console.print(table)
    console.print(f"[green]✓[/green] {len(rows)} row(s) written to {out}")
    return 0
