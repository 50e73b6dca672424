"""
Subcommand handlers for the chipgate CLI.
"""

from .stages import load_config_from_args, report_command, run_stage_command, validate_command

__all__ = [
    "load_config_from_args",
    "report_command",
    "run_stage_command",
    "validate_command",
]
