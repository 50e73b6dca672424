#!/usr/bin/env python3
"""
chipgate - microwave-potential collisional phase gate simulation and optimal control.
"""

from __future__ import annotations

import logging
import os
import sys

from rich.console import Console

from chipgate.cli import parse_arguments
from chipgate.commands import report_command, run_stage_command, validate_command
from chipgate.constants import CHIPGATE_DEBUG_ENV, VERSION
from chipgate.exceptions import ChipgateError, ConfigError, StageError
from chipgate.utils import configure_logging, sanitize_error_message

console = Console()
logger = logging.getLogger(__name__)

CONFIG_EXIT_CODE = 2


def _is_config_error(exc: Exception) -> bool:
    if isinstance(exc, StageError):
        return isinstance(exc.error, ConfigError)
    return isinstance(exc, ConfigError)


def main() -> None:
    """Main entry point for chipgate."""
    configure_logging()

    args = parse_arguments()

    if args.version:
        console.print(f"chipgate v{VERSION}")
        sys.exit(0)

    if args.verbose:
        os.environ[CHIPGATE_DEBUG_ENV] = "1"
        configure_logging(logging.DEBUG)

    command = getattr(args, "command", None)
    if command is None:
        console.print("[red]✗[/red] No command given")
        console.print("[dim]Run 'chipgate --help' to see the pipeline stages[/dim]")
        sys.exit(CONFIG_EXIT_CODE)

    try:
        if command == "validate":
            exit_code = validate_command(args, console)
        elif command == "report":
            exit_code = report_command(args, console)
        else:
            exit_code = run_stage_command(args, console)
    except StageError as exc:
        console.print(f"[red]✗[/red] {exc.stage}: {sanitize_error_message(str(exc.error))}")
        logger.debug("Stage failed", exc_info=True)
        sys.exit(CONFIG_EXIT_CODE if _is_config_error(exc) else 1)
    except ConfigError as exc:
        console.print(f"[red]✗[/red] config: {sanitize_error_message(str(exc))}")
        sys.exit(CONFIG_EXIT_CODE)
    except ChipgateError as exc:
        console.print(f"[red]✗[/red] {sanitize_error_message(str(exc))}")
        sys.exit(1)
    except KeyboardInterrupt:
        console.print("\n[yellow]Cancelled[/yellow]")
        sys.exit(130)
    except Exception as exc:  # pragma: no cover - unexpected failures
        logger.exception("Unhandled error")
        console.print(f"[red]✗[/red] Unexpected error: {sanitize_error_message(str(exc))}")
        console.print("[dim]Re-run with --verbose for the full traceback[/dim]")
        sys.exit(1)

    sys.exit(exit_code)


if __name__ == "__main__":
    main()
