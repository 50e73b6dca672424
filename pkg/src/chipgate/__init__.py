"""chipgate - microwave-potential collisional phase gate simulation and optimal control."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

__version__ = "0.4.0"

__all__ = ["__version__", "run_gate"]


def run_gate(
    config: Union[str, Path, Dict[str, Any]],
    *,
    stages: Optional[Sequence[str]] = None,
    output_dir: Optional[str] = None,
    seed: Optional[int] = None,
) -> Dict[str, Any]:
    """
    Programmatic API: run the pipeline on a config file or mapping.
    Returns the gate report as a dict (empty when the report stage did not run).
    """
    from chipgate.config import load_run_config, parse_run_config
    from chipgate.pipeline import STAGES, run_pipeline

    overrides = {"output_dir": output_dir, "seed": seed}
    if isinstance(config, dict):
        run_config = parse_run_config(config, overrides)
    else:
        run_config = load_run_config(config, overrides)

    result = run_pipeline(run_config, tuple(stages) if stages else STAGES)
    return result.report.to_dict() if result.report is not None else {}
