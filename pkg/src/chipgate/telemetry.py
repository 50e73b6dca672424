"""
Lightweight telemetry for chipgate.

Records pipeline stage timings to a local JSONL file. Enabled by default and
disabled by setting CHIPGATE_TELEMETRY_ENABLED to 0, false, no or off.
"""

from __future__ import annotations

import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterator, Optional

from chipgate.artifacts import get_default_history_dir
from chipgate.constants import CHIPGATE_TELEMETRY_ENABLED_ENV, CHIPGATE_TELEMETRY_FILE_ENV
from chipgate.utils import env_flag, sanitize_error_message

logger = logging.getLogger(__name__)


@dataclass
class StageEvent:
    """One timed pipeline stage."""

    timestamp: str
    stage: str
    duration_sec: float
    success: bool
    config_hash: Optional[str] = None
    jobs: Optional[int] = None
    schema_version: int = 1
    sanitized_error: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def telemetry_enabled() -> bool:
    return env_flag(CHIPGATE_TELEMETRY_ENABLED_ENV, True)


def get_telemetry_path() -> Path:
    """CHIPGATE_TELEMETRY_FILE, or telemetry.jsonl next to the run history."""
    override = os.getenv(CHIPGATE_TELEMETRY_FILE_ENV)
    if override:
        return Path(override).expanduser()
    return get_default_history_dir() / "telemetry.jsonl"


def _write_event(event: StageEvent) -> None:
    if not telemetry_enabled():
        return
    try:
        path = get_telemetry_path()
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as handle:
            json.dump(event.to_dict(), handle)
            handle.write("\n")
    except OSError as exc:
        # never let telemetry break a run
        logger.debug("Failed to write telemetry event: %s", sanitize_error_message(str(exc)))


def record_stage_event(
    *,
    stage: str,
    duration_sec: float,
    success: bool,
    config_hash: Optional[str] = None,
    jobs: Optional[int] = None,
    error: Optional[str] = None,
) -> None:
    _write_event(StageEvent(
        timestamp=datetime.now().isoformat(),
        stage=stage,
        duration_sec=round(duration_sec, 6),
        success=success,
        config_hash=config_hash,
        jobs=jobs,
        sanitized_error=sanitize_error_message(error) if error else None,
    ))


@contextmanager
def stage_timer(stage: str, config_hash: Optional[str] = None, jobs: Optional[int] = None) -> Iterator[None]:
    """Time the enclosed block and record it, successful or not."""
    start = time.perf_counter()
    try:
        yield
    except Exception as exc:
        record_stage_event(stage=stage, duration_sec=time.perf_counter() - start, success=False,
                           config_hash=config_hash, jobs=jobs, error=str(exc))
        raise
    record_stage_event(stage=stage, duration_sec=time.perf_counter() - start, success=True,
                       config_hash=config_hash, jobs=jobs)
