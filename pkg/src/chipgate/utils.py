"""
Utility helpers shared across chipgate modules.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from typing import Any, Optional

import numpy as np

from chipgate.logging_config import setup_logging


def sanitize_error_message(message: Optional[str], max_length: int = 200) -> str:
    """Collapse whitespace and truncate long error messages before display."""
    if not message:
        return ""
    sanitized = " ".join(str(message).split())
    if len(sanitized) > max_length:
        sanitized = sanitized[: max_length - 3] + "..."
    return sanitized


def configure_logging(default_level: int = logging.INFO) -> None:
    """Wrapper around logging_config.setup_logging used by the CLI entry point."""
    setup_logging(default_level)


def env_flag(name: str, default: bool) -> bool:
    """Interpret an on/off environment variable."""
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() not in ("0", "false", "no", "off", "")


def to_builtin(value: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into JSON-friendly builtins."""
    if isinstance(value, dict):
        return {str(key): to_builtin(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.generic):
        return to_builtin(value.item())
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    return value


def canonical_json(payload: Any) -> str:
    """Deterministic JSON text: sorted keys, fixed separators."""
    return json.dumps(to_builtin(payload), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(payload: Any) -> str:
    """SHA-256 of the canonical JSON form of a configuration payload."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
