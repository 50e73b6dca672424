"""
Central logging configuration for chipgate.

Provides structured logging setup with support for JSON formatting and
environment-driven configuration.
"""

from __future__ import annotations

import json
import logging
import os
from logging import Handler
from typing import Optional

from chipgate.constants import (
    CHIPGATE_DEBUG_ENV,
    CHIPGATE_LOG_FILE_ENV,
    CHIPGATE_LOG_FORMAT_ENV,
    CHIPGATE_LOG_LEVEL_ENV,
)

DEFAULT_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"

_RESERVED_ATTRS = frozenset({
    "name", "msg", "args", "created", "filename", "funcName",
    "levelname", "levelno", "lineno", "module", "msecs",
    "message", "pathname", "process", "processName", "relativeCreated",
    "thread", "threadName", "exc_info", "exc_text", "stack_info",
    "taskName", "getMessage", "asctime",
})


def _extra_fields(record: logging.LogRecord) -> dict:
    """Fields attached via logger.info(..., extra={...})."""
    return {key: value for key, value in record.__dict__.items() if key not in _RESERVED_ATTRS}


class JsonFormatter(logging.Formatter):
    """Simple JSON formatter for structured logs."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "time": self.formatTime(record, self.datefmt),
            "level": record.levelname,
            "name": record.name,
            "message": record.getMessage(),
        }
        payload.update(_extra_fields(record))

        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        if record.stack_info:
            payload["stack"] = record.stack_info
        return json.dumps(payload, ensure_ascii=False, default=str)


def _short(value: object) -> str:
    # objective values, norms and residuals
    return f"{value:.6g}" if isinstance(value, float) else str(value)


class StructuredFormatter(logging.Formatter):
    """Formatter that includes structured logging fields in standard format."""

    def format(self, record: logging.LogRecord) -> str:
        base_msg = super().format(record)
        extra_fields = [f"{key}={_short(value)}" for key, value in _extra_fields(record).items()]
        if extra_fields:
            return f"{base_msg} | {' '.join(extra_fields)}"
        return base_msg


def _is_debug() -> bool:
    return os.getenv(CHIPGATE_DEBUG_ENV, "").lower() in {"1", "true", "yes", "on"}


def setup_logging(default_level: int = logging.WARNING) -> None:
    """
    Configure root logging based on environment flags.

    By default only WARNING and above are kept, and nothing reaches the console
    unless CHIPGATE_DEBUG is enabled or a log file is given.

    Environment variables:
      - CHIPGATE_DEBUG: enable DEBUG level logging to console
      - CHIPGATE_LOG_LEVEL: override log level (INFO, WARNING, etc.)
      - CHIPGATE_LOG_FORMAT: "json" for JSON, otherwise format string
      - CHIPGATE_LOG_FILE: path to a log file (optional)
    """
    is_debug = _is_debug()
    level = logging.DEBUG if is_debug else default_level

    env_level = os.getenv(CHIPGATE_LOG_LEVEL_ENV)
    if env_level:
        level = getattr(logging, env_level.upper(), level)

    raw_format = os.getenv(CHIPGATE_LOG_FORMAT_ENV, DEFAULT_FORMAT)
    use_json = raw_format.lower() == "json"
    log_file = os.getenv(CHIPGATE_LOG_FILE_ENV)

    root = logging.getLogger()
    if not root.handlers:
        handlers: Optional[list[Handler]]
        if log_file:
            handlers = [logging.FileHandler(log_file)]
        elif is_debug:
            handlers = [logging.StreamHandler()]
        else:
            handlers = [logging.NullHandler()]
        logging.basicConfig(level=level, handlers=handlers)
    else:
        root.setLevel(level)

    for handler in root.handlers:
        handler.setLevel(level)
        if use_json:
            handler.setFormatter(JsonFormatter())
        else:
            handler.setFormatter(StructuredFormatter(raw_format))
