"""Tests for the structured log formatters and environment-driven setup."""

import json
import logging

import pytest

from chipgate.logging_config import JsonFormatter, StructuredFormatter, setup_logging


def _record(**extra):
    record = logging.LogRecord("chipgate.dynamics", logging.INFO, __file__, 10, "Branch finished", None, None)
    for key, value in extra.items():
        setattr(record, key, value)
    return record


def test_json_formatter_includes_extra_fields():
    payload = json.loads(JsonFormatter().format(_record(branch="11", norm_drift=1e-12)))
    assert payload["message"] == "Branch finished"
    assert payload["level"] == "INFO"
    assert payload["name"] == "chipgate.dynamics"
    assert payload["branch"] == "11"
    assert payload["norm_drift"] == 1e-12


def test_structured_formatter_appends_key_values():
    text = StructuredFormatter("%(levelname)s %(message)s").format(_record(stage="fields"))
    assert text == "INFO Branch finished | stage=fields"
    plain = StructuredFormatter("%(message)s").format(_record())
    assert plain == "Branch finished"


def test_structured_formatter_shortens_floats():
    text = StructuredFormatter("%(message)s").format(_record(objective=0.123456789, iteration=3))
    assert text == "Branch finished | objective=0.123457 iteration=3"


@pytest.fixture
def root_logger():
    root = logging.getLogger()
    saved_level, saved_handlers = root.level, list(root.handlers)
    saved_formatters = [handler.formatter for handler in saved_handlers]
    saved_levels = [handler.level for handler in saved_handlers]
    yield root
    root.setLevel(saved_level)
    for handler, formatter, level in zip(saved_handlers, saved_formatters, saved_levels):
        handler.setFormatter(formatter)
        handler.setLevel(level)
    for handler in list(root.handlers):
        if handler not in saved_handlers:
            root.removeHandler(handler)


def test_debug_flag_lowers_level(root_logger, monkeypatch):
    monkeypatch.setenv("CHIPGATE_DEBUG", "1")
    monkeypatch.delenv("CHIPGATE_LOG_LEVEL", raising=False)
    setup_logging()
    assert root_logger.level == logging.DEBUG


def test_log_level_override(root_logger, monkeypatch):
    monkeypatch.delenv("CHIPGATE_DEBUG", raising=False)
    monkeypatch.setenv("CHIPGATE_LOG_LEVEL", "error")
    setup_logging()
    assert root_logger.level == logging.ERROR


def test_json_format_is_installed(root_logger, monkeypatch):
    monkeypatch.delenv("CHIPGATE_DEBUG", raising=False)
    monkeypatch.delenv("CHIPGATE_LOG_LEVEL", raising=False)
    monkeypatch.setenv("CHIPGATE_LOG_FORMAT", "json")
    setup_logging()
    assert root_logger.handlers
    assert all(isinstance(handler.formatter, JsonFormatter) for handler in root_logger.handlers)
