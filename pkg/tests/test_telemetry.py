"""Tests for stage timing telemetry."""

import json

import pytest

from chipgate.telemetry import get_telemetry_path, record_stage_event, stage_timer, telemetry_enabled


def _events(path):
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


@pytest.fixture
def telemetry_file(tmp_path, monkeypatch):
    path = tmp_path / "telemetry.jsonl"
    monkeypatch.setenv("CHIPGATE_TELEMETRY_FILE", str(path))
    monkeypatch.delenv("CHIPGATE_TELEMETRY_ENABLED", raising=False)
    return path


def test_telemetry_path_override(telemetry_file):
    assert get_telemetry_path() == telemetry_file


def test_telemetry_path_defaults_to_history_dir(tmp_path, monkeypatch):
    monkeypatch.delenv("CHIPGATE_TELEMETRY_FILE", raising=False)
    monkeypatch.setenv("CHIPGATE_HISTORY_DIR", str(tmp_path))
    assert get_telemetry_path() == tmp_path / "telemetry.jsonl"


def test_record_stage_event(telemetry_file):
    record_stage_event(stage="fields", duration_sec=1.23456789, success=True, config_hash="abc", jobs=2)
    (event,) = _events(telemetry_file)
    assert event["stage"] == "fields"
    assert event["duration_sec"] == pytest.approx(1.234568)
    assert event["success"] is True
    assert event["jobs"] == 2
    assert event["sanitized_error"] is None


def test_stage_timer_records_failures_and_reraises(telemetry_file):
    with pytest.raises(RuntimeError):
        with stage_timer("optimize", config_hash="h"):
            raise RuntimeError("solver\n  diverged")
    (event,) = _events(telemetry_file)
    assert event["success"] is False
    assert event["sanitized_error"] == "solver diverged"


def test_stage_timer_success(telemetry_file):
    with stage_timer("report"):
        pass
    (event,) = _events(telemetry_file)
    assert event["success"] is True
    assert event["duration_sec"] >= 0


@pytest.mark.parametrize("value", ["0", "false", "off", "no"])
def test_telemetry_can_be_disabled(telemetry_file, monkeypatch, value):
    monkeypatch.setenv("CHIPGATE_TELEMETRY_ENABLED", value)
    assert not telemetry_enabled()
    record_stage_event(stage="fields", duration_sec=0.1, success=True)
    assert _events(telemetry_file) == []


def test_unwritable_telemetry_path_is_ignored(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("")
    monkeypatch.setenv("CHIPGATE_TELEMETRY_FILE", str(blocker / "telemetry.jsonl"))
    record_stage_event(stage="fields", duration_sec=0.1, success=True)
