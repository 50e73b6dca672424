"""Shared fixtures: keep run history, telemetry and dotenv lookups inside the test sandbox."""

import pytest

from chipgate.units import make_grid


@pytest.fixture(autouse=True)
def isolated_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CHIPGATE_HISTORY_DIR", str(tmp_path / "history"))
    monkeypatch.setenv("CHIPGATE_TELEMETRY_FILE", str(tmp_path / "history" / "telemetry.jsonl"))
    monkeypatch.setenv("CHIPGATE_SKIP_AUTO_DOTENV", "1")
    monkeypatch.delenv("CHIPGATE_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("CHIPGATE_JOBS", raising=False)
    yield


@pytest.fixture
def small_grid():
    """Coarse +-2 um grid for fast propagations."""
    return make_grid(-2e-6, 2e-6, 64)
