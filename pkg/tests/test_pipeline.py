"""Tests for the stage driver, artifact reuse and the performance table."""

import json

import numpy as np
import pytest

from chipgate import run_gate
from chipgate.artifacts import RunHistory, csv_text
from chipgate.config import parse_run_config
from chipgate.dynamics import overlaps_and_phases
from chipgate.exceptions import ConfigError, StageError
from chipgate.pipeline import (
    STAGES,
    TABLE1_HEADER,
    WAVEFORM_HEADER,
    emit_table1,
    load_waveforms,
    reference_rows,
    resolve_stages,
    run_pipeline,
)


def _config(tmp_path, **extra):
    payload = {
        "potential": {"source": "model"},
        "time": {"n_oscillations": 2},
        "grid": {"n_points": 64},
        "output_dir": str(tmp_path / "run"),
    }
    payload.update(extra)
    return parse_run_config(payload)


def _report(n, fidelity=0.99):
    return {
        "n_oscillations": n,
        "tau_g": 1e-3 * n,
        "single_particle_O": {"O_0": 0.99, "O_1": 0.98},
        "F_ij": {"00": 0.9, "01": 0.91, "10": 0.91, "11": 0.92},
        "phi_g_over_pi": 1.0,
        "fidelity": {"local_z": {"fidelity": fidelity}},
        "source": "model",
    }


def test_resolve_stages():
    assert resolve_stages(None) == STAGES
    assert resolve_stages("all") == STAGES
    assert resolve_stages("fidelity") == ("fidelity",)
    with pytest.raises(ValueError, match="unknown stage"):
        resolve_stages("plot")


def test_emit_table1_empty_gives_header_only():
    header, rows = emit_table1([])
    assert header == TABLE1_HEADER
    assert rows == []
    assert csv_text(header, rows).strip() == ",".join(TABLE1_HEADER)


def test_emit_table1_sorts_by_oscillations():
    _, rows = emit_table1([_report(3), _report(2, 0.98)])
    assert [row[0] for row in rows] == [2, 3]
    assert rows[0][1] == pytest.approx(2.0)
    assert rows[0][8] == 0.98
    assert rows[0][-1] == "model"


def test_reference_rows_use_transverse_stage_values():
    rows = {row[0]: row for row in reference_rows()}
    assert sorted(rows) == [2, 3, 4, 5, 6]
    assert rows[2][4] == 0.993
    assert rows[3][8] == 0.997
    assert rows[4][8] == ""
    _, combined = emit_table1([_report(2)], with_reference=True)
    assert len(combined) == 6
    assert combined[-1][-1] == "reference"


def test_load_waveforms(tmp_path):
    times = np.linspace(0.0, 1e-3, 11)
    trial = np.linspace(0, 1, 11)
    lam = trial + 0.01 * np.sin(np.pi * times / 1e-3)
    rows = zip(times, trial, lam, lam - trial, np.full(11, 5e5), np.zeros(11))
    path = tmp_path / "waveforms.csv"
    path.write_text(csv_text(WAVEFORM_HEADER, rows), encoding="utf-8")
    controls = load_waveforms(path)
    assert controls.time_grid.n_steps == 10
    assert controls.time_grid.duration == pytest.approx(1e-3)
    assert np.allclose(controls.lam.values, lam)
    assert controls.lam.values[-1] == pytest.approx(1.0)
    assert np.allclose(controls.omega_perp.values, 5e5)


def test_waveform_columns_carry_trial_and_correction():
    assert WAVEFORM_HEADER[:5] == ("t", "lambda_trial", "lambda", "delta_lambda", "omega_perp")


def test_potential_stage_writes_final_artifacts(tmp_path):
    history = RunHistory(tmp_path / "ledger")
    result = run_pipeline(_config(tmp_path), ("potential",), history=history)
    out = tmp_path / "run"
    assert (out / "potential.csv").is_file()
    assert (out / "potential.json").is_file()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["stages"] == ["potential"]
    assert "potential.csv" in manifest["artifacts"]
    assert not list(out.glob("*.partial"))
    assert result.report is None
    (entry,) = history.entries()
    assert entry.status == "success" and entry.stage == "potential"


def test_fields_stage_is_skipped_for_model_source(tmp_path):
    run_pipeline(_config(tmp_path), ("fields",))
    assert not (tmp_path / "run" / "fields.json").exists()


def test_failed_stage_is_wrapped_and_recorded(tmp_path):
    history = RunHistory(tmp_path / "ledger")
    config = _config(tmp_path, potential={"source": "file", "potential_dir": str(tmp_path / "missing")})
    with pytest.raises(StageError) as excinfo:
        run_pipeline(config, ("potential",), history=history)
    assert excinfo.value.stage == "potential"
    assert isinstance(excinfo.value.error, ConfigError)
    (entry,) = history.entries()
    assert entry.status == "failed"
    assert "missing" in entry.message


def test_file_source_reuses_saved_potentials(tmp_path):
    run_pipeline(_config(tmp_path), ("potential",))
    reused = _config(
        tmp_path,
        potential={"source": "file", "potential_dir": str(tmp_path / "run")},
        output_dir=str(tmp_path / "second"),
    )
    result = run_pipeline(reused, ("potential",))
    assert result.context.potentials.provenance == "model"
    assert result.context.potentials.couplings == []


@pytest.mark.slow
def test_full_pipeline_on_coarse_grid(tmp_path):
    config = _config(
        tmp_path,
        control={"stage1_iterations": 2, "stage2_iterations": 1},
    )
    result = run_pipeline(config)
    out = tmp_path / "run"
    for name in ("waveforms.csv", "trajectory.csv", "fidelity.json", "error_budget.json", "report.json", "table1.csv"):
        assert (out / name).is_file(), name
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["fidelity"]["local_z"]["fidelity"] <= 1.0
    assert report["n_oscillations"] == 2
    assert result.report.surface_adjusted <= result.report.fidelity


def test_run_gate_accepts_a_mapping(tmp_path):
    payload = {"potential": {"source": "model"}, "time": {"n_oscillations": 2}, "grid": {"n_points": 64}}
    out = tmp_path / "api"
    assert run_gate(payload, stages=["potential"], output_dir=str(out)) == {}
    assert (out / "potential.csv").is_file()


def test_identical_configuration_reproduces_artifacts(tmp_path):
    control = {"stage1_iterations": 1, "calibrate": False, "run_stage2": False}
    first = run_pipeline(_config(tmp_path, control=control), ("potential", "optimize"))
    second = run_pipeline(
        _config(tmp_path, control=control, output_dir=str(tmp_path / "again")), ("potential", "optimize")
    )
    assert first.context.config_hash == second.context.config_hash
    for name in ("potential.csv", "potential.json", "waveforms.csv", "optimization.json"):
        assert (tmp_path / "run" / name).read_bytes() == (tmp_path / "again" / name).read_bytes(), name
    manifests = [json.loads((tmp_path / d / "manifest.json").read_text()) for d in ("run", "again")]
    assert manifests[0]["config_hash"] == manifests[1]["config_hash"] == first.context.config_hash


@pytest.mark.slow
def test_optimised_three_oscillation_gate(tmp_path):
    """Two-stage optimisation at N = 3: fidelities, gate phase, collision steps and F(T)."""
    temperatures = [0.0, 0.05, 0.1, 0.2, 0.5]
    config = _config(
        tmp_path,
        time={"n_oscillations": 3},
        grid={"n_points": 128},
        control={"stage1_iterations": 50, "stage2_iterations": 20},
        thermal={"kT_over_hbar_omega": temperatures, "n_max": 1},
        jobs=4,
    )
    ctx = run_pipeline(config, ("potential", "optimize", "simulate", "fidelity")).context

    final = overlaps_and_phases(ctx.trajectory).final()
    for label in ("00", "01", "10", "11"):
        assert final[f"F_{label}"] >= 0.97, label
    assert 0.95 <= final["phi_g"] / np.pi <= 1.05
    assert ctx.process.fidelity >= 0.96

    assert ctx.diagnostics["phase_step_count"] == 6
    assert ctx.diagnostics["phi_01_over_phi_11"] <= 1e-2

    curve = [point.fidelity for point in ctx.temperature_curve]
    assert [point.kT_over_hbar_omega for point in ctx.temperature_curve] == pytest.approx(temperatures)
    assert all(later <= earlier + 1e-9 for earlier, later in zip(curve, curve[1:]))
    assert curve[0] - curve[2] < 1e-2


@pytest.mark.slow
def test_control_noise_barely_degrades_the_two_oscillation_gate(tmp_path):
    config = _config(
        tmp_path,
        grid={"n_points": 128},
        control={"stage1_iterations": 50, "stage2_iterations": 20},
        noise={"amplitude": 1e-3, "samples": 8},
        jobs=4,
    )
    run_pipeline(config, ("potential", "optimize", "simulate", "fidelity"))
    noise = json.loads((tmp_path / "run" / "fidelity.json").read_text())["noise"]
    assert noise["samples"] == 8 and len(noise["fidelities"]) == 8
    assert noise["degradation"] <= 1e-3
