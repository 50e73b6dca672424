"""Essential tests for CLI functionality."""

import json
import sys

import pytest

from chipgate.cli import STAGE_COMMANDS, build_parser, parse_arguments
from chipgate.main import main


def _write_config(tmp_path, **extra):
    payload = {
        "potential": {"source": "model"},
        "time": {"n_oscillations": 2},
        "grid": {"n_points": 64},
        "output_dir": str(tmp_path / "run"),
    }
    payload.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def _run_main(monkeypatch, *argv):
    monkeypatch.setattr(sys, "argv", ["chipgate", *argv])
    with pytest.raises(SystemExit) as excinfo:
        main()
    return excinfo.value.code


def test_every_stage_has_a_command():
    """All pipeline stages except report run through the same argument set."""
    assert STAGE_COMMANDS == ("fields", "potential", "optimize", "simulate", "fidelity", "errors")
    for name in STAGE_COMMANDS:
        args = parse_arguments([name, "--config", "run.json"])
        assert args.command == name
        assert args.config == "run.json"


def test_parse_all_with_single_stage():
    args = parse_arguments(["all", "--quickstart", "2", "--stage", "simulate", "--out", "runs/n2", "--seed", "5"])
    assert args.command == "all"
    assert args.quickstart == 2
    assert args.stage == "simulate"
    assert args.out == "runs/n2"
    assert args.seed == 5
    assert args.jobs is None


def test_simulate_accepts_snapshots():
    args = parse_arguments(["simulate", "--config", "run.json", "--snapshots"])
    assert args.snapshots is True


def test_config_source_is_required_and_exclusive():
    with pytest.raises(SystemExit):
        parse_arguments(["optimize"])
    with pytest.raises(SystemExit):
        parse_arguments(["optimize", "--config", "a.json", "--quickstart", "2"])
    with pytest.raises(SystemExit):
        parse_arguments(["optimize", "--quickstart", "4"])


def test_parse_report_command():
    parser = build_parser()
    args = parser.parse_args(["report", "runs/n2", "runs/n3", "--with-reference"])
    assert args.command == "report"
    assert args.dirs == ["runs/n2", "runs/n3"]
    assert args.with_reference
    assert args.out == "table1.csv"


def test_no_command():
    args = parse_arguments([])
    assert args.command is None


def test_main_version(monkeypatch, capsys):
    assert _run_main(monkeypatch, "--version") == 0
    assert "chipgate v" in capsys.readouterr().out


def test_main_without_command_exits_with_config_code(monkeypatch, capsys):
    assert _run_main(monkeypatch) == 2
    assert "No command given" in capsys.readouterr().out


def test_validate_quickstart(monkeypatch, capsys):
    assert _run_main(monkeypatch, "validate", "--quickstart", "3") == 0
    out = capsys.readouterr().out
    assert "Configuration valid" in out
    assert "config hash" in out


def test_validate_reports_bad_field(tmp_path, monkeypatch, capsys):
    path = _write_config(tmp_path, time={"n_oscillations": 0})
    assert _run_main(monkeypatch, "validate", "--config", str(path)) == 2
    assert "time.n_oscillations" in capsys.readouterr().out


def test_missing_config_file(tmp_path, monkeypatch, capsys):
    assert _run_main(monkeypatch, "validate", "--config", str(tmp_path / "nope.json")) == 2
    assert "config:" in capsys.readouterr().out


def test_potential_command_runs_and_records_history(tmp_path, monkeypatch, capsys):
    path = _write_config(tmp_path)
    out_dir = tmp_path / "elsewhere"
    assert _run_main(monkeypatch, "potential", "--config", str(path), "--out", str(out_dir)) == 0
    assert (out_dir / "potential.csv").is_file()
    assert "potential finished" in capsys.readouterr().out
    ledger = tmp_path / "history" / "runs.jsonl"
    (line,) = ledger.read_text().splitlines()
    assert json.loads(line)["status"] == "success"


def test_stage_with_bad_input_directory_exits_with_config_code(tmp_path, monkeypatch, capsys):
    path = _write_config(tmp_path, potential={"source": "file", "potential_dir": str(tmp_path / "missing")})
    assert _run_main(monkeypatch, "potential", "--config", str(path)) == 2
    assert "potential:" in capsys.readouterr().out


def _write_report(directory, n):
    directory.mkdir(parents=True)
    report = {
        "n_oscillations": n,
        "tau_g": 1e-3,
        "single_particle_O": {"O_0": 0.99, "O_1": 0.99},
        "F_ij": {"00": 0.99, "01": 0.99, "10": 0.99, "11": 0.98},
        "phi_g_over_pi": 1.0,
        "fidelity": {"local_z": {"fidelity": 0.97}},
        "source": "model",
    }
    (directory / "report.json").write_text(json.dumps(report), encoding="utf-8")


def test_report_command_writes_table(tmp_path, monkeypatch, capsys):
    _write_report(tmp_path / "n3", 3)
    _write_report(tmp_path / "n2", 2)
    (tmp_path / "empty").mkdir()
    table = tmp_path / "table.csv"
    code = _run_main(
        monkeypatch, "report", str(tmp_path / "n3"), str(tmp_path / "n2"), str(tmp_path / "empty"),
        "--out", str(table),
    )
    assert code == 0
    lines = table.read_text().splitlines()
    assert lines[0].startswith("N,tau_g_ms")
    assert [line.split(",")[0] for line in lines[1:]] == ["2", "3"]
    assert "2 row(s)" in capsys.readouterr().out


def test_report_command_rejects_corrupt_report(tmp_path, monkeypatch):
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "report.json").write_text("{", encoding="utf-8")
    assert _run_main(monkeypatch, "report", str(broken), "--out", str(tmp_path / "t.csv")) == 2


def test_report_without_history_writes_header_only(tmp_path, monkeypatch, capsys):
    table = tmp_path / "table.csv"
    assert _run_main(monkeypatch, "report", "--out", str(table)) == 0
    assert len(table.read_text().splitlines()) == 1
    assert "0 row(s)" in capsys.readouterr().out
