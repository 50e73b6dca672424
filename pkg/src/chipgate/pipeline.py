"""
End-to-end gate pipeline: fields -> potential -> optimize -> simulate -> fidelity -> errors -> report.

Each stage reads what it needs from the context, or from the artifacts of an
earlier run in the same output directory, or computes it by running the
preceding stage. Numbers in the artifacts all come from module operations.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, List, Optional, Sequence

import numpy as np

from chipgate.artifacts import ArtifactStore, RunHistory, RunRecord, read_csv
from chipgate.chipfields import (
    FIELD_MAP_HEADER,
    FieldWindow,
    current_density_check,
    export_field_maps,
    load_layout,
    locate_trap,
    reference_layout,
    solve_cpw,
)
from chipgate.config import RunConfig, config_hash
from chipgate.constants import REFERENCE_GATE_FIDELITY_N3, REFERENCE_TABLE, VERSION
from chipgate.control import (
    ControlProblem,
    SpectralFilter,
    TanhParameterization,
    calibrate_transverse_frequency,
    inject_control_noise,
    parametric_excitation_probability,
    stage1_optimize,
    stage2_optimize,
)
from chipgate.dynamics import (
    ControlWaveforms,
    InteractionSpec,
    PropagationSettings,
    a1d_energy_ratio,
    checkpoint_indices,
    kinetic_energy_estimate,
    overlaps_and_phases,
    phase_steps,
    simulate_gate,
)
from chipgate.error_budget import assemble_error_budget
from chipgate.exceptions import ChipgateError, DiagnosticError, StageError
from chipgate.fidelity import (
    GateReport,
    GateSetup,
    TemperaturePoint,
    build_gate_report,
    fidelity_vs_temperature,
    process_fidelity,
    surface_adjusted_fidelity,
)
from chipgate.potentials import (
    MicrowaveDrive,
    PotentialSet,
    assemble_potential_set,
    drive_amplitudes,
    load_potential_set,
    model_potential_set,
    potential_summary,
)
from chipgate.telemetry import stage_timer
from chipgate.units import (
    ANGULAR_UNIT,
    DEFAULT_CONSTANTS,
    LAMBDA_UNIT,
    MICRON,
    NANOMETER,
    PhysicalConstants,
    TimeGrid,
    Waveform,
    linear_ramp_trial,
)

logger = logging.getLogger(__name__)

STAGES = ("fields", "potential", "optimize", "simulate", "fidelity", "errors", "report")
TABLE1_HEADER = ("N", "tau_g_ms", "O_0", "O_1", "F_00", "F_01", "F_11", "phi_g_over_pi", "F", "source")
WAVEFORM_HEADER = ("t", "lambda_trial", "lambda", "delta_lambda", "omega_perp", "p_perp")
FIELD_MAP_STRIDE = 4


@dataclass
class PipelineContext:
    config: RunConfig
    store: ArtifactStore
    config_hash: str
    constants: PhysicalConstants = DEFAULT_CONSTANTS
    layout: Any = None
    trap: Any = None
    cpw: Any = None
    potentials: Optional[PotentialSet] = None
    optimization: dict = field(default_factory=dict)
    controls: Optional[ControlWaveforms] = None
    single_overlaps: dict = field(default_factory=dict)
    trajectory: Any = None
    diagnostics: dict = field(default_factory=dict)
    process: Any = None
    temperature_curve: List[TemperaturePoint] = field(default_factory=list)
    budget: Any = None
    report: Optional[GateReport] = None
    completed: List[str] = field(default_factory=list)

    @property
    def interaction(self) -> InteractionSpec:
        ic = self.config.interaction
        return InteractionSpec(
            a_00=ic.a_00_nm * NANOMETER,
            a_01=ic.a_01_nm * NANOMETER,
            a_11=ic.a_11_nm * NANOMETER,
            enabled=ic.enabled,
            symmetric_omega=ic.symmetric_omega,
            regularization=ic.regularization,
        )

    @property
    def settings(self) -> PropagationSettings:
        return PropagationSettings()

    @property
    def gate_phase(self) -> float:
        return self.config.fidelity.gate_phase_over_pi * math.pi

    @property
    def time_grid(self) -> TimeGrid:
        return self.config.time.build()


@dataclass
class PipelineResult:
    context: PipelineContext
    artifacts: list

    @property
    def report(self) -> Optional[GateReport]:
        return self.context.report


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def run_fields(ctx: PipelineContext) -> None:
    pc = ctx.config.potential
    if pc.source != "chip":
        logger.info("Field stage skipped for this potential source", extra={"stage": "fields", "source": pc.source})
        return
    layout = load_layout(pc.geometry_file) if pc.geometry_file else reference_layout()
    trap = locate_trap(layout)
    cpw = solve_cpw(layout.cpw, FieldWindow(margin=pc.cpw_margin_um * MICRON, cell=pc.cpw_cell_nm * NANOMETER),
                    method=pc.cpw_method)
    drive = ctx.config.drive
    v0, i0 = drive_amplitudes(1.0, drive.v0_peak_v, abs(cpw.Z_c) if drive.use_impedance else None, drive.i0_peak)
    densities = current_density_check(layout, i0)

    ctx.layout, ctx.trap, ctx.cpw = layout, trap, cpw
    ctx.store.write_json("fields.json", {
        "trap": trap.to_dict(),
        "cpw": cpw.summary(),
        "drive": {"V0": v0, "I0": i0},
        "current_density": [asdict(entry) for entry in densities],
    })
    ctx.store.write_csv("field_map.csv", FIELD_MAP_HEADER, export_field_maps(cpw, v0, i0, stride=FIELD_MAP_STRIDE))


def run_potential(ctx: PipelineContext) -> None:
    pc = ctx.config.potential
    grid = ctx.config.grid.build()
    if pc.source == "model":
        potentials = model_potential_set(grid, pc.omega_x, pc.d_x, pc.omega_0, pc.omega_1, pc.omega_perp,
                                         pc.barrier_width, constants=ctx.constants)
    elif pc.source == "chip":
        if ctx.cpw is None:
            run_fields(ctx)
        drive = ctx.config.drive
        potentials = assemble_potential_set(
            ctx.layout, ctx.cpw, ctx.trap, grid,
            MicrowaveDrive(drive.delta0, drive.v0_peak_v, drive.i0_peak, drive.use_impedance),
            constants=ctx.constants,
        )
    else:
        potentials = load_potential_set(pc.potential_dir)
    potentials.check_invariants()
    ctx.potentials = potentials
    ctx.store.write_csv("potential.csv", PotentialSet.csv_header, potentials.csv_rows())
    ctx.store.write_json("potential.json", potential_summary(potentials))


def _ensure_potentials(ctx: PipelineContext) -> PotentialSet:
    if ctx.potentials is None:
        if ctx.store.path("potential.json").is_file() and ctx.store.path("potential.csv").is_file():
            ctx.potentials = load_potential_set(ctx.store.output_dir)
            logger.info("Reusing potential set", extra={"stage": "potential", "dir": str(ctx.store.output_dir)})
        else:
            run_potential(ctx)
    return ctx.potentials


def run_optimize(ctx: PipelineContext) -> None:
    cc = ctx.config.control
    potentials = _ensure_potentials(ctx)
    time_grid = ctx.time_grid
    trial = linear_ramp_trial(ctx.config.time.period, ctx.config.time.n_oscillations, time_grid)

    problem1 = ControlProblem(stage=1, lambda_a=cc.lambda_a, first_update=cc.first_update,
                              max_iter=cc.stage1_iterations, conv_tol=cc.conv_tol,
                              max_retries=cc.max_retries, rise_fraction=cc.rise_fraction)
    stage1 = stage1_optimize(problem1, potentials, trial, constants=ctx.constants)
    controls = ControlWaveforms(stage1.lam)
    summary = {"stage1": stage1.to_dict(), "calibration": None, "stage2": None}

    omega_0 = float(np.mean(potentials.omega_perp))
    if cc.calibrate:
        calibration = calibrate_transverse_frequency(
            potentials, controls, ctx.interaction, target=ctx.gate_phase, omega_init=omega_0,
            tol=cc.calibration_tol, settings=ctx.settings, jobs=ctx.config.jobs, constants=ctx.constants,
        )
        omega_0 = calibration.omega_perp
        summary["calibration"] = calibration.to_dict()
    controls = controls.with_omega_perp(Waveform.constant(time_grid, omega_0, ANGULAR_UNIT))

    if cc.run_stage2 and cc.stage2_iterations > 0:
        problem2 = ControlProblem(stage=2, lambda_a=None, first_update=cc.first_update,
                                  max_iter=cc.stage2_iterations, conv_tol=cc.conv_tol,
                                  max_retries=cc.max_retries, rise_fraction=cc.rise_fraction)
        stage2 = stage2_optimize(
            problem2, potentials, controls,
            TanhParameterization(omega_0, cc.tanh_amplitude),
            SpectralFilter.default(omega_0, cc.cutoff_ratio),
            ctx.interaction, settings=ctx.settings, jobs=ctx.config.jobs, constants=ctx.constants,
        )
        controls = controls.with_omega_perp(stage2.omega_perp)
        summary["stage2"] = stage2.to_dict()

    excitation = parametric_excitation_probability(controls.omega_perp)
    summary["excitation_max"] = float(np.max(excitation))
    ctx.controls = controls
    ctx.single_overlaps = {f"O_{i}": value for i, value in stage1.overlaps.items()}
    ctx.optimization = summary
    rows = zip(time_grid.times, trial.values, controls.lam.values, controls.lam.values - trial.values,
               controls.omega_perp.values, excitation)
    ctx.store.write_csv("waveforms.csv", WAVEFORM_HEADER, rows)
    ctx.store.write_json("optimization.json", summary)


def load_waveforms(path) -> ControlWaveforms:
    """ControlWaveforms from a waveforms.csv artifact."""
    header, data = read_csv(path)
    columns = {name: data[:, index] for index, name in enumerate(header)}
    times = columns["t"]
    grid = TimeGrid(float(times[0]), float(times[-1]), times.size - 1)
    return ControlWaveforms(
        Waveform(grid, columns["lambda"], LAMBDA_UNIT),
        omega_perp=Waveform(grid, columns["omega_perp"], ANGULAR_UNIT),
    )


def _ensure_controls(ctx: PipelineContext) -> ControlWaveforms:
    if ctx.controls is None:
        waveforms = ctx.store.path("waveforms.csv")
        if waveforms.is_file():
            ctx.controls = load_waveforms(waveforms)
            summary_path = ctx.store.path("optimization.json")
            if summary_path.is_file():
                ctx.optimization = json.loads(summary_path.read_text(encoding="utf-8"))
                stage1 = ctx.optimization.get("stage1") or {}
                ctx.single_overlaps = {key: stage1[key] for key in ("O_0", "O_1") if key in stage1}
            logger.info("Reusing optimised controls", extra={"stage": "optimize", "path": str(waveforms)})
        else:
            run_optimize(ctx)
    return ctx.controls


def run_simulate(ctx: PipelineContext) -> None:
    potentials = _ensure_potentials(ctx)
    controls = _ensure_controls(ctx)
    time_grid = controls.time_grid
    checkpoints = checkpoint_indices(time_grid, ctx.config.time.period) if ctx.config.snapshots else ()
    trajectory = simulate_gate(potentials, controls, ctx.interaction, ctx.settings, checkpoints=checkpoints,
                               jobs=ctx.config.jobs, constants=ctx.constants)
    series = overlaps_and_phases(trajectory)
    ctx.trajectory = trajectory

    n_osc = ctx.config.time.n_oscillations
    gap = max(1, time_grid.n_steps // (4 * n_osc))
    steps = phase_steps(series.times, series.phi_g, min_gap=gap)
    diagnostics = {
        "phase_step_times": [float(series.times[i]) for i in steps],
        "phase_step_count": int(steps.size),
        "phi_01_over_phi_11": _phase_ratio(series.phases["01"][-1], series.phases["11"][-1]),
        "max_substeps": {label: int(np.max(branch.substeps)) for label, branch in trajectory.branches.items()},
        "e_kin": None,
        "a1d_ratio": None,
    }
    omega_perp = float(np.mean(controls.omega_perp.values)) if controls.omega_perp is not None \
        else float(np.mean(potentials.omega_perp))
    try:
        e_kin = kinetic_energy_estimate(trajectory, "11")
        diagnostics["e_kin"] = e_kin
        diagnostics["a1d_ratio"] = a1d_energy_ratio(e_kin, omega_perp, ctx.constants)
    except DiagnosticError as exc:
        logger.warning("Kinetic energy at collision unavailable: %s", exc, extra={"stage": "simulate"})
    diagnostics["omega_perp_mean"] = omega_perp
    ctx.diagnostics = diagnostics

    ctx.store.write_csv("trajectory.csv", series.csv_header, series.csv_rows())
    ctx.store.write_json("diagnostics.json", diagnostics)
    if ctx.config.snapshots:
        for label, branch in trajectory.branches.items():
            for index, amplitudes in sorted(branch.checkpoints.items()):
                ctx.store.write_snapshot(
                    f"snapshots/{label}_{index:07d}.bin", potentials.grid, amplitudes,
                    {"branch": label, "step": index, "t": float(time_grid.times[index])},
                )


def _phase_ratio(phi_01: float, phi_11: float) -> Optional[float]:
    return None if phi_11 == 0 else float(abs(phi_01) / abs(phi_11))


def _ensure_trajectory(ctx: PipelineContext):
    if ctx.trajectory is None:
        run_simulate(ctx)
    return ctx.trajectory


def noise_robustness(ctx: PipelineContext, amplitude: float, samples: int) -> dict:
    """Mean process fidelity over `samples` noisy realisations of the optimised controls."""
    potentials = _ensure_potentials(ctx)
    controls = _ensure_controls(ctx)
    seeds = np.random.SeedSequence(ctx.config.seed).spawn(samples)
    values = []
    for index, seed in enumerate(seeds):
        noisy = inject_control_noise(controls, amplitude, int(seed.generate_state(1)[0]))
        trajectory = simulate_gate(potentials, noisy, ctx.interaction, ctx.settings,
                                   jobs=ctx.config.jobs, constants=ctx.constants)
        values.append(process_fidelity(trajectory, ctx.gate_phase).fidelity)
        logger.debug("Noise sample", extra={"sample": index, "F": values[-1]})
    return {"amplitude": amplitude, "samples": samples, "fidelities": values,
            "mean": float(np.mean(values)), "std": float(np.std(values))}


def run_fidelity(ctx: PipelineContext) -> None:
    trajectory = _ensure_trajectory(ctx)
    fc, tc, nc = ctx.config.fidelity, ctx.config.thermal, ctx.config.noise
    ctx.process = process_fidelity(trajectory, ctx.gate_phase, restarts=fc.restarts, seed=ctx.config.seed)
    payload = {"process": ctx.process.to_dict(), "noise": None}

    if tc.kT_over_hbar_omega:
        potentials = _ensure_potentials(ctx)
        scale = ctx.constants.hbar * potentials.omega_x / ctx.constants.k_B
        temperatures = [x * scale for x in tc.kT_over_hbar_omega]
        setup = GateSetup(potentials, _ensure_controls(ctx), ctx.interaction, ctx.settings, ctx.config.jobs)
        ctx.temperature_curve = fidelity_vs_temperature(setup, temperatures, tc.n_max, tc.floor,
                                                        gate_phase=ctx.gate_phase, constants=ctx.constants)
        ctx.store.write_csv("fidelity_vs_temperature.csv", TemperaturePoint.csv_header,
                            [point.csv_row() for point in ctx.temperature_curve])

    if nc.amplitude > 0 and nc.samples > 0:
        noise = noise_robustness(ctx, nc.amplitude, nc.samples)
        noise["degradation"] = ctx.process.fidelity - noise["mean"]
        payload["noise"] = noise
    ctx.store.write_json("fidelity.json", payload)


def run_errors(ctx: PipelineContext) -> None:
    ec = ctx.config.errors
    potentials = _ensure_potentials(ctx)
    if not ctx.diagnostics:
        _ensure_trajectory(ctx)
    noise = ctx.config.noise.amplitude or None
    ctx.budget = assemble_error_budget(
        ctx.time_grid.duration,
        potentials,
        e_kin=ctx.diagnostics.get("e_kin"),
        omega_perp=ctx.diagnostics.get("omega_perp_mean"),
        a1d_ratio=ctx.diagnostics.get("a1d_ratio"),
        surface_rate=ec.surface_rate_per_s,
        field_noise=ec.field_noise,
        b0=ec.trap_field,
        scattering_length=ctx.interaction.a_11,
        noise_amplitude=noise,
        constants=ctx.constants,
    )
    ctx.store.write_json("error_budget.json", ctx.budget.to_dict())


def run_report(ctx: PipelineContext) -> None:
    trajectory = _ensure_trajectory(ctx)
    if ctx.budget is None:
        run_errors(ctx)
    report = build_gate_report(trajectory, ctx.config.time.n_oscillations, ctx.gate_phase,
                               ctx.single_overlaps, source=ctx.config.potential.source)
    if ctx.process is not None:
        report.process = ctx.process
    report.temperature_curve = list(ctx.temperature_curve)
    report.error_budget = ctx.budget.to_dict()
    surface = ctx.budget.get("surface_loss").value
    report.surface_adjusted = surface_adjusted_fidelity(report.fidelity, surface)
    ctx.report = report

    header, rows = emit_table1([report])
    ctx.store.write_json("report.json", report.to_dict())
    ctx.store.write_csv("table1.csv", header, rows)


_STAGE_RUNNERS = {
    "fields": run_fields,
    "potential": run_potential,
    "optimize": run_optimize,
    "simulate": run_simulate,
    "fidelity": run_fidelity,
    "errors": run_errors,
    "report": run_report,
}


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def resolve_stages(stage: Optional[str]) -> tuple:
    if stage in (None, "all"):
        return STAGES
    if stage not in _STAGE_RUNNERS:
        raise ValueError(f"unknown stage '{stage}' (choose from {', '.join(STAGES)} or all)")
    return (stage,)


def _manifest(ctx: PipelineContext) -> dict:
    return {
        "version": VERSION,
        "config_hash": ctx.config_hash,
        "seed": ctx.config.seed,
        "stages": list(ctx.completed),
        "artifacts": sorted(ctx.store.written),
        "config": ctx.config.to_dict(),
    }


def run_pipeline(
    config: RunConfig,
    stages: Sequence[str] = STAGES,
    history: Optional[RunHistory] = None,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> PipelineResult:
    """Run the requested stages in order; artifacts stay `.partial` if any stage fails."""
    digest = config_hash(config)
    store = ArtifactStore(config.output_dir)
    ctx = PipelineContext(config=config, store=store, config_hash=digest, constants=constants)
    label = "all" if tuple(stages) == STAGES else ",".join(stages)
    logger.info("Pipeline started", extra={"stages": label, "config_hash": digest, "seed": config.seed})

    current = None
    try:
        for current in stages:
            with stage_timer(current, digest, config.jobs):
                _STAGE_RUNNERS[current](ctx)
            ctx.completed.append(current)
            logger.info("Stage finished", extra={"stage": current})
        store.write_json("manifest.json", _manifest(ctx))
    except ChipgateError as exc:
        _record(history, ctx, label, "failed", str(exc))
        raise StageError(current or "setup", exc) from exc
    except Exception as exc:
        _record(history, ctx, label, "failed", str(exc))
        raise

    artifacts = store.finalize()
    _record(history, ctx, label, "success")
    return PipelineResult(ctx, artifacts)


def _record(history: Optional[RunHistory], ctx: PipelineContext, stage: str, status: str,
            message: Optional[str] = None) -> None:
    if history is None:
        return
    history.record(RunRecord(
        config_hash=ctx.config_hash,
        seed=ctx.config.seed,
        stage=stage,
        output_dir=str(ctx.store.output_dir.resolve()),
        status=status,
        message=message,
    ))


# ---------------------------------------------------------------------------
# Table
# ---------------------------------------------------------------------------


def _table_row(report: dict) -> tuple:
    overlaps = report.get("single_particle_O") or {}
    fidelities = report["F_ij"]
    return (
        report["n_oscillations"],
        report["tau_g"] * 1e3,
        overlaps.get("O_0", ""),
        overlaps.get("O_1", ""),
        fidelities["00"],
        fidelities["01"],
        fidelities["11"],
        report["phi_g_over_pi"],
        report["fidelity"]["local_z"]["fidelity"],
        report.get("source", "model"),
    )


def reference_rows() -> list:
    """Tabulated reference performance, after the transverse stage where it was run."""
    rows = []
    for n, (first, second) in sorted(REFERENCE_TABLE.items()):
        tau, o_0, o_1, f_00, f_01, f_11, phi = first
        if second is not None:
            f_00, f_01, f_11, phi = second
        gate = REFERENCE_GATE_FIDELITY_N3 if n == 3 else ""
        rows.append((n, tau, o_0, o_1, f_00, f_01, f_11, phi, gate, "reference"))
    return rows


def emit_table1(reports: Iterable, with_reference: bool = False) -> tuple:
    """(header, rows) of the per-N performance table; reports are GateReport or their dicts."""
    rows = []
    for report in reports:
        payload = report.to_dict() if isinstance(report, GateReport) else report
        rows.append(_table_row(payload))
    rows.sort(key=lambda row: row[0])
    if with_reference:
        rows.extend(reference_rows())
    return TABLE1_HEADER, rows
