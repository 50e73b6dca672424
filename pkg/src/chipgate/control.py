"""
Two-stage optimal control of the gate.

Stage 1 shapes lambda(t) on the non-interacting single-atom problem so that
every atom returns to its initial motional state after N oscillations. Stage 2
keeps lambda(t) fixed and modulates the transverse frequency through
omega_perp(t) = omega_perp(0) [A tanh alpha(t) + 1] to lock the collisional
phase of |11>. Both stages run the same sequential (immediate-update) Krotov
sweep over piecewise-constant controls.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy import fft

from chipgate.dynamics import (
    ControlWaveforms,
    InteractionSpec,
    PropagationSettings,
    SplitOperator1D,
    StepPotential,
    TwoParticleState,
    TwoParticleStepper,
    branch_setup,
    overlaps_and_phases,
    prepare_well_states,
    simulate_gate,
)
from chipgate.exceptions import ControlError, FilterError, MonotonicityError
from chipgate.potentials import PotentialSet
from chipgate.units import (
    ANGULAR_UNIT,
    DEFAULT_CONSTANTS,
    LAMBDA_UNIT,
    PhysicalConstants,
    TimeGrid,
    Waveform,
)

logger = logging.getLogger(__name__)

DEFAULT_FIRST_UPDATE = 0.025
MONOTONIC_TOLERANCE = 1e-12
STORE_BUDGET_BYTES = 256 * 1024 * 1024


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlProblem:
    """Settings of one optimisation stage."""

    stage: int = 1
    lambda_a: Optional[float] = None
    first_update: float = DEFAULT_FIRST_UPDATE
    max_iter: int = 50
    conv_tol: float = 1e-6
    max_retries: int = 6
    rise_fraction: float = 0.05
    gradient_tol: float = 1e-12
    store_budget_bytes: int = STORE_BUDGET_BYTES

    def __post_init__(self) -> None:
        if self.stage not in (1, 2):
            raise ControlError(f"stage must be 1 or 2, got {self.stage}")
        if self.lambda_a is not None and self.lambda_a <= 0:
            raise ControlError("lambda_a must be positive")
        if self.max_iter < 0:
            raise ControlError("max_iter must be non-negative")
        if not 0.0 <= self.rise_fraction <= 0.5:
            raise ControlError("rise_fraction must lie in [0, 0.5]")

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "lambda_a": self.lambda_a,
            "first_update": self.first_update,
            "max_iter": self.max_iter,
            "conv_tol": self.conv_tol,
            "max_retries": self.max_retries,
            "rise_fraction": self.rise_fraction,
        }


@dataclass(frozen=True)
class TanhParameterization:
    """omega_perp(t) = omega_0 [A tanh alpha(t) + 1], bounded to omega_0 (1 +- A)."""

    omega_0: float
    amplitude: float = 0.2

    def __post_init__(self) -> None:
        if self.omega_0 <= 0:
            raise ControlError("omega_0 must be positive")
        if not 0.0 <= self.amplitude < 1.0:
            raise ControlError(f"tanh amplitude must lie in [0, 1), got {self.amplitude}")

    def omega(self, alpha):
        return self.omega_0 * (self.amplitude * np.tanh(alpha) + 1.0)

    def d_omega(self, alpha):
        return self.omega_0 * self.amplitude / np.cosh(alpha) ** 2

    @property
    def bounds(self) -> tuple:
        return self.omega_0 * (1.0 - self.amplitude), self.omega_0 * (1.0 + self.amplitude)

    def waveform(self, alpha: Waveform) -> Waveform:
        return Waveform(alpha.grid, self.omega(alpha.values), ANGULAR_UNIT)


@dataclass(frozen=True)
class SpectralFilter:
    """Low-pass cutoff for the transverse modulation, rad/s."""

    cutoff: float
    omega_perp_0: Optional[float] = None

    def __post_init__(self) -> None:
        if self.cutoff <= 0:
            raise FilterError("cutoff must be positive")
        if self.omega_perp_0 is not None and self.cutoff >= 2.0 * self.omega_perp_0:
            raise FilterError(
                f"cutoff {self.cutoff:.3e} rad/s reaches the parametric resonance 2 omega_perp(0)"
            )

    @classmethod
    def default(cls, omega_perp_0: float, ratio: float = 0.8) -> "SpectralFilter":
        return cls(ratio * omega_perp_0, omega_perp_0)

    def apply(self, waveform: Waveform) -> Waveform:
        return spectral_filter(waveform, self.cutoff)


def pulse_onto_intervals(waveform: Waveform) -> np.ndarray:
    return waveform.interval_values()


def intervals_onto_grid(grid: TimeGrid, intervals: np.ndarray, unit: str = LAMBDA_UNIT) -> Waveform:
    return Waveform.from_intervals(grid, intervals, unit)


def update_shape(time_grid: TimeGrid, rise_fraction: float = 0.05) -> np.ndarray:
    """sin^2 flattop on the interval midpoints; zero update at both ends."""
    t = time_grid.midpoints - time_grid.t_start
    if rise_fraction <= 0:
        return np.ones(time_grid.n_steps)
    rise = rise_fraction * time_grid.duration
    shape = np.ones(time_grid.n_steps)
    head = t < rise
    tail = t > time_grid.duration - rise
    shape[head] = np.sin(0.5 * np.pi * t[head] / rise) ** 2
    shape[tail] = np.sin(0.5 * np.pi * (time_grid.duration - t[tail]) / rise) ** 2
    return shape


# ---------------------------------------------------------------------------
# Krotov engine
# ---------------------------------------------------------------------------


class KrotovSystem(Protocol):
    """What the sweep needs from a controlled system.

    `gradient` returns dJ/du_k for step k, evaluated from the costates at the
    start of the step (old controls) and the states before the step (new
    controls). The costate boundary is chosen so that
    dJ/du_k = 2 dt/hbar sum_m Im <chi_m|dH/du|psi_m>.
    """

    n_steps: int
    state_nbytes: int

    def initial_states(self) -> list: ...
    def forward_step(self, states: list, k: int, controls: np.ndarray) -> list: ...
    def backward_step(self, costates: list, k: int, controls: np.ndarray) -> list: ...
    def gradient(self, costates: list, states: list, k: int, controls: np.ndarray) -> float: ...
    def objective(self, states: list) -> float: ...
    def costate_boundary(self, states: list) -> list: ...
    def accept(self) -> None: ...


@dataclass
class KrotovResult:
    controls: np.ndarray
    history: list
    lambda_a: Optional[float]
    iterations: int
    converged: bool
    message: str
    final_states: list = field(repr=False, default_factory=list)
    max_updates: list = field(default_factory=list)


def _forward(system: KrotovSystem, controls: np.ndarray) -> list:
    states = system.initial_states()
    for k in range(system.n_steps):
        states = system.forward_step(states, k, controls)
    return states


def _checkpoint_stride(system: KrotovSystem, budget: int) -> int:
    if (system.n_steps + 1) * system.state_nbytes <= budget:
        return 1
    return max(1, int(math.ceil(math.sqrt(system.n_steps))))


def _backward_checkpoints(system: KrotovSystem, boundary: list, controls: np.ndarray, stride: int) -> dict:
    n_steps = system.n_steps
    stored = {n_steps: boundary}
    costates = boundary
    for k in range(n_steps - 1, -1, -1):
        costates = system.backward_step(costates, k, controls)
        if k % stride == 0:
            stored[k] = costates
    return stored


def _segment(system: KrotovSystem, stored: dict, controls: np.ndarray, start: int, stride: int) -> list:
    """Costates at t_start .. t_end-1 of one checkpoint segment."""
    end = min(start + stride, system.n_steps)
    buffer = [None] * (end - start)
    buffer[0] = stored[start]
    if end - start > 1:
        costates = stored[end]
        for k in range(end - 1, start, -1):
            costates = system.backward_step(costates, k, controls)
            buffer[k - start] = costates
    return buffer


def _sweep(system, stored, controls, stride, shape, lambda_a, bounds, update: bool) -> tuple:
    """Forward sweep; with `update` the controls change step by step, otherwise only dJ/du is collected."""
    states = system.initial_states()
    new_controls = controls.copy()
    gradients = np.zeros(system.n_steps)
    lower, upper = bounds
    for start in range(0, system.n_steps, stride):
        segment = _segment(system, stored, controls, start, stride)
        for offset, costates in enumerate(segment):
            k = start + offset
            gradients[k] = system.gradient(costates, states, k, controls)
            if update:
                value = controls[k] + shape[k] * gradients[k] / lambda_a
                if lower is not None or upper is not None:
                    value = float(np.clip(value, lower, upper))
                new_controls[k] = value
            states = system.forward_step(states, k, new_controls)
    return new_controls, states, gradients


def krotov_optimize(
    system: KrotovSystem,
    controls: np.ndarray,
    problem: ControlProblem,
    shape: np.ndarray,
    bounds: tuple = (None, None),
    label: str = "stage1",
) -> KrotovResult:
    """Monotonic Krotov optimisation with immediate updates and checkpointed costates."""
    controls = np.array(controls, dtype=float)
    stride = _checkpoint_stride(system, problem.store_budget_bytes)
    states = _forward(system, controls)
    system.accept()
    objective = system.objective(states)
    history = [objective]
    lambda_a = problem.lambda_a
    max_updates: list = []
    logger.info(
        "Krotov start",
        extra={"stage": label, "iteration": 0, "objective": objective, "checkpoint_stride": stride},
    )

    converged, message, iteration = False, "iteration limit reached", 0
    for iteration in range(1, problem.max_iter + 1):
        stored = _backward_checkpoints(system, system.costate_boundary(states), controls, stride)
        if lambda_a is None:
            _, _, gradients = _sweep(system, stored, controls, stride, shape, 1.0, bounds, update=False)
            peak = float(np.max(np.abs(shape * gradients)))
            if peak <= problem.gradient_tol:
                converged, message = True, "stationary controls"
                iteration -= 1
                break
            lambda_a = peak / problem.first_update
            logger.debug("Step size set from first gradient", extra={"stage": label, "lambda_a": lambda_a})

        for attempt in range(problem.max_retries + 1):
            new_controls, new_states, _ = _sweep(system, stored, controls, stride, shape, lambda_a, bounds, update=True)
            new_objective = system.objective(new_states)
            if new_objective >= objective - MONOTONIC_TOLERANCE:
                break
            logger.warning(
                "Objective decreased, doubling lambda_a",
                extra={"stage": label, "iteration": iteration, "attempt": attempt,
                       "objective": new_objective, "previous": objective},
            )
            lambda_a *= 2.0
        else:
            raise MonotonicityError(
                f"{label}: objective fell from {objective:.12f} to {new_objective:.12f} "
                f"after {problem.max_retries} step-size retries"
            )

        system.accept()
        max_update = float(np.max(np.abs(new_controls - controls)))
        max_updates.append(max_update)
        gain = new_objective - objective
        controls, states, objective = new_controls, new_states, new_objective
        history.append(objective)
        logger.info(
            "Krotov iteration",
            extra={"stage": label, "iteration": iteration, "objective": objective,
                   "gain": gain, "lambda_a": lambda_a, "max_update": max_update},
        )
        if max_update == 0.0:
            converged, message = True, "stationary controls"
            break
        if gain < problem.conv_tol:
            converged, message = True, f"objective gain below {problem.conv_tol:g}"
            break

    if not converged and problem.max_iter > 0:
        logger.warning(
            "Krotov iteration limit reached, returning best controls so far",
            extra={"stage": label, "iterations": iteration, "objective": objective},
        )
    return KrotovResult(controls, history, lambda_a, iteration, converged, message, states, max_updates)


# ---------------------------------------------------------------------------
# Stage 1: lambda(t) on the non-interacting problem
# ---------------------------------------------------------------------------


class SingleAtomSystem:
    """Atoms in state i and well w; J = mean_m |<phi_m(0)|phi_m(T)>|^2."""

    def __init__(
        self,
        potentials: PotentialSet,
        objectives: Sequence[tuple],
        time_grid: TimeGrid,
        lam0_intervals: Optional[np.ndarray] = None,
        constants: PhysicalConstants = DEFAULT_CONSTANTS,
    ) -> None:
        self.potentials = potentials
        self.objectives = [(int(state), np.asarray(phi, dtype=complex)) for state, phi in objectives]
        self.time_grid = time_grid
        self.n_steps = time_grid.n_steps
        self.dx = potentials.grid.spacing
        self.stepper = SplitOperator1D(potentials.grid, constants)
        self.hbar = constants.hbar
        self.lam0 = lam0_intervals
        self.state_nbytes = sum(phi.nbytes for _, phi in self.objectives)
        self._derivative = {
            state: StepPotential(potentials, state, np.zeros(self.n_steps), lam0_intervals).derivative(0)
            for state, _ in self.objectives
        }

    def _potential(self, state: int, lam: float, k: int) -> np.ndarray:
        lam0 = None if self.lam0 is None else float(self.lam0[k])
        return self.potentials.potential(state, lam, lam0)

    def initial_states(self) -> list:
        return [phi.copy() for _, phi in self.objectives]

    def forward_step(self, states: list, k: int, controls: np.ndarray) -> list:
        dt = self.time_grid.dt
        return [self.stepper.step(psi, self._potential(state, controls[k], k), dt)
                for (state, _), psi in zip(self.objectives, states)]

    def backward_step(self, costates: list, k: int, controls: np.ndarray) -> list:
        dt = self.time_grid.dt
        return [self.stepper.step(chi, self._potential(state, controls[k], k), -dt)
                for (state, _), chi in zip(self.objectives, costates)]

    def gradient(self, costates: list, states: list, k: int, controls: np.ndarray) -> float:
        total = 0.0
        for (state, _), chi, psi in zip(self.objectives, costates, states):
            total += float(np.imag(np.vdot(chi, self._derivative[state] * psi)))
        return 2.0 * self.time_grid.dt / self.hbar * total * self.dx

    def overlaps(self, states: list) -> list:
        return [complex(np.vdot(target, psi) * self.dx) for (_, target), psi in zip(self.objectives, states)]

    def objective(self, states: list) -> float:
        return float(np.mean([abs(tau) ** 2 for tau in self.overlaps(states)]))

    def costate_boundary(self, states: list) -> list:
        m = len(self.objectives)
        return [tau * target / m for tau, (_, target) in zip(self.overlaps(states), self.objectives)]

    def accept(self) -> None:
        pass


@dataclass
class Stage1Result:
    lam: Waveform
    trial: Waveform
    history: list
    overlaps: dict
    lambda_a: Optional[float]
    iterations: int
    converged: bool
    message: str

    @property
    def max_delta_lambda(self) -> float:
        return float(np.max(np.abs(self.lam.values - self.trial.values)))

    def to_dict(self) -> dict:
        return {
            "stage": 1,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "lambda_a": self.lambda_a,
            "objective_history": list(self.history),
            "O_0": self.overlaps[0],
            "O_1": self.overlaps[1],
            "max_delta_lambda": self.max_delta_lambda,
        }


def stage1_optimize(
    problem: ControlProblem,
    potentials: PotentialSet,
    lam_trial: Waveform,
    lam0: Optional[Waveform] = None,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> Stage1Result:
    """Optimise lambda(t) for the revival of both qubit states in both wells (a_s = 0)."""
    if problem.stage != 1:
        raise ControlError("stage1_optimize needs a stage-1 problem")
    time_grid = lam_trial.grid
    wells = prepare_well_states(potentials, ControlWaveforms(lam_trial, lam0), 0, constants)
    objectives = [(i, wells.left[i][0]) for i in (0, 1)] + [(i, wells.right[i][0]) for i in (0, 1)]
    lam0_intervals = None if lam0 is None else lam0.interval_values()
    system = SingleAtomSystem(potentials, objectives, time_grid, lam0_intervals, constants)

    controls = pulse_onto_intervals(lam_trial)
    initial = system.objective(_forward(system, controls))
    if initial <= 0.5:
        raise ControlError(f"trial control starts at objective {initial:.4f}; needs > 0.5")

    result = krotov_optimize(
        system, controls, problem, update_shape(time_grid, problem.rise_fraction), bounds=(0.0, 1.0), label="stage1"
    )
    taus = system.overlaps(result.final_states)
    overlaps = {i: float(0.5 * (abs(taus[i]) + abs(taus[i + 2]))) for i in (0, 1)}
    lam = intervals_onto_grid(time_grid, result.controls, LAMBDA_UNIT).clamp(0.0, 1.0)
    logger.info("Stage 1 finished", extra={"stage": "stage1", "O_0": overlaps[0], "O_1": overlaps[1],
                                           "iterations": result.iterations})
    return Stage1Result(lam, lam_trial, result.history, overlaps, result.lambda_a,
                        result.iterations, result.converged, result.message)


# ---------------------------------------------------------------------------
# Calibration of the constant transverse frequency
# ---------------------------------------------------------------------------


@dataclass
class CalibrationResult:
    omega_perp: float
    phi_g: float
    iterations: int
    history: list

    def to_dict(self) -> dict:
        return {"omega_perp": self.omega_perp, "phi_g": self.phi_g,
                "iterations": self.iterations, "history": [list(item) for item in self.history]}


def calibrate_transverse_frequency(
    potentials: PotentialSet,
    controls: ControlWaveforms,
    interaction: InteractionSpec = InteractionSpec(),
    target: float = math.pi,
    omega_init: Optional[float] = None,
    tol: float = 1e-3,
    max_iter: int = 10,
    settings: PropagationSettings = PropagationSettings(),
    jobs: int = 1,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> CalibrationResult:
    """Secant search for the constant omega_perp(0) giving phi_g(tau_g) = target.

    phi_00 - phi_01 - phi_10 is evaluated once at the starting frequency; the
    iteration only re-runs the |11> branch.
    """
    grid = controls.time_grid
    omega = float(omega_init if omega_init is not None else np.mean(potentials.omega_perp))
    wells = prepare_well_states(potentials, controls, 0, constants)

    def with_omega(value: float) -> ControlWaveforms:
        return controls.with_omega_perp(Waveform.constant(grid, value, ANGULAR_UNIT))

    series = overlaps_and_phases(simulate_gate(potentials, with_omega(omega), interaction, settings,
                                               wells=wells, jobs=jobs, constants=constants))
    others = float(series.phases["00"][-1] - series.phases["01"][-1] - series.phases["10"][-1])

    def mismatch(value: float) -> float:
        run = simulate_gate(potentials, with_omega(value), interaction, settings, wells=wells,
                            branches=("11",), constants=constants)
        phi_11 = float(overlaps_and_phases(run).phases["11"][-1])
        return phi_11 + others - target

    f_prev = float(series.phases["11"][-1]) + others - target
    history = [(omega, f_prev + target)]
    if abs(f_prev) <= tol:
        return CalibrationResult(omega, f_prev + target, 0, history)
    phi_now = f_prev + target
    ratio = target / phi_now if phi_now > 0 else 2.0
    omega_prev, omega = omega, omega * float(np.clip(ratio, 0.5, 2.0))

    for iteration in range(1, max_iter + 1):
        f_now = mismatch(omega)
        history.append((omega, f_now + target))
        logger.info("Transverse calibration", extra={"iteration": iteration, "omega_perp": omega,
                                                     "phi_g": f_now + target})
        if abs(f_now) <= tol:
            return CalibrationResult(omega, f_now + target, iteration, history)
        if f_now == f_prev:
            break
        step = f_now * (omega - omega_prev) / (f_now - f_prev)
        omega_prev, f_prev = omega, f_now
        omega = float(np.clip(omega - step, 0.5 * omega_prev, 2.0 * omega_prev))
    raise ControlError(f"transverse calibration did not reach phi_g = {target:.4f} within {max_iter} iterations")


# ---------------------------------------------------------------------------
# Stage 2: omega_perp(t) for the |11> collision phase
# ---------------------------------------------------------------------------


class CollisionPhaseSystem:
    """|11> branch with alpha(t) as control; J = Re <psi_target|psi_11(T)>."""

    def __init__(self, stepper: TwoParticleStepper, initial: np.ndarray, target: np.ndarray,
                 parameterization: TanhParameterization, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> None:
        if stepper.contact is None:
            raise ControlError("stage 2 needs an interacting |11> branch")
        self.stepper = stepper
        self.n_steps = stepper.time_grid.n_steps
        self.stepper.omega_center = np.full(self.n_steps, parameterization.omega_0)
        self.initial = np.asarray(initial, dtype=complex)
        self.target = np.asarray(target, dtype=complex)
        self.parameterization = parameterization
        self.dx2 = stepper.grid.spacing ** 2
        self.hbar = constants.hbar
        self.state_nbytes = self.initial.nbytes
        self._pending = np.ones(self.n_steps, dtype=int)
        self._accepted = np.ones(self.n_steps, dtype=int)
        self._diag = np.arange(stepper.grid.n_points)

    def _set_omega(self, k: int, alpha: float) -> None:
        self.stepper.omega_center[k] = self.parameterization.omega(alpha)

    def initial_states(self) -> list:
        return [self.initial.copy()]

    def forward_step(self, states: list, k: int, controls: np.ndarray) -> list:
        self._set_omega(k, controls[k])
        psi, substeps, _ = self.stepper.step(states[0], k)
        self._pending[k] = substeps
        return [psi]

    def backward_step(self, costates: list, k: int, controls: np.ndarray) -> list:
        self._set_omega(k, controls[k])
        chi, _, _ = self.stepper.step(costates[0], k, direction=-1, substeps=int(self._accepted[k]))
        return [chi]

    def gradient(self, costates: list, states: list, k: int, controls: np.ndarray) -> float:
        alpha = controls[k]
        omega = self.parameterization.omega(alpha)
        d_int = self.stepper.contact.derivative(omega) * self.parameterization.d_omega(alpha)
        chi, psi = costates[0], states[0]
        if self.stepper.contact.is_diagonal:
            value = np.vdot(chi[self._diag, self._diag], d_int * psi[self._diag, self._diag])
        else:
            value = np.vdot(chi, d_int * psi)
        return 2.0 * self.stepper.time_grid.dt / self.hbar * float(np.imag(value)) * self.dx2

    def objective(self, states: list) -> float:
        return float(np.real(np.vdot(self.target, states[0]) * self.dx2))

    def costate_boundary(self, states: list) -> list:
        return [0.5 * self.target]

    def accept(self) -> None:
        self._accepted = self._pending.copy()


@dataclass
class Stage2Result:
    omega_perp: Waveform
    omega_unfiltered: Waveform
    alpha: Waveform
    history: list
    F_11: float
    phi_11: float
    F_11_unfiltered: float
    phi_11_unfiltered: float
    phase_target: float
    excitation_max: float
    lambda_a: Optional[float]
    iterations: int
    converged: bool
    message: str

    def to_dict(self) -> dict:
        return {
            "stage": 2,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "lambda_a": self.lambda_a,
            "objective_history": list(self.history),
            "F_11": self.F_11,
            "phi_11": self.phi_11,
            "F_11_unfiltered": self.F_11_unfiltered,
            "phi_11_unfiltered": self.phi_11_unfiltered,
            "phase_target": self.phase_target,
            "excitation_max": self.excitation_max,
        }


def _run_11(potentials, controls, interaction, settings, wells, constants) -> tuple:
    series = overlaps_and_phases(
        simulate_gate(potentials, controls, interaction, settings, wells=wells, branches=("11",), constants=constants)
    )
    return float(series.fidelities["11"][-1]), float(series.phases["11"][-1])


def stage2_optimize(
    problem: ControlProblem,
    potentials: PotentialSet,
    controls: ControlWaveforms,
    parameterization: TanhParameterization,
    spectral: SpectralFilter,
    interaction: InteractionSpec = InteractionSpec(),
    alpha_init: Optional[Waveform] = None,
    phase_target: Optional[float] = None,
    settings: PropagationSettings = PropagationSettings(),
    jobs: int = 1,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> Stage2Result:
    """Optimise alpha(t) with lambda(t) fixed, then filter omega_perp(t) and re-simulate.

    The target state is the non-interacting |11> evolution times exp(-i phi_target),
    with phi_target = pi - (phi_00 - phi_01 - phi_10) unless given.
    """
    if problem.stage != 2:
        raise ControlError("stage2_optimize needs a stage-2 problem")
    time_grid = controls.time_grid
    settings = replace(settings, track_diagnostics=False)
    if alpha_init is None:
        alpha_init = Waveform.constant(time_grid, 0.0, LAMBDA_UNIT)
    base = controls.with_omega_perp(parameterization.waveform(alpha_init))
    wells = prepare_well_states(potentials, base, 0, constants)

    trajectory = simulate_gate(potentials, base, interaction, settings, wells=wells, jobs=jobs, constants=constants)
    series = overlaps_and_phases(trajectory)
    if phase_target is None:
        phase_target = math.pi - float(series.phases["00"][-1] - series.phases["01"][-1] - series.phases["10"][-1])
    reference_a, reference_b = trajectory.branch("11").reference_final
    reference = TwoParticleState.product(potentials.grid, reference_a, reference_b, symmetric=True)
    target = np.exp(-1j * phase_target) * reference.amplitudes

    if parameterization.amplitude == 0.0:
        logger.info("Tanh amplitude is zero, transverse stage skipped", extra={"stage": "stage2"})
        result_controls = pulse_onto_intervals(alpha_init)
        history, lambda_a, iterations, converged, message = [], None, 0, True, "zero modulation bound"
    else:
        state, stepper, _ = branch_setup("11", potentials, base, interaction, wells, (0, 0), settings, constants)
        system = CollisionPhaseSystem(stepper, state.amplitudes, target, parameterization, constants)
        result = krotov_optimize(system, pulse_onto_intervals(alpha_init), problem,
                                 update_shape(time_grid, problem.rise_fraction), label="stage2")
        result_controls, history = result.controls, result.history
        lambda_a, iterations, converged, message = result.lambda_a, result.iterations, result.converged, result.message

    alpha = intervals_onto_grid(time_grid, result_controls, LAMBDA_UNIT)
    omega_unfiltered = intervals_onto_grid(time_grid, parameterization.omega(result_controls), ANGULAR_UNIT)
    omega_filtered = spectral.apply(omega_unfiltered)

    f_raw, phi_raw = _run_11(potentials, controls.with_omega_perp(omega_unfiltered), interaction, settings, wells, constants)
    f_filtered, phi_filtered = _run_11(potentials, controls.with_omega_perp(omega_filtered), interaction, settings, wells, constants)
    if f_raw - f_filtered > 0.01:
        logger.warning("Filtering degrades F_11 by more than 0.01",
                       extra={"stage": "stage2", "F_11_unfiltered": f_raw, "F_11": f_filtered})
    excitation = float(np.max(parametric_excitation_probability(omega_filtered)))
    logger.info("Stage 2 finished", extra={"stage": "stage2", "F_11": f_filtered, "phi_11": phi_filtered,
                                           "excitation_max": excitation})
    return Stage2Result(
        omega_perp=omega_filtered,
        omega_unfiltered=omega_unfiltered,
        alpha=alpha,
        history=history,
        F_11=f_filtered,
        phi_11=phi_filtered,
        F_11_unfiltered=f_raw,
        phi_11_unfiltered=phi_raw,
        phase_target=phase_target,
        excitation_max=excitation,
        lambda_a=lambda_a,
        iterations=iterations,
        converged=converged,
        message=message,
    )


# ---------------------------------------------------------------------------
# Filter, parametric excitation, noise
# ---------------------------------------------------------------------------


def spectral_filter(waveform: Waveform, cutoff: float) -> Waveform:
    """Sharp low-pass mask that keeps the time average.

    The line through the two end samples is removed, so the remainder is
    continuous when repeated with period tau. Its Fourier components at
    2 pi k / tau > cutoff are zeroed (the constant term is kept) and the line
    is added back. Band-limited input, including its end points, passes
    unchanged.
    """
    grid = waveform.grid
    tau = grid.duration
    if cutoff < 10.0 * 2.0 * math.pi / tau:
        raise FilterError(f"cutoff {cutoff:.3e} rad/s is below 10 * 2 pi / tau_g = {20 * math.pi / tau:.3e} rad/s")
    n = grid.n_steps
    if n < 2:
        return waveform
    values = np.asarray(waveform.values, dtype=float)
    s = (grid.times - grid.t_start) / tau
    line = values[0] + (values[-1] - values[0]) * s
    remainder = values - line

    spectrum = fft.rfft(remainder[:-1])
    frequencies = 2.0 * math.pi * np.arange(spectrum.size) / tau
    spectrum[frequencies > cutoff] = 0.0
    periodic = fft.irfft(spectrum, n)
    return waveform.with_values(line + np.append(periodic, periodic[0]))


def parametric_excitation_probability(omega_perp: Waveform) -> np.ndarray:
    """1 - |<ground(omega(0))|psi(t)>|^2 for a transverse oscillator with frequency omega(t).

    The Gaussian width follows z'' = -omega^2 z with z(0) = 1, z'(0) = i omega(0),
    integrated exactly over each piecewise-constant step.
    """
    values = omega_perp.values
    if np.any(values <= 0):
        raise ControlError("omega_perp must stay positive")
    omega_0 = float(values[0])
    dt = omega_perp.grid.dt
    intervals = omega_perp.interval_values()
    z, zdot = 1.0 + 0j, 1j * omega_0
    probabilities = np.zeros(values.size)
    for k, omega in enumerate(intervals):
        c, s = math.cos(omega * dt), math.sin(omega * dt)
        z, zdot = z * c + zdot * s / omega, -z * omega * s + zdot * c
        b = -1j * zdot / z
        overlap = 2.0 * math.sqrt(omega_0 * b.real) / abs(omega_0 + b)
        probabilities[k + 1] = max(0.0, 1.0 - overlap)
    return probabilities


def inject_control_noise(controls: ControlWaveforms, n_a: float, seed: int) -> ControlWaveforms:
    """Multiplicative white noise of relative rms n_a on lambda(t) and omega_perp(t)."""
    if n_a < 0:
        raise ControlError("noise amplitude must be non-negative")
    if n_a == 0:
        return controls
    lam_rng, omega_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    lam = controls.lam
    lam = lam.with_values(np.clip(lam.values * (1.0 + n_a * lam_rng.standard_normal(lam.values.size)), 0.0, 1.0))
    omega = controls.omega_perp
    if omega is not None:
        omega = omega.with_values(omega.values * (1.0 + n_a * omega_rng.standard_normal(omega.values.size)))
    else:
        logger.debug("No omega_perp waveform to perturb", extra={"n_a": n_a})
    return ControlWaveforms(lam, controls.lam0, omega)
