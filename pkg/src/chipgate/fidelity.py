"""
Gate-level figures of merit.

The process fidelity is the worst case over two-qubit internal input states
chi of the overlap between the simulated (symmetrised, motion-traced) output
and the ideal phase-gate output. Bosonic symmetrisation is carried in first
quantisation: a state is a set of labelled components psi_ab(x1, x2) for
internal labels a, b, and only the fundamental domain x1 <= x2 is kept.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from chipgate.dynamics import (
    BRANCHES,
    ControlWaveforms,
    GateTrajectory,
    InteractionSpec,
    PropagationSettings,
    TwoParticleState,
    overlaps_and_phases,
    prepare_well_states,
    simulate_gate,
)
from chipgate.exceptions import FidelityError
from chipgate.potentials import PotentialSet
from chipgate.units import DEFAULT_CONSTANTS, PhysicalConstants

logger = logging.getLogger(__name__)

# (internal component ab, input branch ij) pairs with non-zero amplitude
_COMPONENTS = (("00", "00"), ("11", "11"), ("01", "01"), ("10", "01"), ("01", "10"), ("10", "10"))
_TARGET_INDEX = {label: index for index, label in enumerate(BRANCHES)}
TRUNCATION_WARN = 1e-3


# ---------------------------------------------------------------------------
# Symmetrisation
# ---------------------------------------------------------------------------


def _swap(label: str) -> str:
    return label[::-1]


def symmetrize(components: dict) -> dict:
    """S psi_ab(x1, x2) = (psi_ab(x1, x2) + psi_ba(x2, x1)) / 2."""
    labels = set(components) | {_swap(label) for label in components}
    result = {}
    for label in sorted(labels):
        direct = components.get(label)
        swapped = components.get(_swap(label))
        total = 0.0
        if direct is not None:
            total = total + 0.5 * np.asarray(direct)
        if swapped is not None:
            total = total + 0.5 * np.asarray(swapped).T
        result[label] = total
    return result


def _fundamental_weights(n: int) -> np.ndarray:
    weights = np.triu(np.ones((n, n)), k=1)
    weights[np.diag_indices(n)] = 1.0 / math.sqrt(2.0)
    return weights


def fundamental_domain(components: dict, dx: float) -> dict:
    """Normalised symmetric state restricted to x1 <= x2, weighted so inner products are preserved."""
    norm = math.sqrt(sum(float(np.sum(np.abs(psi) ** 2)) for psi in components.values()) * dx * dx)
    if norm == 0:
        raise FidelityError("cannot map an empty state onto the fundamental domain")
    n = next(iter(components.values())).shape[0]
    weights = math.sqrt(2.0) * _fundamental_weights(n) / norm
    return {label: weights * psi for label, psi in components.items()}


def branch_vectors(label: str, psi: np.ndarray, dx: float) -> dict:
    """Fundamental-domain components of the symmetrised input |label> (x) psi."""
    return fundamental_domain(symmetrize({label: np.asarray(psi)}), dx)


# ---------------------------------------------------------------------------
# Branch endpoints and Gram matrices
# ---------------------------------------------------------------------------


@dataclass
class BranchEndpoints:
    """Initial, final and non-interacting final motional states per branch for one (n1, n2)."""

    dx: float
    initial: dict
    final: dict
    reference: dict = field(default_factory=dict)
    motional: tuple = (0, 0)

    def __post_init__(self) -> None:
        missing = [label for label in BRANCHES if label not in self.initial or label not in self.final]
        if missing:
            raise FidelityError(f"missing basis-state trajectories: {', '.join(missing)}")

    @classmethod
    def from_trajectory(cls, trajectory: GateTrajectory) -> "BranchEndpoints":
        missing = [label for label in BRANCHES if label not in trajectory.branches]
        if missing:
            raise FidelityError(f"missing basis-state trajectories: {', '.join(missing)}")
        grid = trajectory.initial[BRANCHES[0]].grid
        reference = {}
        for label in BRANCHES:
            pair = trajectory.branch(label).reference_final
            if pair:
                reference[label] = TwoParticleState.product(
                    grid, pair[0], pair[1], symmetric=label[0] == label[1]
                ).amplitudes
        return cls(
            dx=grid.spacing,
            initial={label: trajectory.initial[label].amplitudes for label in BRANCHES},
            final={label: trajectory.branch(label).final.amplitudes for label in BRANCHES},
            reference=reference,
            motional=trajectory.motional,
        )


@dataclass
class GramData:
    """Gram matrix of the output components plus the per-branch phase overlaps."""

    gram: np.ndarray
    actual: np.ndarray  # <B_ij(0)|B_ij(T)> for ij in BRANCHES
    reference: Optional[np.ndarray]  # <B_ij(0)|B0_ij(T)>

    def scaled(self, weight: float) -> "GramData":
        return GramData(
            weight * self.gram,
            weight * self.actual,
            None if self.reference is None else weight * self.reference,
        )

    def __add__(self, other: "GramData") -> "GramData":
        reference = None
        if self.reference is not None and other.reference is not None:
            reference = self.reference + other.reference
        return GramData(self.gram + other.gram, self.actual + other.actual, reference)


def _component_overlap(start: dict, end: dict, label: str, dx: float) -> complex:
    return complex(np.vdot(start[label], end[label]) * dx * dx)


def gram_data(endpoints: BranchEndpoints) -> GramData:
    dx = endpoints.dx
    start = {label: branch_vectors(label, endpoints.initial[label], dx) for label in BRANCHES}
    end = {label: branch_vectors(label, endpoints.final[label], dx) for label in BRANCHES}
    vectors = [end[branch][component].ravel() for component, branch in _COMPONENTS]
    stacked = np.array(vectors)
    gram = (stacked.conj() @ stacked.T) * dx * dx
    actual = np.array([_component_overlap(start[label], end[label], label, dx) for label in BRANCHES])
    reference = None
    if all(label in endpoints.reference for label in BRANCHES):
        ref_end = {label: branch_vectors(label, endpoints.reference[label], dx) for label in BRANCHES}
        reference = np.array([_component_overlap(start[label], ref_end[label], label, dx) for label in BRANCHES])
    return GramData(gram, actual, reference)


# ---------------------------------------------------------------------------
# Target phases and minimisation over chi
# ---------------------------------------------------------------------------


def target_phases(data: GramData, mode: str = "local_z", gate_phase: float = math.pi) -> np.ndarray:
    """Phases theta_ij of the ideal output for ij in 00, 01, 10, 11.

    local_z: 00, 01, 10 keep their simulated phases (single-qubit Z rotations
    are free) and theta_11 = theta_01 + theta_10 - theta_00 + gate_phase.
    literal: the non-interacting phases plus gate_phase on |11>.
    """
    if mode == "local_z":
        theta = np.angle(data.actual)
        theta[3] = theta[1] + theta[2] - theta[0] + gate_phase
        return theta
    if mode == "literal":
        if data.reference is None:
            raise FidelityError("literal mode needs the non-interacting reference states")
        theta = np.angle(data.reference)
        theta[3] += gate_phase
        return theta
    raise FidelityError(f"unknown fidelity mode '{mode}'")


def chi_from_angles(params: np.ndarray) -> np.ndarray:
    """Normalised amplitudes (a00, a01, a10, a11) from 3 hyperspherical angles and 3 phases."""
    params = np.atleast_2d(params)
    t1, t2, t3, p1, p2, p3 = params.T
    s1, s2 = np.sin(t1), np.sin(t2)
    amplitudes = np.stack(
        [
            np.cos(t1) + 0j,
            s1 * np.cos(t2) * np.exp(1j * p1),
            s1 * s2 * np.cos(t3) * np.exp(1j * p2),
            s1 * s2 * np.sin(t3) * np.exp(1j * p3),
        ],
        axis=-1,
    )
    return amplitudes


def _coefficients(chi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """c_k = conj(alpha_ab) exp(-i theta_ab) alpha_ij for each (ab, ij) in _COMPONENTS."""
    columns = []
    for component, branch in _COMPONENTS:
        a = _TARGET_INDEX[component]
        b = _TARGET_INDEX[branch]
        columns.append(np.conj(chi[:, a]) * np.exp(-1j * theta[a]) * chi[:, b])
    return np.stack(columns, axis=-1)


def fidelity_for_chi(data: GramData, theta: np.ndarray, chi: np.ndarray) -> np.ndarray:
    """F(chi) = || <chi~| U S (|chi> (x) rho_0) ||^2 traced over motion, for each row of chi."""
    chi = np.atleast_2d(chi)
    coefficients = _coefficients(chi, theta)
    values = np.einsum("ni,ij,nj->n", coefficients.conj(), data.gram, coefficients)
    return np.real(values)


@dataclass
class FidelityMinimum:
    fidelity: float
    chi: np.ndarray
    mode: str
    grid_minimum: float
    theta: np.ndarray

    def to_dict(self) -> dict:
        return {
            "fidelity": self.fidelity,
            "mode": self.mode,
            "grid_minimum": self.grid_minimum,
            "chi": [{"re": float(a.real), "im": float(a.imag)} for a in self.chi],
            "theta": [float(t) for t in self.theta],
        }


def minimize_over_chi(
    data: GramData,
    theta: np.ndarray,
    mode: str = "local_z",
    points_per_angle: int = 5,
    n_starts: int = 3,
    restarts: int = 0,
    seed: int = 0,
) -> FidelityMinimum:
    """Coarse grid over the 6 angles followed by Nelder-Mead from the best grid points."""
    polar = np.linspace(0.0, 0.5 * math.pi, points_per_angle)
    azimuth = np.linspace(0.0, 2.0 * math.pi, points_per_angle, endpoint=False)
    grid = np.array(list(itertools.product(polar, polar, polar, azimuth, azimuth, azimuth)))
    values = fidelity_for_chi(data, theta, chi_from_angles(grid))
    order = np.argsort(values)
    grid_minimum = float(values[order[0]])

    def objective(params: np.ndarray) -> float:
        return float(fidelity_for_chi(data, theta, chi_from_angles(params))[0])

    starts = [grid[i] for i in order[:n_starts]]
    if restarts:
        rng = np.random.default_rng(seed)
        low = np.zeros(6)
        high = np.array([0.5 * math.pi] * 3 + [2.0 * math.pi] * 3)
        starts += list(rng.uniform(low, high, size=(restarts, 6)))

    best_value, best_params = grid_minimum, grid[order[0]]
    for start in starts:
        result = minimize(objective, start, method="Nelder-Mead",
                          options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": 20000, "maxfev": 40000})
        if result.fun < best_value:
            best_value, best_params = float(result.fun), result.x
    chi = chi_from_angles(best_params)[0]
    return FidelityMinimum(float(np.clip(best_value, 0.0, 1.0)), chi, mode, grid_minimum, theta)


@dataclass
class ProcessFidelity:
    local_z: FidelityMinimum
    literal: Optional[FidelityMinimum]

    @property
    def fidelity(self) -> float:
        return self.local_z.fidelity

    def to_dict(self) -> dict:
        return {
            "local_z": self.local_z.to_dict(),
            "literal": None if self.literal is None else self.literal.to_dict(),
        }


def mixture(weighted: Sequence[tuple]) -> GramData:
    """Sum_n P_n GramData_n for (weight, GramData) pairs."""
    total = None
    for weight, data in weighted:
        term = data.scaled(weight)
        total = term if total is None else total + term
    if total is None:
        raise FidelityError("no motional configurations to mix")
    return total


def process_fidelity(
    data,
    gate_phase: float = math.pi,
    restarts: int = 0,
    seed: int = 0,
) -> ProcessFidelity:
    """Worst-case gate fidelity over internal inputs, in local-Z and literal modes.

    `data` is a GateTrajectory, BranchEndpoints or (mixed) GramData.
    """
    if isinstance(data, GateTrajectory):
        data = BranchEndpoints.from_trajectory(data)
    if isinstance(data, BranchEndpoints):
        data = gram_data(data)
    local = minimize_over_chi(data, target_phases(data, "local_z", gate_phase), "local_z",
                              restarts=restarts, seed=seed)
    literal = None
    if data.reference is not None:
        literal = minimize_over_chi(data, target_phases(data, "literal", gate_phase), "literal",
                                    restarts=restarts, seed=seed)
    logger.info(
        "Process fidelity",
        extra={"F": local.fidelity, "F_literal": None if literal is None else literal.fidelity},
    )
    return ProcessFidelity(local, literal)


def surface_adjusted_fidelity(fidelity: float, surface_error: float) -> float:
    return fidelity * (1.0 - surface_error)


# ---------------------------------------------------------------------------
# Finite temperature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThermalEnsemble:
    """Canonical occupations of the localised well states, p_n per well, P = p (x) p."""

    temperature: float
    omega_x: float
    occupations: np.ndarray
    truncated_weight: float

    @property
    def n_max(self) -> int:
        return self.occupations.size - 1

    def P(self, n1: int, n2: int) -> float:
        return float(self.occupations[n1] * self.occupations[n2])

    def table(self) -> np.ndarray:
        return np.outer(self.occupations, self.occupations)

    def configurations(self, floor: float = 0.0) -> list:
        """(n1, n2, P) with P >= floor."""
        return [(n1, n2, self.P(n1, n2))
                for n1 in range(self.n_max + 1) for n2 in range(self.n_max + 1)
                if self.P(n1, n2) >= floor and self.P(n1, n2) > 0]


def thermal_occupations(
    temperature: float,
    omega_x: float,
    n_max: int,
    energies: Optional[np.ndarray] = None,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> ThermalEnsemble:
    """Boltzmann weights truncated at n_max and renormalised; harmonic energies unless given."""
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    if temperature == 0:
        occupations = np.zeros(n_max + 1)
        occupations[0] = 1.0
        return ThermalEnsemble(0.0, omega_x, occupations, 0.0)

    beta = 1.0 / (constants.k_B * temperature)
    if energies is None:
        excitation = constants.hbar * omega_x * np.arange(n_max + 1)
    else:
        energies = np.asarray(energies, dtype=float)[: n_max + 1]
        if energies.size < n_max + 1:
            raise ValueError(f"need {n_max + 1} well energies, got {energies.size}")
        excitation = energies - energies[0]
    x = constants.hbar * omega_x * beta
    weights = np.exp(-beta * excitation) * (1.0 - math.exp(-x))
    # weight beyond the cutoff, harmonic estimate
    truncated = math.exp(-x * (n_max + 1))
    if truncated > TRUNCATION_WARN:
        logger.warning(
            "Thermal truncation drops noticeable weight",
            extra={"kT_over_hbar_omega": 1.0 / x, "n_max": n_max, "dropped": truncated},
        )
    return ThermalEnsemble(float(temperature), float(omega_x), weights / weights.sum(), truncated)


@dataclass
class TemperaturePoint:
    temperature: float
    kT_over_hbar_omega: float
    fidelity: float
    excluded_weight: float

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity

    csv_header = ("T", "kT_over_hbar_omega", "one_minus_F")

    def csv_row(self) -> tuple:
        return (self.temperature, self.kT_over_hbar_omega, self.infidelity)


@dataclass(frozen=True)
class GateSetup:
    potentials: PotentialSet
    controls: ControlWaveforms
    interaction: InteractionSpec = InteractionSpec()
    settings: PropagationSettings = PropagationSettings()
    jobs: int = 1


def fidelity_vs_temperature(
    setup: GateSetup,
    temperatures: Sequence[float],
    n_max: int = 1,
    floor: float = 1e-4,
    use_well_energies: bool = True,
    gate_phase: float = math.pi,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> list:
    """F(T) with the optimised controls; each occupied (n1, n2) pair is simulated once."""
    potentials = setup.potentials
    wells = prepare_well_states(potentials, setup.controls, n_max, constants)
    energies = wells.left[0].energies if use_well_energies else None
    ensembles = [thermal_occupations(T, potentials.omega_x, n_max, energies, constants) for T in temperatures]

    needed = sorted({(n1, n2) for ensemble in ensembles for n1, n2, _ in ensemble.configurations(floor)})
    cache = {}
    for n1, n2 in needed:
        trajectory = simulate_gate(potentials, setup.controls, setup.interaction, setup.settings,
                                   motional=(n1, n2), wells=wells, jobs=setup.jobs, constants=constants)
        cache[(n1, n2)] = gram_data(BranchEndpoints.from_trajectory(trajectory))
        logger.debug("Motional configuration simulated", extra={"n1": n1, "n2": n2})

    points = []
    for T, ensemble in zip(temperatures, ensembles):
        configurations = ensemble.configurations(floor)
        kept = sum(P for _, _, P in configurations)
        excluded = 1.0 - kept
        if excluded > TRUNCATION_WARN:
            logger.warning("Probability floor excludes noticeable weight",
                           extra={"T": T, "excluded": excluded, "floor": floor})
        data = mixture([(P / kept, cache[(n1, n2)]) for n1, n2, P in configurations])
        result = process_fidelity(data, gate_phase)
        x = 0.0 if T == 0 else constants.k_B * T / (constants.hbar * potentials.omega_x)
        points.append(TemperaturePoint(float(T), x, result.fidelity, excluded))
    return points


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class GateReport:
    n_oscillations: int
    tau_g: float
    overlaps: dict
    fidelities: dict
    phases: dict
    phi_g: float
    process: ProcessFidelity
    single_overlaps: dict = field(default_factory=dict)
    temperature_curve: list = field(default_factory=list)
    error_budget: dict = field(default_factory=dict)
    surface_adjusted: Optional[float] = None
    source: str = "model"

    @property
    def fidelity(self) -> float:
        return self.process.fidelity

    def to_dict(self) -> dict:
        return {
            "n_oscillations": self.n_oscillations,
            "tau_g": self.tau_g,
            "O": {label: abs(value) for label, value in self.overlaps.items()},
            "single_particle_O": dict(self.single_overlaps),
            "F_ij": dict(self.fidelities),
            "phi_ij": dict(self.phases),
            "phi_g": self.phi_g,
            "phi_g_over_pi": self.phi_g / math.pi,
            "fidelity": self.process.to_dict(),
            "surface_adjusted_fidelity": self.surface_adjusted,
            "temperature_curve": [
                {"T": p.temperature, "kT_over_hbar_omega": p.kT_over_hbar_omega, "one_minus_F": p.infidelity}
                for p in self.temperature_curve
            ],
            "error_budget": self.error_budget,
            "source": self.source,
        }


def build_gate_report(
    trajectory: GateTrajectory,
    n_oscillations: int,
    gate_phase: float = math.pi,
    single_overlaps: Optional[dict] = None,
    source: str = "model",
) -> GateReport:
    series = overlaps_and_phases(trajectory)
    final = series.final()
    return GateReport(
        n_oscillations=n_oscillations,
        tau_g=trajectory.time_grid.duration,
        overlaps={label: complex(series.overlaps[label][-1]) for label in BRANCHES},
        fidelities={label: final[f"F_{label}"] for label in BRANCHES},
        phases={label: final[f"phi_{label}"] for label in BRANCHES},
        phi_g=final["phi_g"],
        process=process_fidelity(trajectory, gate_phase),
        single_overlaps=dict(single_overlaps or {}),
        source=source,
    )
