"""
Two-atom propagation in the state-dependent double well.

Each computational basis branch |ij> carries a two-particle motional state
psi_ij(x1, x2, t) evolved under

    H_ij = T1 + T2 + U_i(x1, t) + U_j(x2, t) + g1d(omega_perp) delta(x1 - x2)

with a second-order split-operator scheme (kinetic energy in reciprocal space,
potentials and contact term on the position grid). A non-interacting
reference evolution psi0_ij is carried along in the same pass; since the
non-interacting step factorises, it is stored as a pair of 1D states.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import fft
from scipy.linalg import eigh

from chipgate.constants import OLSHANII_COEFFICIENT, SCATTERING_LENGTH
from chipgate.exceptions import (
    ConfinementResonanceError,
    DiagnosticError,
    DoubleWellError,
    GridError,
    TimeStepError,
    TunnelingError,
)
from chipgate.potentials import PotentialSet, fit_minimum, local_minima
from chipgate.units import (
    ANGULAR_UNIT,
    DEFAULT_CONSTANTS,
    PhysicalConstants,
    SpatialGrid1D,
    TimeGrid,
    Waveform,
)

logger = logging.getLogger(__name__)

BRANCHES = ("00", "01", "10", "11")
MAX_STEP_PHASE = math.pi / 4
CONTACT_DENSITY_FLOOR = 1e-10
UNRELIABLE_OVERLAP = 1e-6


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoParticleState:
    """Motional state of both atoms on a shared grid, amplitudes indexed [x1, x2]."""

    grid: SpatialGrid1D
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amplitudes = np.array(self.amplitudes, dtype=complex, copy=True)
        n = self.grid.n_points
        if amplitudes.shape != (n, n):
            raise GridError(f"two-particle state must be {n}x{n}, got {amplitudes.shape}")
        norm = float(np.sum(np.abs(amplitudes) ** 2) * self.grid.spacing ** 2)
        if abs(norm - 1.0) > 1e-8:
            raise ValueError(f"two-particle state is not normalised (norm {norm:.12f})")
        amplitudes.flags.writeable = False
        object.__setattr__(self, "amplitudes", amplitudes)

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.spacing ** 2)

    @classmethod
    def product(cls, grid: SpatialGrid1D, phi_1: np.ndarray, phi_2: np.ndarray,
                symmetric: bool = False) -> "TwoParticleState":
        """phi_1(x1) phi_2(x2), exchange-symmetrised when `symmetric`, normalised."""
        amplitudes = np.outer(phi_1, phi_2)
        if symmetric:
            amplitudes = amplitudes + amplitudes.T
        norm = math.sqrt(np.sum(np.abs(amplitudes) ** 2) * grid.spacing ** 2)
        return cls(grid, amplitudes / norm)

    def exchange_asymmetry(self) -> float:
        return float(np.max(np.abs(self.amplitudes - self.amplitudes.T)))

    def inner(self, other: "TwoParticleState") -> complex:
        """<self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.grid.spacing ** 2)


@dataclass(frozen=True)
class InteractionSpec:
    """Contact interaction settings. Scattering lengths in m."""

    a_00: float = SCATTERING_LENGTH
    a_01: float = SCATTERING_LENGTH
    a_11: float = SCATTERING_LENGTH
    enabled: bool = True
    # evaluate omega_perp at (x1 + x2)/2 instead of at x1
    symmetric_omega: bool = False
    regularization: str = "diagonal"

    def __post_init__(self) -> None:
        if self.regularization not in ("diagonal", "gaussian"):
            raise ValueError(f"unknown contact regularization '{self.regularization}'")
        if min(self.a_00, self.a_01, self.a_11) < 0:
            raise ValueError("scattering lengths must be non-negative")

    def scattering_length(self, i: int, j: int) -> float:
        if i == j:
            return self.a_00 if i == 0 else self.a_11
        return self.a_01

    def to_dict(self) -> dict:
        return {
            "a_00": self.a_00,
            "a_01": self.a_01,
            "a_11": self.a_11,
            "enabled": self.enabled,
            "symmetric_omega": self.symmetric_omega,
            "regularization": self.regularization,
        }


@dataclass(frozen=True)
class ControlWaveforms:
    """Controls of one gate run.

    `lam` drives the microwave dressing, `lam0` the compensation ramps (ideal
    compensation follows `lam` when omitted), `omega_perp` the transverse
    frequency at the trap centre (the static profile is used when omitted).
    """

    lam: Waveform
    lam0: Optional[Waveform] = None
    omega_perp: Optional[Waveform] = None

    def __post_init__(self) -> None:
        for other in (self.lam0, self.omega_perp):
            if other is not None and other.grid != self.lam.grid:
                raise GridError("control waveforms live on different time grids")
        if self.omega_perp is not None and np.any(self.omega_perp.values <= 0):
            raise ValueError("omega_perp must stay positive")

    @property
    def time_grid(self) -> TimeGrid:
        return self.lam.grid

    def lam_intervals(self) -> np.ndarray:
        return self.lam.interval_values()

    def lam0_intervals(self) -> Optional[np.ndarray]:
        return None if self.lam0 is None else self.lam0.interval_values()

    def omega_intervals(self) -> Optional[np.ndarray]:
        return None if self.omega_perp is None else self.omega_perp.interval_values()

    def with_omega_perp(self, omega_perp: Optional[Waveform]) -> "ControlWaveforms":
        return ControlWaveforms(self.lam, self.lam0, omega_perp)

    def with_lam(self, lam: Waveform) -> "ControlWaveforms":
        return ControlWaveforms(lam, self.lam0, self.omega_perp)


@dataclass(frozen=True)
class PropagationSettings:
    max_step_phase: float = MAX_STEP_PHASE
    max_contact_phase: float = MAX_STEP_PHASE
    contact_floor: float = CONTACT_DENSITY_FLOOR
    track_diagnostics: bool = True
    fft_workers: int = 1


# ---------------------------------------------------------------------------
# Contact interaction
# ---------------------------------------------------------------------------


def _olshanii_c(a_s: float, constants: PhysicalConstants) -> float:
    # 1.46 a_s / a_perp = c sqrt(omega)
    return OLSHANII_COEFFICIENT * a_s * math.sqrt(constants.m_atom / (2.0 * constants.hbar))


def g1d_strength(a_s: float, omega_perp, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Confinement-renormalised 1D coupling 2 hbar omega a_s / (1 - 1.46 a_s / a_perp), J m."""
    omega = np.asarray(omega_perp, dtype=float)
    denominator = 1.0 - _olshanii_c(a_s, constants) * np.sqrt(omega)
    if np.any(denominator <= 0):
        raise ConfinementResonanceError(
            f"1 - 1.46 a_s/a_perp = {float(np.min(denominator)):.3e} for a_s = {a_s:.3e} m"
        )
    value = 2.0 * constants.hbar * omega * a_s / denominator
    return float(value) if value.ndim == 0 else value


def g1d_derivative(a_s: float, omega_perp, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """d g1d / d omega_perp."""
    omega = np.asarray(omega_perp, dtype=float)
    c_root = _olshanii_c(a_s, constants) * np.sqrt(omega)
    value = 2.0 * constants.hbar * a_s * (1.0 - 0.5 * c_root) / (1.0 - c_root) ** 2
    return float(value) if value.ndim == 0 else value


def transverse_length(omega_perp: float, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    return math.sqrt(2.0 * constants.hbar / (constants.m_atom * omega_perp))


class ContactTerm:
    """g1d(omega_perp(x, t)) delta(x1 - x2) on the two-particle grid.

    omega_perp(x, t) = omega_center(t) * profile(x) / mean(profile). The
    diagonal realisation puts g1d/dx on x1 = x2; the Gaussian one spreads it
    over a kernel of width 2 dx.
    """

    def __init__(
        self,
        grid: SpatialGrid1D,
        scattering_length: float,
        omega_profile: np.ndarray,
        regularization: str = "diagonal",
        symmetric_omega: bool = False,
        constants: PhysicalConstants = DEFAULT_CONSTANTS,
    ) -> None:
        profile = np.asarray(omega_profile, dtype=float)
        if profile.shape != (grid.n_points,):
            raise GridError("omega_perp profile does not match the spatial grid")
        if np.any(profile <= 0):
            raise ValueError("omega_perp profile must be positive")
        self.grid = grid
        self.scattering_length = float(scattering_length)
        self.reference_omega = float(profile.mean())
        self.relative = profile / self.reference_omega
        self.regularization = regularization
        self.constants = constants
        dx = grid.spacing
        if regularization == "gaussian":
            width = 2.0 * dx
            diff = grid.x[:, None] - grid.x[None, :]
            self.kernel = np.exp(-0.5 * (diff / width) ** 2) / (math.sqrt(2.0 * math.pi) * width)
            self.band = int(math.ceil(4.0 * width / dx))
            if symmetric_omega:
                mid = 0.5 * (grid.x[:, None] + grid.x[None, :])
                self._relative_eval = np.interp(mid, grid.x, self.relative)
            else:
                self._relative_eval = self.relative[:, None]
        elif regularization == "diagonal":
            self.kernel = None
            self.band = 2
            self._relative_eval = self.relative
        else:
            raise ValueError(f"unknown contact regularization '{regularization}'")

    @property
    def is_diagonal(self) -> bool:
        return self.kernel is None

    def _omega(self, omega_center: Optional[float]) -> np.ndarray:
        center = self.reference_omega if omega_center is None else float(omega_center)
        return center * self._relative_eval

    def values(self, omega_center: Optional[float] = None) -> np.ndarray:
        """Diagonal strengths (n,) or full kernel (n, n), J."""
        g = g1d_strength(self.scattering_length, self._omega(omega_center), self.constants)
        if self.is_diagonal:
            return np.asarray(g) / self.grid.spacing
        return np.asarray(g) * self.kernel

    def derivative(self, omega_center: Optional[float] = None) -> np.ndarray:
        """d values / d omega_center."""
        dg = g1d_derivative(self.scattering_length, self._omega(omega_center), self.constants)
        dg = np.asarray(dg) * self._relative_eval
        if self.is_diagonal:
            return dg / self.grid.spacing
        return dg * self.kernel

    def band_probability(self, psi: np.ndarray) -> float:
        """Probability within the kernel band around x1 = x2."""
        total = 0.0
        for offset in range(-self.band, self.band + 1):
            total += float(np.sum(np.abs(np.diagonal(psi, offset)) ** 2))
        return total * self.grid.spacing ** 2


# ---------------------------------------------------------------------------
# Split-operator steppers
# ---------------------------------------------------------------------------


def _kinetic_energies(grid: SpatialGrid1D, constants: PhysicalConstants) -> np.ndarray:
    return constants.hbar ** 2 * np.asarray(grid.k) ** 2 / (2.0 * constants.m_atom)


def _check_step_phase(energy_range: float, dt: float, limit: float, hbar: float) -> None:
    phase = energy_range * abs(dt) / hbar
    if phase > limit:
        raise TimeStepError(
            f"potential phase advance per step is {phase:.3f} rad (limit {limit:.3f})",
            suggested_dt=limit * hbar / energy_range,
        )


class SplitOperator1D:
    """Strang-split propagator for one atom."""

    def __init__(self, grid: SpatialGrid1D, constants: PhysicalConstants = DEFAULT_CONSTANTS,
                 max_step_phase: float = MAX_STEP_PHASE) -> None:
        self.grid = grid
        self.constants = constants
        self.max_step_phase = max_step_phase
        self.kinetic = _kinetic_energies(grid, constants)
        self._factors: dict = {}

    def _kinetic_factor(self, dt: float) -> np.ndarray:
        factor = self._factors.get(dt)
        if factor is None:
            factor = np.exp(-1j * self.kinetic * dt / self.constants.hbar)
            self._factors[dt] = factor
        return factor

    def step(self, phi: np.ndarray, potential: np.ndarray, dt: float) -> np.ndarray:
        hbar = self.constants.hbar
        _check_step_phase(float(np.ptp(potential)), dt, self.max_step_phase, hbar)
        half = np.exp(-0.5j * potential * dt / hbar)
        phi = fft.ifft(self._kinetic_factor(dt) * fft.fft(half * phi))
        return half * phi

    def energy(self, phi: np.ndarray, potential: np.ndarray) -> float:
        dx = self.grid.spacing
        kinetic = single_particle_kinetic_energy(phi, self.grid, self.constants)
        norm = float(np.sum(np.abs(phi) ** 2) * dx)
        return kinetic + float(np.sum(potential * np.abs(phi) ** 2) * dx) / norm


def single_particle_kinetic_energy(phi: np.ndarray, grid: SpatialGrid1D,
                                   constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """<T> of a single-particle state, J."""
    weights = np.abs(fft.fft(phi)) ** 2
    return float(np.sum(weights * _kinetic_energies(grid, constants)) / np.sum(weights))


StepPotentialLike = Union[np.ndarray, Callable[[int], np.ndarray]]


class StepPotential:
    """U_i on step k, evaluated with the interval (piecewise-constant) control values."""

    def __init__(self, potentials: PotentialSet, state: int, lam_intervals: np.ndarray,
                 lam0_intervals: Optional[np.ndarray] = None) -> None:
        self.potentials = potentials
        self.state = state
        self.lam = np.asarray(lam_intervals, dtype=float)
        self.lam0 = None if lam0_intervals is None else np.asarray(lam0_intervals, dtype=float)

    def __call__(self, k: int) -> np.ndarray:
        lam0 = None if self.lam0 is None else float(self.lam0[k])
        return self.potentials.potential(self.state, float(self.lam[k]), lam0)

    def derivative(self, k: int) -> np.ndarray:
        """dU/dlambda on step k; with ideal compensation lambda0 follows lambda."""
        du = self.potentials.u(self.state)
        if self.potentials.u_comp is not None and self.lam0 is None:
            du = du + self.potentials.u_comp
        return du


def _as_step_callable(potential: StepPotentialLike) -> Callable[[int], np.ndarray]:
    if callable(potential):
        return potential
    static = np.asarray(potential, dtype=float)
    return lambda k: static


def propagate_single(
    phi: np.ndarray,
    potential: StepPotentialLike,
    time_grid: TimeGrid,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
    grid: Optional[SpatialGrid1D] = None,
    store: bool = False,
    stepper: Optional[SplitOperator1D] = None,
):
    """Propagate a single-atom state; returns the final state, or all N+1 states when `store`."""
    if stepper is None:
        if grid is None:
            raise GridError("propagate_single needs a spatial grid or a stepper")
        stepper = SplitOperator1D(grid, constants)
    potential_at = _as_step_callable(potential)
    phi = np.asarray(phi, dtype=complex)
    states = [phi] if store else None
    dt = time_grid.dt
    for k in range(time_grid.n_steps):
        phi = stepper.step(phi, potential_at(k), dt)
        if store:
            states.append(phi)
    return np.array(states) if store else phi


class TwoParticleStepper:
    """One Strang step of H_ij on the two-particle grid, with contact substeps."""

    def __init__(
        self,
        grid: SpatialGrid1D,
        potential_1: StepPotentialLike,
        potential_2: StepPotentialLike,
        time_grid: TimeGrid,
        contact: Optional[ContactTerm] = None,
        omega_center: Optional[Sequence[float]] = None,
        settings: PropagationSettings = PropagationSettings(),
        constants: PhysicalConstants = DEFAULT_CONSTANTS,
    ) -> None:
        self.grid = grid
        self.potential_1 = _as_step_callable(potential_1)
        self.potential_2 = _as_step_callable(potential_2)
        self.time_grid = time_grid
        self.contact = contact
        self.omega_center = None if omega_center is None else np.asarray(omega_center, dtype=float)
        self.settings = settings
        self.constants = constants
        self.kinetic_1 = _kinetic_energies(grid, constants)
        self._kinetic_2d = self.kinetic_1[:, None] + self.kinetic_1[None, :]
        self._factors: dict = {}
        self._diag = np.arange(grid.n_points)

    def _kinetic_factor(self, dt: float) -> np.ndarray:
        factor = self._factors.get(dt)
        if factor is None:
            factor = np.exp(-1j * self._kinetic_2d * dt / self.constants.hbar)
            self._factors[dt] = factor
        return factor

    def potentials(self, k: int) -> tuple:
        u1 = self.potential_1(k)
        u2 = self.potential_2(k)
        energy_range = (u1.max() + u2.max()) - (u1.min() + u2.min())
        _check_step_phase(float(energy_range), self.time_grid.dt, self.settings.max_step_phase,
                          self.constants.hbar)
        return u1, u2

    def omega_at(self, k: int) -> Optional[float]:
        return None if self.omega_center is None else float(self.omega_center[k])

    def interaction(self, k: int) -> Optional[np.ndarray]:
        if self.contact is None:
            return None
        return self.contact.values(self.omega_at(k))

    def substeps_for(self, psi: np.ndarray, v_int: Optional[np.ndarray]) -> int:
        if v_int is None:
            return 1
        phase = float(np.max(v_int)) * self.time_grid.dt / self.constants.hbar
        if phase <= self.settings.max_contact_phase:
            return 1
        if self.contact.band_probability(psi) <= self.settings.contact_floor:
            return 1
        return int(math.ceil(phase / self.settings.max_contact_phase))

    def step(self, psi: np.ndarray, k: int, direction: int = 1,
             substeps: Optional[int] = None, want_kinetic: bool = False) -> tuple:
        """Returns (psi, substeps used, <T1> or nan)."""
        hbar = self.constants.hbar
        u1, u2 = self.potentials(k)
        v_int = self.interaction(k)
        n_sub = self.substeps_for(psi, v_int) if substeps is None else int(substeps)
        h = direction * self.time_grid.dt / n_sub
        half = np.outer(np.exp(-0.5j * u1 * h / hbar), np.exp(-0.5j * u2 * h / hbar))
        contact_half = None if v_int is None else np.exp(-0.5j * v_int * h / hbar)
        kinetic = self._kinetic_factor(h)
        workers = self.settings.fft_workers
        kinetic_1 = float("nan")

        psi = psi * half
        for sub in range(n_sub):
            if sub:
                psi *= half
            if contact_half is not None:
                if self.contact.is_diagonal:
                    psi[self._diag, self._diag] *= contact_half
                else:
                    psi *= contact_half
            phik = fft.fft2(psi, workers=workers)
            if want_kinetic and sub == 0:
                weights = np.abs(phik) ** 2
                kinetic_1 = float(np.sum(weights * self.kinetic_1[:, None]) / np.sum(weights))
            psi = fft.ifft2(phik * kinetic, workers=workers)
            if contact_half is not None:
                if self.contact.is_diagonal:
                    psi[self._diag, self._diag] *= contact_half
                else:
                    psi *= contact_half
            psi *= half
        return psi, n_sub, kinetic_1


# ---------------------------------------------------------------------------
# Stationary states
# ---------------------------------------------------------------------------


def fourier_grid_hamiltonian(potential: np.ndarray, grid: SpatialGrid1D, mass: float,
                             constants: PhysicalConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Dense Hamiltonian with the same periodic spectral kinetic energy as the propagator."""
    n = grid.n_points
    kinetic = constants.hbar ** 2 * np.asarray(grid.k) ** 2 / (2.0 * mass)
    t_matrix = fft.ifft(kinetic[:, None] * fft.fft(np.eye(n), axis=0), axis=0).real
    hamiltonian = t_matrix + np.diag(np.asarray(potential, dtype=float))
    return 0.5 * (hamiltonian + hamiltonian.T)


def _normalise(phi: np.ndarray, dx: float) -> np.ndarray:
    return phi / math.sqrt(float(np.sum(np.abs(phi) ** 2)) * dx)


def _fix_sign(phi: np.ndarray) -> np.ndarray:
    peak = phi[np.argmax(np.abs(phi))]
    return phi * (abs(peak) / peak)


@dataclass
class WellSpectrum:
    """Localised motional states of one well and their energies (J)."""

    states: list
    energies: np.ndarray
    splittings: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, n: int) -> np.ndarray:
        return self.states[n]


def well_eigenstates(
    potential: np.ndarray,
    grid: SpatialGrid1D,
    which: str = "left",
    n_max: int = 0,
    gate_time: Optional[float] = None,
    max_tunneling_phase: float = 0.1,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> WellSpectrum:
    """States |n>, n = 0..n_max, localised in one well of a double well.

    The localised states are the sums and differences of the even/odd doublets
    of the full Hamiltonian. A potential with a single minimum returns its
    plain eigenstates and ignores `which`.
    """
    if which not in ("left", "right"):
        raise ValueError(f"which must be 'left' or 'right', got '{which}'")
    potential = np.asarray(potential, dtype=float)
    dx = grid.spacing
    minima = local_minima(potential)
    hamiltonian = fourier_grid_hamiltonian(potential, grid, constants.m_atom, constants)

    if minima.size == 1:
        energies, vectors = eigh(hamiltonian, subset_by_index=[0, n_max])
        states = [_fix_sign(_normalise(vectors[:, n].astype(complex), dx)) for n in range(n_max + 1)]
        return WellSpectrum(states, energies, np.zeros(n_max + 1))
    if minima.size != 2:
        raise DoubleWellError(f"potential has {minima.size} local minima, expected 1 or 2")

    count = min(2 * n_max + 3, grid.n_points - 1)
    energies, vectors = eigh(hamiltonian, subset_by_index=[0, count])
    barrier = float(potential[minima[0]:minima[1] + 1].max())
    center = 0.5 * (grid.x[minima[0]] + grid.x[minima[1]])
    side = grid.x < center if which == "left" else grid.x > center

    states, levels, splittings = [], [], []
    for n in range(n_max + 1):
        even, odd = 2 * n, 2 * n + 1
        if energies[odd] >= barrier:
            raise DoubleWellError(
                f"motional state n={n} lies above the barrier "
                f"({energies[odd]:.3e} J >= {barrier:.3e} J)"
            )
        splitting = float(energies[odd] - energies[even])
        if gate_time is not None:
            phase = splitting * gate_time / constants.hbar
            if phase > max_tunneling_phase:
                raise TunnelingError(
                    f"tunneling phase {phase:.3e} rad over {gate_time:.3e} s for n={n}",
                    splitting=splitting,
                )
        elif odd + 1 < energies.size:
            spacing = float(energies[odd + 1] - energies[even])
            if splitting > 0.1 * spacing:
                raise TunnelingError(
                    f"splitting {splitting:.3e} J exceeds 10% of the level spacing for n={n}",
                    splitting=splitting,
                )
        plus = (vectors[:, even] + vectors[:, odd]) / math.sqrt(2.0)
        minus = (vectors[:, even] - vectors[:, odd]) / math.sqrt(2.0)
        chosen = plus if np.sum(plus[side] ** 2) > np.sum(minus[side] ** 2) else minus
        states.append(_fix_sign(_normalise(chosen.astype(complex), dx)))
        levels.append(0.5 * (energies[even] + energies[odd]))
        splittings.append(splitting)

    logger.debug(
        "Localised well states",
        extra={"which": which, "n_max": n_max, "max_splitting": max(splittings)},
    )
    return WellSpectrum(states, np.array(levels), np.array(splittings))


def _harmonic_estimate(potential: np.ndarray, grid: SpatialGrid1D, mass: float) -> float:
    index = int(np.argmin(potential))
    _, omega = fit_minimum(grid, potential, index, mass)
    return omega


def _imaginary_time_1d(phi, potential, grid, dtau, constants, mask=None, tol=1e-12, max_steps=100000):
    hbar = constants.hbar
    dx = grid.spacing
    kinetic = np.exp(-_kinetic_energies(grid, constants) * dtau / hbar)
    half = np.exp(-0.5 * (potential - potential.min()) * dtau / hbar)
    stepper = SplitOperator1D(grid, constants)
    energy = stepper.energy(phi, potential)
    for step in range(1, max_steps + 1):
        phi = half * fft.ifft(kinetic * fft.fft(half * phi))
        if mask is not None:
            phi = phi * mask
        phi = _normalise(phi, dx)
        if step % 20 == 0:
            new_energy = stepper.energy(phi, potential)
            if abs(new_energy - energy) <= tol * abs(new_energy):
                return phi, new_energy
            energy = new_energy
    logger.warning("Imaginary-time relaxation hit its step limit", extra={"steps": max_steps})
    return phi, energy


def ground_state_in_well(
    potential: np.ndarray,
    grid: SpatialGrid1D,
    which: str = "left",
    method: str = "diagonalize",
    gate_time: Optional[float] = None,
    relax_steps: int = 200,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Motional ground state of one well.

    `method="diagonalize"` forms the localised combination of the lowest
    doublet; `method="imaginary_time"` relaxes under a half-domain mask and
    then briefly without it.
    """
    if method == "diagonalize":
        return well_eigenstates(potential, grid, which, 0, gate_time=gate_time, constants=constants)[0]
    if method != "imaginary_time":
        raise ValueError(f"unknown ground-state method '{method}'")

    potential = np.asarray(potential, dtype=float)
    minima = local_minima(potential)
    if minima.size == 2:
        center = 0.5 * (grid.x[minima[0]] + grid.x[minima[1]])
        mask = (grid.x < center) if which == "left" else (grid.x > center)
        start = minima[0] if which == "left" else minima[1]
        # TunnelingError / DoubleWellError checks live with the doublet analysis
        well_eigenstates(potential, grid, which, 0, gate_time=gate_time, constants=constants)
    elif minima.size == 1:
        mask = None
        start = minima[0]
    else:
        raise DoubleWellError(f"potential has {minima.size} local minima, expected 1 or 2")

    omega = fit_minimum(grid, potential, int(start), constants.m_atom)[1]
    width = math.sqrt(constants.hbar / (constants.m_atom * omega))
    phi = np.exp(-0.5 * ((grid.x - grid.x[start]) / width) ** 2).astype(complex)
    dtau = 0.01 / omega
    phi, _ = _imaginary_time_1d(phi, potential, grid, dtau, constants,
                                mask=None if mask is None else mask.astype(float))
    if mask is not None and relax_steps > 0:
        phi, _ = _imaginary_time_1d(phi, potential, grid, dtau, constants, max_steps=relax_steps, tol=0.0)
    return _fix_sign(_normalise(phi, grid.spacing))


def two_particle_energy(psi: np.ndarray, u1: np.ndarray, u2: np.ndarray, v_int: Optional[np.ndarray],
                        grid: SpatialGrid1D, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """<H> of a two-particle state with contact term `v_int` (diagonal (n,) or kernel (n, n))."""
    dx2 = grid.spacing ** 2
    kinetic_1 = _kinetic_energies(grid, constants)
    density = np.abs(psi) ** 2
    norm = float(np.sum(density) * dx2)
    weights = np.abs(fft.fft2(psi)) ** 2
    kinetic = float(np.sum(weights * (kinetic_1[:, None] + kinetic_1[None, :])) / np.sum(weights))
    potential = float(np.sum(density * (u1[:, None] + u2[None, :])) * dx2)
    if v_int is not None:
        if v_int.ndim == 1:
            potential += float(np.sum(v_int * np.diagonal(density)) * dx2)
        else:
            potential += float(np.sum(v_int * density) * dx2)
    return kinetic + potential / norm


def two_particle_ground_state(
    u1: np.ndarray,
    u2: np.ndarray,
    grid: SpatialGrid1D,
    g1d: Union[float, np.ndarray] = 0.0,
    dtau: Optional[float] = None,
    tol: float = 1e-12,
    max_steps: int = 50000,
    initial: Optional[np.ndarray] = None,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> tuple:
    """Imaginary-time ground state of two atoms; returns (TwoParticleState, energy in J)."""
    hbar = constants.hbar
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    dx = grid.spacing
    v_int = np.broadcast_to(np.asarray(g1d, dtype=float), (grid.n_points,)) / dx
    if not np.any(v_int):
        v_int = None

    if initial is None:
        phi_1 = well_eigenstates(u1, grid, "left", 0, constants=constants)[0]
        phi_2 = well_eigenstates(u2, grid, "right", 0, constants=constants)[0]
        psi = np.outer(phi_1, phi_2)
        if np.array_equal(u1, u2):
            psi = psi + psi.T
    else:
        psi = np.array(initial, dtype=complex)
    psi = psi / math.sqrt(float(np.sum(np.abs(psi) ** 2)) * dx * dx)

    if dtau is None:
        dtau = 0.01 / _harmonic_estimate(u1, grid, constants.m_atom)
    kinetic_1 = _kinetic_energies(grid, constants)
    kinetic = np.exp(-(kinetic_1[:, None] + kinetic_1[None, :]) * dtau / hbar)
    shift = u1.min() + u2.min()
    half = np.outer(np.exp(-0.5 * (u1 - u1.min()) * dtau / hbar), np.exp(-0.5 * (u2 - u2.min()) * dtau / hbar))
    diag = np.arange(grid.n_points)
    contact_half = None if v_int is None else np.exp(-0.5 * v_int * dtau / hbar)

    energy = two_particle_energy(psi, u1, u2, v_int, grid, constants)
    for step in range(1, max_steps + 1):
        psi = psi * half
        if contact_half is not None:
            psi[diag, diag] *= contact_half
        psi = fft.ifft2(kinetic * fft.fft2(psi))
        if contact_half is not None:
            psi[diag, diag] *= contact_half
        psi *= half
        psi /= math.sqrt(float(np.sum(np.abs(psi) ** 2)) * dx * dx)
        if step % 20 == 0:
            new_energy = two_particle_energy(psi, u1, u2, v_int, grid, constants)
            if abs(new_energy - energy) <= tol * abs(new_energy - shift):
                energy = new_energy
                break
            energy = new_energy
    else:
        logger.warning("Two-particle relaxation hit its step limit", extra={"steps": max_steps})
    return TwoParticleState(grid, psi), energy


def centered_grid(n_points: int, spacing: float) -> SpatialGrid1D:
    """Grid with a sample at exactly 0: x = (-n/2 .. n/2 - 1) * spacing."""
    if n_points < 8 or n_points % 2:
        raise GridError("centered grid needs an even number of at least 8 points")
    return SpatialGrid1D(-0.5 * n_points * spacing, (0.5 * n_points - 1) * spacing, n_points)


def relative_motion_energies(
    omega: float,
    g1d: float,
    grid: SpatialGrid1D,
    n_levels: int = 1,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Lowest relative-motion energies of two atoms in a harmonic well with contact term g1d/dr at r = 0."""
    zero = int(np.argmin(np.abs(grid.x)))
    if abs(grid.x[zero]) > 1e-9 * grid.spacing:
        raise GridError("relative-coordinate grid must contain r = 0")
    reduced_mass = 0.5 * constants.m_atom
    potential = 0.5 * reduced_mass * omega ** 2 * np.asarray(grid.x) ** 2
    potential[zero] += g1d / grid.spacing
    hamiltonian = fourier_grid_hamiltonian(potential, grid, reduced_mass, constants)
    return eigh(hamiltonian, eigvals_only=True, subset_by_index=[0, n_levels - 1])


# ---------------------------------------------------------------------------
# Branch propagation
# ---------------------------------------------------------------------------


@dataclass
class BranchTrajectory:
    """Time series of one basis branch; arrays have n_steps + 1 samples unless noted."""

    label: str
    overlap: np.ndarray
    reference_overlap: np.ndarray
    norm: np.ndarray
    separation: np.ndarray
    kinetic_1: np.ndarray
    substeps: np.ndarray  # n_steps
    final: TwoParticleState
    reference_final: tuple
    checkpoints: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ReferencePair:
    """Non-interacting reference psi0 = N (a(x1) b(x2) [+ b(x1) a(x2)])."""

    phi_a: np.ndarray
    phi_b: np.ndarray
    symmetric: bool

    def normalisation(self, dx: float) -> float:
        direct = float(np.sum(np.abs(self.phi_a) ** 2) * np.sum(np.abs(self.phi_b) ** 2)) * dx * dx
        if not self.symmetric:
            return 1.0 / math.sqrt(direct)
        cross = abs(np.vdot(self.phi_a, self.phi_b) * dx) ** 2
        return 1.0 / math.sqrt(2.0 * (direct + cross))


def _reference_overlap(psi: np.ndarray, phi_a: np.ndarray, phi_b: np.ndarray, symmetric: bool,
                       norm: float, dx: float) -> complex:
    conj = psi.conj()
    value = phi_a @ conj @ phi_b
    if symmetric:
        value += phi_b @ conj @ phi_a
    return complex(norm * value * dx * dx)


def checkpoint_indices(time_grid: TimeGrid, period: Optional[float] = None) -> list:
    """t = 0, every quarter period, and the final step."""
    indices = {0, time_grid.n_steps}
    if period:
        quarter = period / 4.0
        count = int(round(time_grid.duration / quarter))
        for q in range(1, count):
            indices.add(int(round(q * quarter / time_grid.dt)))
    return sorted(i for i in indices if 0 <= i <= time_grid.n_steps)


def propagate(
    state: TwoParticleState,
    stepper: TwoParticleStepper,
    reference: Optional[ReferencePair] = None,
    checkpoints: Sequence[int] = (),
    label: str = "",
) -> BranchTrajectory:
    """Propagate one branch and record overlaps, norm and collision diagnostics."""
    grid = state.grid
    dx = grid.spacing
    dx2 = dx * dx
    time_grid = stepper.time_grid
    n_steps = time_grid.n_steps
    track = stepper.settings.track_diagnostics

    psi_initial = np.array(state.amplitudes)
    psi = psi_initial.copy()
    overlap = np.empty(n_steps + 1, dtype=complex)
    reference_overlap = np.full(n_steps + 1, np.nan + 0j)
    norms = np.empty(n_steps + 1)
    separation = np.full(n_steps + 1, np.nan)
    kinetic_1 = np.full(n_steps + 1, np.nan)
    substeps = np.ones(n_steps, dtype=int)
    stored: dict = {}
    wanted = set(checkpoints)
    abs_separation = np.abs(grid.x[:, None] - grid.x[None, :]) if track else None

    if reference is not None:
        single = SplitOperator1D(grid, stepper.constants, stepper.settings.max_step_phase)
        phi_a = np.asarray(reference.phi_a, dtype=complex)
        phi_b = np.asarray(reference.phi_b, dtype=complex)
        ref_norm = reference.normalisation(dx)

    def record(index: int, current: np.ndarray) -> None:
        density = np.abs(current) ** 2
        norms[index] = float(np.sum(density) * dx2)
        overlap[index] = complex(np.vdot(current, psi_initial) * dx2)
        if reference is not None:
            reference_overlap[index] = _reference_overlap(current, phi_a, phi_b, reference.symmetric, ref_norm, dx)
        if track:
            separation[index] = float(np.sum(density * abs_separation) * dx2)
        if index in wanted:
            stored[index] = current.copy()

    record(0, psi)
    if track:
        weights = np.abs(fft.fft2(psi)) ** 2
        kinetic_1[0] = float(np.sum(weights * stepper.kinetic_1[:, None]) / np.sum(weights))

    for k in range(n_steps):
        psi, substeps[k], kinetic_1[k + 1] = stepper.step(psi, k, want_kinetic=track)
        if reference is not None:
            phi_a = single.step(phi_a, stepper.potential_1(k), time_grid.dt)
            phi_b = single.step(phi_b, stepper.potential_2(k), time_grid.dt)
        record(k + 1, psi)
        if k + 1 in wanted and k + 1 != n_steps:
            logger.debug(
                "Branch checkpoint",
                extra={"branch": label, "step": k + 1, "norm": norms[k + 1], "substeps": int(substeps[k])},
            )

    if np.max(np.abs(norms - 1.0)) > 1e-8:
        logger.warning("Norm drift above 1e-8", extra={"branch": label, "drift": float(np.max(np.abs(norms - 1.0)))})
    final = TwoParticleState(grid, psi / math.sqrt(norms[-1]))
    reference_final = (phi_a, phi_b) if reference is not None else ()
    return BranchTrajectory(
        label=label,
        overlap=overlap,
        reference_overlap=reference_overlap,
        norm=norms,
        separation=separation,
        kinetic_1=kinetic_1,
        substeps=substeps,
        final=final,
        reference_final=reference_final,
        checkpoints=stored,
    )


@dataclass
class GateTrajectory:
    time_grid: TimeGrid
    branches: dict
    initial: dict
    interaction: InteractionSpec
    motional: tuple = (0, 0)

    def branch(self, label: str) -> BranchTrajectory:
        return self.branches[label]

    def final_states(self) -> dict:
        return {label: branch.final for label, branch in self.branches.items()}


@dataclass(frozen=True)
class InitialWellStates:
    """Motional states of atom 1 (left well) and atom 2 (right well) per internal state."""

    left: dict
    right: dict


def prepare_well_states(
    potentials: PotentialSet,
    controls: ControlWaveforms,
    n_max: int = 0,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> InitialWellStates:
    """Localised well states of the initial potential for both internal states."""
    lam_start = float(controls.lam.values[0])
    lam0_start = None if controls.lam0 is None else float(controls.lam0.values[0])
    gate_time = controls.time_grid.duration
    left, right = {}, {}
    cache: dict = {}
    for i in (0, 1):
        potential = potentials.potential(i, lam_start, lam0_start)
        key = potential.tobytes()
        if key not in cache:
            cache[key] = (
                well_eigenstates(potential, potentials.grid, "left", n_max, gate_time=gate_time, constants=constants),
                well_eigenstates(potential, potentials.grid, "right", n_max, gate_time=gate_time, constants=constants),
            )
        left[i], right[i] = cache[key]
    return InitialWellStates(left, right)


def branch_setup(
    label: str,
    potentials: PotentialSet,
    controls: ControlWaveforms,
    interaction: InteractionSpec,
    wells: InitialWellStates,
    motional: tuple = (0, 0),
    settings: PropagationSettings = PropagationSettings(),
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> tuple:
    """(initial state, stepper, reference) for branch `label` = "ij"."""
    i, j = int(label[0]), int(label[1])
    n1, n2 = motional
    grid = potentials.grid
    lam = controls.lam_intervals()
    lam0 = controls.lam0_intervals()
    potential_1 = StepPotential(potentials, i, lam, lam0)
    potential_2 = StepPotential(potentials, j, lam, lam0)
    contact = None
    a_s = interaction.scattering_length(i, j)
    if interaction.enabled and a_s > 0:
        contact = ContactTerm(grid, a_s, potentials.omega_perp, interaction.regularization,
                              interaction.symmetric_omega, constants)
    stepper = TwoParticleStepper(grid, potential_1, potential_2, controls.time_grid, contact,
                                 controls.omega_intervals(), settings, constants)
    phi_a = wells.left[i][n1]
    phi_b = wells.right[j][n2]
    symmetric = i == j
    state = TwoParticleState.product(grid, phi_a, phi_b, symmetric=symmetric)
    return state, stepper, ReferencePair(phi_a, phi_b, symmetric)


def simulate_gate(
    potentials: PotentialSet,
    controls: ControlWaveforms,
    interaction: InteractionSpec = InteractionSpec(),
    settings: PropagationSettings = PropagationSettings(),
    motional: tuple = (0, 0),
    wells: Optional[InitialWellStates] = None,
    branches: Sequence[str] = BRANCHES,
    checkpoints: Sequence[int] = (),
    jobs: int = 1,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> GateTrajectory:
    """Run the basis branches of the gate; branches are independent and run in threads."""
    if wells is None:
        wells = prepare_well_states(potentials, controls, max(motional), constants)

    def run(label: str) -> tuple:
        state, stepper, reference = branch_setup(
            label, potentials, controls, interaction, wells, motional, settings, constants
        )
        return label, state, propagate(state, stepper, reference, checkpoints, label)

    logger.info(
        "Simulating gate",
        extra={"branches": ",".join(branches), "n_steps": controls.time_grid.n_steps,
               "motional": f"{motional[0]},{motional[1]}", "jobs": jobs},
    )
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, branches))
    else:
        results = [run(label) for label in branches]

    return GateTrajectory(
        time_grid=controls.time_grid,
        branches={label: trajectory for label, _, trajectory in results},
        initial={label: state for label, state, _ in results},
        interaction=interaction,
        motional=tuple(motional),
    )


# ---------------------------------------------------------------------------
# Overlaps, phases and diagnostics
# ---------------------------------------------------------------------------


@dataclass
class GateSeries:
    times: np.ndarray
    overlaps: dict
    fidelities: dict
    phases: dict
    reliable: dict
    phi_g: np.ndarray
    norms: dict

    csv_header = ("t", "F_00", "F_01", "F_10", "F_11", "phi_g",
                  "norm_00", "norm_01", "norm_10", "norm_11")

    def csv_rows(self) -> list:
        rows = []
        for index, t in enumerate(self.times):
            row = [float(t)]
            row += [float(self.fidelities[b][index]) if b in self.fidelities else float("nan") for b in BRANCHES]
            row.append(float(self.phi_g[index]))
            row += [float(self.norms[b][index]) if b in self.norms else float("nan") for b in BRANCHES]
            rows.append(tuple(row))
        return rows

    def final(self) -> dict:
        result = {"phi_g": float(self.phi_g[-1])}
        for label in self.overlaps:
            result[f"F_{label}"] = float(self.fidelities[label][-1])
            result[f"phi_{label}"] = float(self.phases[label][-1])
        return result


def overlaps_and_phases(trajectory: GateTrajectory) -> GateSeries:
    """O_ij, F_ij = |O_ij|^2, phi_ij = arg<psi_ij|psi0_ij> (unwrapped), phi_g."""
    overlaps, fidelities, phases, reliable, norms = {}, {}, {}, {}, {}
    for label, branch in trajectory.branches.items():
        overlaps[label] = branch.overlap
        fidelities[label] = np.abs(branch.overlap) ** 2
        magnitude = np.abs(branch.reference_overlap)
        ok = magnitude >= UNRELIABLE_OVERLAP
        if not np.all(ok):
            logger.warning(
                "Phase unreliable where the reference overlap is small",
                extra={"branch": label, "samples": int(np.count_nonzero(~ok))},
            )
        phases[label] = np.unwrap(np.angle(branch.reference_overlap))
        reliable[label] = ok
        norms[label] = branch.norm
    if all(label in phases for label in BRANCHES):
        phi_g = phases["11"] + phases["00"] - phases["01"] - phases["10"]
    else:
        phi_g = np.full(trajectory.time_grid.n_steps + 1, np.nan)
    return GateSeries(np.array(trajectory.time_grid.times), overlaps, fidelities, phases, reliable, phi_g, norms)


def phase_steps(times: np.ndarray, phi_g: np.ndarray, rel_threshold: float = 0.2,
                min_gap: Optional[int] = None) -> np.ndarray:
    """Indices of the step-like increases of phi_g (peaks of its time derivative)."""
    rate = np.gradient(np.asarray(phi_g), np.asarray(times))
    if not np.any(rate > 0):
        return np.array([], dtype=int)
    threshold = rel_threshold * rate.max()
    peaks = np.where((rate[1:-1] >= rate[:-2]) & (rate[1:-1] > rate[2:]) & (rate[1:-1] > threshold))[0] + 1
    if min_gap is None or peaks.size == 0:
        return peaks
    kept = [int(peaks[0])]
    for index in peaks[1:]:
        if index - kept[-1] >= min_gap:
            kept.append(int(index))
        elif rate[index] > rate[kept[-1]]:
            kept[-1] = int(index)
    return np.array(kept, dtype=int)


def collision_indices(branch: BranchTrajectory, window: Optional[tuple] = None,
                      times: Optional[np.ndarray] = None) -> np.ndarray:
    """Local minima of the mean atom separation inside the time window."""
    separation = branch.separation
    if np.all(np.isnan(separation)):
        raise DiagnosticError(f"branch {branch.label} was propagated without diagnostics")
    minima = np.where((separation[1:-1] < separation[:-2]) & (separation[1:-1] <= separation[2:]))[0] + 1
    if window is not None:
        if times is None:
            raise DiagnosticError("a time window needs the sample times")
        start, end = window
        minima = minima[(times[minima] >= start) & (times[minima] <= end)]
    return minima


def kinetic_energy_estimate(
    trajectory: GateTrajectory,
    branch: str = "11",
    window: Optional[tuple] = None,
    at_collisions: bool = True,
) -> float:
    """Single-atom kinetic energy at the collisions (largest value in the window), J."""
    data = trajectory.branch(branch)
    times = np.asarray(trajectory.time_grid.times)
    if not at_collisions:
        mask = np.ones(times.size, dtype=bool)
        if window is not None:
            mask = (times >= window[0]) & (times <= window[1])
        return float(np.nanmean(data.kinetic_1[mask]))
    indices = collision_indices(data, window, times)
    if indices.size == 0:
        raise DiagnosticError(f"no collision detected in branch {branch} for window {window}")
    return float(np.max(data.kinetic_1[indices]))


def a1d_energy_ratio(e_kin: float, omega_perp: float, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """E_kin / (hbar omega_perp); a_1D is treated as energy independent."""
    ratio = e_kin / (constants.hbar * omega_perp)
    logger.warning(
        "1D scattering length assumed energy independent; ratio reported, not corrected",
        extra={"e_kin_over_hbar_omega_perp": ratio},
    )
    return ratio


def omega_waveform(grid: TimeGrid, values: np.ndarray) -> Waveform:
    return Waveform(grid, values, ANGULAR_UNIT)
