"""
Error-budget calculators that need no full dynamics.

Breit-Rabi differential moment, dephasing time, surface loss, two-photon
suppression, scattering-length admixture and the quasi-1D checks, collected
into an ErrorBudget that is exported with the gate report.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from chipgate.constants import (
    CURRENT_ACCURACY,
    FIELD_ACCURACY,
    FIELD_NOISE_RMS,
    LARGE_DETUNING_WARN,
    NUCLEAR_SPIN,
    PERTURBATION_LIMIT,
    QUASI1D_HEADROOM,
    RELATIVE_CURRENT_STABILITY,
    SCATTERING_LENGTH,
    SCATTERING_LENGTH_CONTRAST,
    SURFACE_LOSS_RATE,
    TRAP_FIELD_G,
)
from chipgate.exceptions import PerturbationError
from chipgate.potentials import PotentialSet, TransitionCoupling
from chipgate.units import DEFAULT_CONSTANTS, GAUSS, PhysicalConstants

logger = logging.getLogger(__name__)

BREIT_RABI_LIMIT = 100 * GAUSS
QUBIT_STATES = ((1, -1), (2, 1))


# ---------------------------------------------------------------------------
# Breit-Rabi
# ---------------------------------------------------------------------------


def _check_field(b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if np.any(b < 0) or np.any(b >= BREIT_RABI_LIMIT):
        raise ValueError("Breit-Rabi evaluation needs 0 <= B < 100 G")
    return b


def _x(b, constants: PhysicalConstants):
    delta_e = constants.hbar * constants.omega_hfs
    return (constants.g_J - constants.g_I) * constants.mu_B * b / delta_e


def _level_energy(F: int, m: int, b, constants: PhysicalConstants):
    delta_e = constants.hbar * constants.omega_hfs
    n = 2 * NUCLEAR_SPIN + 1
    x = _x(b, constants)
    linear = -delta_e / (2 * n) + constants.g_I * constants.mu_B * m * b
    if abs(m) == NUCLEAR_SPIN + 0.5:
        # stretched states: the root is exactly 1 + sign(m) x
        return linear + 0.5 * delta_e * (1 + math.copysign(1.0, m) * x)
    sign = 1.0 if F == 2 else -1.0
    return linear + sign * 0.5 * delta_e * np.sqrt(1 + 4 * m * x / n + x**2)


def _level_slope(F: int, m: int, b, constants: PhysicalConstants):
    """dE(F, m)/dB in J/T."""
    delta_g = constants.g_J - constants.g_I
    n = 2 * NUCLEAR_SPIN + 1
    x = _x(b, constants)
    linear = constants.g_I * constants.mu_B * m
    if abs(m) == NUCLEAR_SPIN + 0.5:
        return linear + 0.5 * math.copysign(1.0, m) * delta_g * constants.mu_B + np.zeros_like(x)
    sign = 1.0 if F == 2 else -1.0
    return linear + sign * 0.25 * delta_g * constants.mu_B * (4 * m / n + 2 * x) / np.sqrt(1 + 4 * m * x / n + x**2)


def breit_rabi_energies(b: float, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> dict:
    """Energies (J) of all eight ground-state sublevels keyed by (F, m_F)."""
    b = float(_check_field(b))
    energies = {}
    for F in (1, 2):
        for m in range(-F, F + 1):
            energies[(F, m)] = float(_level_energy(F, m, b, constants))
    return energies


def qubit_splitting(b, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """E(|2,+1>) - E(|1,-1>)."""
    b = _check_field(b)
    (F0, m0), (F1, m1) = QUBIT_STATES
    return _level_energy(F1, m1, b, constants) - _level_energy(F0, m0, b, constants)


def differential_moment(b, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """delta_mu(B) = d(E_1 - E_0)/dB in J/T; vectorised over B."""
    b = _check_field(b)
    (F0, m0), (F1, m1) = QUBIT_STATES
    return _level_slope(F1, m1, b, constants) - _level_slope(F0, m0, b, constants)


def differential_moment_root(
    b_range: tuple = (0.0, 6 * GAUSS),
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> float:
    """Field (T) where the qubit splitting is first-order insensitive to B."""
    low, high = b_range
    f_low = float(differential_moment(low, constants))
    f_high = float(differential_moment(high, constants))
    if f_low * f_high > 0:
        raise ValueError(f"differential moment does not change sign in [{low}, {high}] T")
    return float(brentq(lambda b: float(differential_moment(b, constants)), low, high, xtol=1e-12))


# ---------------------------------------------------------------------------
# Individual estimates
# ---------------------------------------------------------------------------


def mw_moment_shift(omega_rabi: float, delta: float, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Differential magnetic moment induced by the dressing, (Omega^2 / 4 Delta^2) mu_B."""
    if delta == 0:
        raise PerturbationError("microwave detuning is zero")
    ratio = abs(omega_rabi / delta)
    if ratio >= PERTURBATION_LIMIT:
        raise PerturbationError(
            f"|Omega/Delta| = {ratio:.3g} is outside the perturbative regime (< {PERTURBATION_LIMIT})"
        )
    return 0.25 * ratio**2 * constants.mu_B


def dephasing_time(delta_mu: float, delta_b: float, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """tau_c = hbar / (delta_mu delta_B); infinite when either factor vanishes."""
    if delta_mu < 0 or delta_b < 0:
        raise ValueError("delta_mu and delta_B must be non-negative")
    if delta_mu == 0 or delta_b == 0:
        return math.inf
    return constants.hbar / (delta_mu * delta_b)


def surface_loss_error(rate: float, tau_g: float) -> float:
    if rate < 0:
        raise ValueError("surface loss rate must be non-negative")
    return -math.expm1(-rate * tau_g)


def surface_lifetime(rate: float) -> float:
    return math.inf if rate == 0 else 1.0 / rate


@dataclass(frozen=True)
class TwoPhotonEstimate:
    omega_2ph: float
    delta_2ph: float
    ratio: float


def two_photon_suppression(
    omega_r1: float,
    omega_r2: float,
    delta: float,
    b0: float,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> TwoPhotonEstimate:
    """Omega_2ph = Omega_1 Omega_2 / 2 Delta against Delta_2ph = mu_B B0 / 2 hbar."""
    if b0 == 0:
        raise PerturbationError("two-photon detuning is undefined at zero trap field")
    if delta == 0:
        raise PerturbationError("microwave detuning is zero")
    omega_2ph = omega_r1 * omega_r2 / (2 * delta)
    delta_2ph = constants.mu_B * b0 / (2 * constants.hbar)
    return TwoPhotonEstimate(abs(omega_2ph), delta_2ph, (omega_2ph / delta_2ph) ** 2)


def scattering_length_shift(omega_rabi: float, delta: float, a_11: float, a_01: float) -> float:
    """delta a_s ~ (Omega^2 / 2 Delta^2)(a_11 - a_01)."""
    if delta == 0:
        raise PerturbationError("microwave detuning is zero")
    return 0.5 * (omega_rabi / delta) ** 2 * (a_11 - a_01)


@dataclass(frozen=True)
class Quasi1DVerdict:
    ratio: float
    passed: bool
    within_headroom: bool

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "passed": self.passed, "within_headroom": self.within_headroom}


def quasi1d_check(e_kin: float, omega_perp: float, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> Quasi1DVerdict:
    """2 E_kin / hbar omega_perp; transverse excitation is suppressed below 1."""
    ratio = 2.0 * e_kin / (constants.hbar * omega_perp)
    return Quasi1DVerdict(ratio, ratio < 1.0, ratio <= QUASI1D_HEADROOM)


def large_detuning_check(source: Union[PotentialSet, Sequence[TransitionCoupling]]) -> float:
    """Largest |Omega / Delta|^2 over space and transitions."""
    couplings = source.couplings if isinstance(source, PotentialSet) else source
    worst = max((c.max_ratio_sq for c in couplings), default=0.0)
    if worst > LARGE_DETUNING_WARN:
        logger.warning("Large-detuning condition violated", extra={"max_ratio_sq": worst})
    return worst


def drive_scales(couplings: Sequence[TransitionCoupling]) -> Optional[tuple]:
    """(Omega_1, Omega_2, Delta) for the qubit-state two-photon path, worst case over the grid.

    Omega_1 is the strongest coupling out of |1,-1>, Omega_2 the strongest into
    |2,+1>, Delta the smallest detuning among them.
    """
    first = [c for c in couplings if c.m1 == QUBIT_STATES[0][1]]
    second = [c for c in couplings if c.m2 == QUBIT_STATES[1][1]]
    if not first or not second:
        return None
    omega_1 = max(float(np.max(np.abs(c.omega))) for c in first)
    omega_2 = max(float(np.max(np.abs(c.omega))) for c in second)
    delta = min(float(np.min(np.abs(c.delta))) for c in first + second)
    return omega_1, omega_2, delta


# ---------------------------------------------------------------------------
# Budget
# ---------------------------------------------------------------------------


@dataclass
class BudgetEntry:
    name: str
    value: float
    formula: str
    inputs: dict = field(default_factory=dict)
    kind: str = "error"  # error | ratio | metadata

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "formula": self.formula,
                "inputs": dict(self.inputs), "kind": self.kind}


@dataclass
class ErrorBudget:
    entries: list = field(default_factory=list)

    def add(self, entry: BudgetEntry) -> None:
        self.entries.append(entry)

    def get(self, name: str) -> BudgetEntry:
        for entry in self.entries:
            if entry.name == name:
                return entry
        raise KeyError(name)

    @property
    def aggregate(self) -> float:
        """1 - prod(1 - e_k) over the probability-type entries."""
        survival = 1.0
        for entry in self.entries:
            if entry.kind == "error":
                survival *= 1.0 - entry.value
        return 1.0 - survival

    def to_dict(self) -> dict:
        return {"entries": [entry.to_dict() for entry in self.entries], "aggregate": self.aggregate}


def assemble_error_budget(
    tau_g: float,
    potentials: Optional[PotentialSet] = None,
    e_kin: Optional[float] = None,
    omega_perp: Optional[float] = None,
    a1d_ratio: Optional[float] = None,
    surface_rate: float = SURFACE_LOSS_RATE,
    field_noise: float = FIELD_NOISE_RMS,
    b0: float = TRAP_FIELD_G * GAUSS,
    scattering_length: float = SCATTERING_LENGTH,
    contrast: float = SCATTERING_LENGTH_CONTRAST,
    noise_amplitude: Optional[float] = None,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> ErrorBudget:
    """Collect every estimate that applies to the given inputs."""
    budget = ErrorBudget()
    budget.add(BudgetEntry(
        "surface_loss", surface_loss_error(surface_rate, tau_g), "1 - exp(-Gamma_s tau_g)",
        {"Gamma_s": surface_rate, "tau_g": tau_g, "tau_t": surface_lifetime(surface_rate)},
    ))

    static_mu = abs(float(differential_moment(b0, constants)))
    drive_mu = 0.0
    scales = drive_scales(potentials.couplings) if potentials is not None else None
    if scales is not None:
        omega_1, omega_2, delta = scales
        omega_max = max(omega_1, omega_2)
        drive_mu = mw_moment_shift(omega_max, delta, constants)
        two_photon = two_photon_suppression(omega_1, omega_2, delta, b0, constants)
        budget.add(BudgetEntry(
            "two_photon", two_photon.ratio, "(Omega_1 Omega_2 / 2 Delta)^2 / (mu_B B0 / 2 hbar)^2",
            {"Omega_1": omega_1, "Omega_2": omega_2, "Delta": delta, "B0": b0,
             "Delta_2ph": two_photon.delta_2ph}, kind="ratio",
        ))
        shift = scattering_length_shift(omega_max, delta, scattering_length, scattering_length * (1 - contrast))
        budget.add(BudgetEntry(
            "scattering_length_shift", shift / scattering_length, "(Omega^2 / 2 Delta^2)(a_11 - a_01) / a_11",
            {"Omega": omega_max, "Delta": delta, "a_11": scattering_length, "contrast": contrast}, kind="ratio",
        ))
        budget.add(BudgetEntry(
            "large_detuning", large_detuning_check(potentials), "max |Omega / Delta|^2", {}, kind="ratio",
        ))

    delta_mu = static_mu + drive_mu
    tau_c = dephasing_time(delta_mu, field_noise, constants)
    dephasing = 0.0 if math.isinf(tau_c) else -math.expm1(-tau_g / tau_c)
    budget.add(BudgetEntry(
        "dephasing", dephasing, "1 - exp(-tau_g / tau_c), tau_c = hbar / (delta_mu delta_B)",
        {"delta_mu_static": static_mu, "delta_mu_drive": drive_mu, "delta_B": field_noise,
         "B0": b0, "tau_c": tau_c},
    ))

    if e_kin is not None and omega_perp is not None:
        verdict = quasi1d_check(e_kin, omega_perp, constants)
        budget.add(BudgetEntry(
            "quasi1d", verdict.ratio, "2 E_kin / hbar omega_perp",
            {"E_kin": e_kin, "omega_perp": omega_perp, **verdict.to_dict()}, kind="ratio",
        ))
    if a1d_ratio is not None:
        budget.add(BudgetEntry("a1d_energy", a1d_ratio, "E_kin / hbar omega_perp", {}, kind="ratio"))

    technical = {
        "relative_current_stability": RELATIVE_CURRENT_STABILITY,
        "current_accuracy_A": CURRENT_ACCURACY,
        "field_accuracy_T": FIELD_ACCURACY,
    }
    if noise_amplitude is not None:
        technical["control_noise_amplitude"] = noise_amplitude
    budget.add(BudgetEntry("technical_noise", 0.0, "assumed stability, not simulated", technical, kind="metadata"))

    logger.info("Error budget assembled", extra={"aggregate": budget.aggregate, "entries": len(budget.entries)})
    return budget
