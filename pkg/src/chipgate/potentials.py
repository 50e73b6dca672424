"""
State-dependent potentials U_i(x, t) = u_c(x) + lambda(t) u_i(x).

Static Zeeman trapping, microwave dressing of the two qubit states in the
large-detuning limit, the electric Stark term, the compensation ramps, and an
analytic model double well for runs without a chip layout.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from chipgate.chipfields import (
    ChipLayout,
    CPWResult,
    TrapGeometry,
    apply_compensation,
    mw_field_at,
    total_static_field,
)
from chipgate.constants import (
    COMPENSATION_BX_OFFSET_G,
    COMPENSATION_BX_SLOPE_G,
    COMPENSATION_IC_OFFSET_MA,
    COMPENSATION_IC_SLOPE_MA,
    DRIVE_CURRENT_PEAK,
    DRIVE_VOLTAGE_PEAK,
    LARGE_DETUNING_WARN,
    NUCLEAR_SPIN,
    PERTURBATION_LIMIT,
)
from chipgate.exceptions import (
    CalibrationError,
    ConfigError,
    DoubleWellError,
    PerturbationError,
    QuantizationAxisError,
)
from chipgate.units import (
    DEFAULT_CONSTANTS,
    GAUSS,
    MILLIAMP,
    PhysicalConstants,
    SpatialGrid1D,
    Waveform,
)
from chipgate.utils import to_builtin

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperfineLevel:
    F: int
    m_F: int

    def __post_init__(self) -> None:
        if self.F not in (1, 2):
            raise ValueError(f"F must be 1 or 2 (got {self.F})")
        if abs(self.m_F) > self.F:
            raise ValueError(f"|m_F| must not exceed F (got m_F={self.m_F})")


QUBIT_0 = HyperfineLevel(1, -1)
QUBIT_1 = HyperfineLevel(2, 1)
QUBIT_LEVELS = (QUBIT_0, QUBIT_1)


def zeeman_potential(b_abs, level: HyperfineLevel, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Linear Zeeman shift mu_B g_F m_F |B0|."""
    return constants.mu_B * constants.g_F(level.F) * level.m_F * np.asarray(b_abs)


def hyperfine_lande(F: int, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """g_F including the nuclear moment (I = 3/2, J = 1/2)."""
    I, J = NUCLEAR_SPIN, 0.5
    ff, ii, jj = F * (F + 1), I * (I + 1), J * (J + 1)
    return (
        constants.g_J * (ff - ii + jj) / (2 * ff)
        + constants.g_I * (ff + ii - jj) / (2 * ff)
    )


# ---------------------------------------------------------------------------
# Microwave coupling
# ---------------------------------------------------------------------------


def local_polarization_decompose(b_mw, b0_direction) -> tuple:
    """Split microwave amplitudes into (pi, sigma+, sigma-) parts about the local B0 axis.

    With e3 along B0 and (e1, e2, e3) right-handed, b_sigma+- = (b1 -+ i b2)/sqrt(2)
    so that J.B = J_z b_pi + (J_+ b_sigma+ + J_- b_sigma-)/sqrt(2).
    """
    b_mw = np.asarray(b_mw, dtype=complex)
    direction = np.asarray(b0_direction, dtype=float)
    norm = np.linalg.norm(direction, axis=-1, keepdims=True)
    if np.any(norm < 1e-300):
        raise QuantizationAxisError("static field vanishes; quantization axis undefined")
    e3 = direction / norm
    reference = np.where(np.abs(e3[..., :1]) > 0.9, np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    e1 = reference - np.sum(reference * e3, axis=-1, keepdims=True) * e3
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(e3, e1)

    b_pi = np.sum(b_mw * e3, axis=-1)
    b1 = np.sum(b_mw * e1, axis=-1)
    b2 = np.sum(b_mw * e2, axis=-1)
    return b_pi, (b1 - 1j * b2) / math.sqrt(2), (b1 + 1j * b2) / math.sqrt(2)


def _hyperfine_state(F: int, m: int) -> dict:
    """|F, m> in the uncoupled |m_I, m_J> basis (Condon-Shortley phases)."""
    I = NUCLEAR_SPIN
    up, down = (m - 0.5, 0.5), (m + 0.5, -0.5)
    a = math.sqrt(max(I + m + 0.5, 0.0) / (2 * I + 1))
    b = math.sqrt(max(I - m + 0.5, 0.0) / (2 * I + 1))
    coefficients = {up: a, down: b} if F == 2 else {up: -b, down: a}
    return {key: value for key, value in coefficients.items() if abs(key[0]) <= I and value != 0.0}


def hyperfine_matrix_element(m1: int, m2: int) -> float:
    """<2, m2| J_q |1, m1> with J_q = J_z, J_+ or J_- as selected by m2 - m1."""
    delta_m = m2 - m1
    if abs(delta_m) > 1:
        return 0.0
    source = _hyperfine_state(1, m1)
    target = _hyperfine_state(2, m2)
    total = 0.0
    for (m_i, m_j), coefficient in source.items():
        if delta_m == 0:
            image, weight = (m_i, m_j), m_j
        elif delta_m == 1:
            image, weight = (m_i, 0.5), (1.0 if m_j < 0 else 0.0)
        else:
            image, weight = (m_i, -0.5), (1.0 if m_j > 0 else 0.0)
        total += target.get(image, 0.0) * weight * coefficient
    return total


def rabi_frequency(m1: int, m2: int, components: tuple, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Omega = g_J mu_B <2,m2| J.B_mw |1,m1> / hbar for one |1,m1> -> |2,m2> transition (rad/s)."""
    b_pi, b_plus, b_minus = (np.asarray(c, dtype=complex) for c in components)
    delta_m = m2 - m1
    if abs(delta_m) > 1:
        return np.zeros_like(b_pi)
    element = hyperfine_matrix_element(m1, m2)
    if delta_m == 0:
        amplitude = element * b_pi
    elif delta_m == 1:
        amplitude = element * b_plus / math.sqrt(2)
    else:
        amplitude = element * b_minus / math.sqrt(2)
    return constants.g_J * constants.mu_B * amplitude / constants.hbar


def transition_detuning(m1: int, m2: int, delta0: float, b_abs, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Delta = Delta_0 - (mu_B / 2 hbar)(m2 + m1)|B0|."""
    return delta0 - constants.mu_B / (2 * constants.hbar) * (m2 + m1) * np.asarray(b_abs)


@dataclass
class TransitionCoupling:
    m1: int
    m2: int
    omega: np.ndarray
    delta: np.ndarray

    @property
    def max_ratio_sq(self) -> float:
        return float(np.max(np.abs(self.omega) ** 2 / self.delta**2)) if self.omega.size else 0.0


def transition_couplings(
    level: HyperfineLevel,
    components: tuple,
    delta0: float,
    b_abs,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> list:
    """All dipole-allowed couplings of one level to the other hyperfine manifold."""
    couplings = []
    if level.F == 1:
        pairs = [(level.m_F, m2) for m2 in range(level.m_F - 1, level.m_F + 2) if abs(m2) <= 2]
    else:
        pairs = [(m1, level.m_F) for m1 in range(level.m_F - 1, level.m_F + 2) if abs(m1) <= 1]
    for m1, m2 in pairs:
        omega = np.asarray(rabi_frequency(m1, m2, components, constants))
        if not np.any(omega):
            continue
        delta = np.broadcast_to(transition_detuning(m1, m2, delta0, b_abs, constants), omega.shape)
        couplings.append(TransitionCoupling(m1, m2, omega, np.asarray(delta, dtype=float)))
    return couplings


def _check_large_detuning(couplings: Sequence[TransitionCoupling]) -> None:
    worst = max((c.max_ratio_sq for c in couplings), default=0.0)
    if math.sqrt(worst) >= PERTURBATION_LIMIT:
        raise PerturbationError(
            f"|Omega/Delta| = {math.sqrt(worst):.3f} reaches {PERTURBATION_LIMIT}; perturbative potentials invalid"
        )
    if worst > LARGE_DETUNING_WARN:
        logger.warning("Large-detuning ratio above 1e-2", extra={"max_ratio_sq": worst})


def _dressing_sum(couplings: Sequence[TransitionCoupling], shape, constants: PhysicalConstants):
    _check_large_detuning(couplings)
    total = np.zeros(shape)
    for coupling in couplings:
        total = total + np.abs(coupling.omega) ** 2 / coupling.delta
    return constants.hbar / 4.0 * total


def mw_potential_f1(m1: int, components: tuple, delta0: float, b_abs, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """V_mw of |1, m1>: (hbar/4) sum over m2 of |Omega|^2 / Delta."""
    couplings = transition_couplings(HyperfineLevel(1, m1), components, delta0, b_abs, constants)
    return _dressing_sum(couplings, np.shape(components[0]), constants)


def mw_potential_f2(m2: int, components: tuple, delta0: float, b_abs, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """V_mw of |2, m2>: -(hbar/4) sum over m1 of |Omega|^2 / Delta."""
    couplings = transition_couplings(HyperfineLevel(2, m2), components, delta0, b_abs, constants)
    return -_dressing_sum(couplings, np.shape(components[0]), constants)


def electric_mw_potential(e_mw, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Time-averaged Stark shift -(alpha/4)|E_mw|^2; E given as magnitude or (..., 3) vector."""
    e_mw = np.asarray(e_mw)
    intensity = np.sum(np.abs(e_mw) ** 2, axis=-1) if e_mw.ndim and e_mw.shape[-1] == 3 else np.abs(e_mw) ** 2
    return -constants.alpha_dc / 4.0 * intensity


def drive_amplitudes(
    lam: float,
    v0_peak: float = DRIVE_VOLTAGE_PEAK,
    z_abs: Optional[float] = None,
    i0_peak: float = DRIVE_CURRENT_PEAK,
) -> tuple:
    """(|V0|, |I0|) at modulation lam; |I0| = |V0|/|Z_c| when an impedance is given."""
    if lam < 0:
        raise ValueError("modulation must be non-negative")
    v0 = math.sqrt(lam) * v0_peak
    i0 = v0 / z_abs if z_abs else math.sqrt(lam) * i0_peak
    return v0, i0


@dataclass(frozen=True)
class CompensationRamps:
    """B_x(t) and I_C(t) following lambda_0(t) (SI)."""

    lambda0: Waveform

    def bias_x(self, t: float) -> float:
        return compensation_values(self.lambda0.at(t))[0]

    def center_current(self, t: float) -> float:
        return compensation_values(self.lambda0.at(t))[1]

    def samples(self) -> tuple:
        values = self.lambda0.values
        bx = (COMPENSATION_BX_OFFSET_G + values * COMPENSATION_BX_SLOPE_G) * GAUSS
        ic = (COMPENSATION_IC_OFFSET_MA + values * COMPENSATION_IC_SLOPE_MA) * MILLIAMP
        return bx, ic


def compensation_values(lambda0: float) -> tuple:
    """(B_x in T, I_C in A) for one value of lambda_0."""
    if not -1e-12 <= lambda0 <= 1 + 1e-12:
        raise ValueError(f"lambda_0 must lie in [0, 1] (got {lambda0})")
    bx = (COMPENSATION_BX_OFFSET_G + lambda0 * COMPENSATION_BX_SLOPE_G) * GAUSS
    ic = (COMPENSATION_IC_OFFSET_MA + lambda0 * COMPENSATION_IC_SLOPE_MA) * MILLIAMP
    return bx, ic


def compensation_ramps(lambda0: Waveform) -> CompensationRamps:
    if np.any(lambda0.values < -1e-12) or np.any(lambda0.values > 1 + 1e-12):
        raise ValueError("lambda_0 must lie in [0, 1]")
    return CompensationRamps(lambda0)


# ---------------------------------------------------------------------------
# Potential sets
# ---------------------------------------------------------------------------


def local_minima(values: np.ndarray) -> np.ndarray:
    """Indices of interior local minima; a flat pair counts once (its right point)."""
    v = np.asarray(values)
    return np.where((v[1:-1] <= v[:-2]) & (v[1:-1] < v[2:]))[0] + 1


def fit_minimum(grid: SpatialGrid1D, potential: np.ndarray, index: int, mass: float, half_window: int = 5) -> tuple:
    """Quadratic fit over +-half_window points around index; returns (position, omega)."""
    lo = max(index - half_window, 0)
    hi = min(index + half_window + 1, grid.n_points)
    x = grid.x[lo:hi]
    center = grid.x[index]
    c2, c1, _ = np.polyfit(x - center, potential[lo:hi], 2)
    if c2 <= 0:
        raise DoubleWellError(f"non-positive curvature at x = {center:.3e} m")
    return center - c1 / (2 * c2), math.sqrt(2 * c2 / mass)


@dataclass
class PotentialSet:
    """Potentials along the double-well axis (J) and the transverse frequency profile (rad/s)."""

    grid: SpatialGrid1D
    u_c: np.ndarray
    u_0: np.ndarray
    u_1: np.ndarray
    omega_perp: np.ndarray
    d_x: float
    omega_x: float
    omega_0: float
    omega_1: float
    provenance: str = "model"
    u_comp: Optional[np.ndarray] = None
    couplings: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def u(self, state: int) -> np.ndarray:
        return self.u_1 if state == 1 else self.u_0

    def potential(self, state: int, lam: float, lam0: Optional[float] = None) -> np.ndarray:
        """U_i = u_c + lam u_i (+ lam0 u_comp when a compensation term is present)."""
        total = self.u_c + lam * self.u(state)
        if self.u_comp is not None:
            total = total + (lam if lam0 is None else lam0) * self.u_comp
        return total

    def check_invariants(self, depth_rtol: float = 1e-2) -> None:
        minima_c = local_minima(self.u_c)
        if minima_c.size != 2:
            raise DoubleWellError(f"u_c has {minima_c.size} local minima, expected 2")
        depths = self.u_c[minima_c]
        barrier = self.u_c[minima_c[0]:minima_c[1] + 1].max() - depths.min()
        if abs(depths[0] - depths[1]) > depth_rtol * barrier:
            raise DoubleWellError("u_c minima have unequal depth")
        minima_1 = local_minima(self.potential(1, 1.0))
        if minima_1.size != 1:
            raise DoubleWellError(f"u_c + u_1 has {minima_1.size} local minima, expected 1")
        minima_0 = local_minima(self.potential(0, 1.0))
        if minima_0.size != 2:
            raise DoubleWellError(f"u_c + u_0 has {minima_0.size} local minima, expected 2")
        spread_c = self.grid.x[minima_c[1]] - self.grid.x[minima_c[0]]
        spread_0 = self.grid.x[minima_0[1]] - self.grid.x[minima_0[0]]
        if spread_0 <= spread_c:
            raise DoubleWellError("u_0 does not push the minima apart")

    def well_positions(self) -> tuple:
        minima = local_minima(self.u_c)
        return float(self.grid.x[minima[0]]), float(self.grid.x[minima[-1]])

    def summary(self) -> dict:
        return {
            "provenance": self.provenance,
            "d_x": self.d_x,
            "omega_x": self.omega_x,
            "omega_0": self.omega_0,
            "omega_1": self.omega_1,
            "omega_perp_mean": float(np.mean(self.omega_perp)),
            "omega_perp_rel_variation": float(np.ptp(self.omega_perp) / np.mean(self.omega_perp)),
            "grid": self.grid.to_dict(),
            **self.metadata,
        }

    csv_header = ("x", "u_c", "u_0", "u_1", "omega_perp", "u_comp")

    def csv_rows(self) -> list:
        comp = self.u_comp if self.u_comp is not None else np.zeros_like(self.u_c)
        return [
            tuple(float(v) for v in row)
            for row in zip(self.grid.x, self.u_c, self.u_0, self.u_1, self.omega_perp, comp)
        ]


def save_potential_set(potentials: PotentialSet, directory: Union[str, Path], stem: str = "potential") -> tuple:
    """Write `<stem>.csv` and `<stem>.json`; returns both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    json_path = directory / f"{stem}.json"
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PotentialSet.csv_header)
        for row in potentials.csv_rows():
            writer.writerow([repr(v) for v in row])
    json_path.write_text(json.dumps(potential_summary(potentials), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return csv_path, json_path


def potential_summary(potentials: PotentialSet) -> dict:
    payload = potentials.summary()
    payload["has_compensation"] = potentials.u_comp is not None and bool(np.any(potentials.u_comp))
    return to_builtin(payload)


def load_potential_set(directory: Union[str, Path], stem: str = "potential") -> PotentialSet:
    directory = Path(directory)
    try:
        meta = json.loads((directory / f"{stem}.json").read_text(encoding="utf-8"))
        with open(directory / f"{stem}.csv", newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            next(reader)
            data = np.array([[float(v) for v in row] for row in reader])
    except (OSError, ValueError, StopIteration) as exc:
        raise ConfigError(f"cannot load potential set from {directory}: {exc}") from exc
    grid_meta = meta["grid"]
    grid = SpatialGrid1D(grid_meta["x_min"], grid_meta["x_max"], grid_meta["n_points"])
    reserved = {"provenance", "d_x", "omega_x", "omega_0", "omega_1", "grid",
                "omega_perp_mean", "omega_perp_rel_variation", "has_compensation"}
    return PotentialSet(
        grid=grid,
        u_c=data[:, 1],
        u_0=data[:, 2],
        u_1=data[:, 3],
        omega_perp=data[:, 4],
        d_x=meta["d_x"],
        omega_x=meta["omega_x"],
        omega_0=meta["omega_0"],
        omega_1=meta["omega_1"],
        provenance=meta["provenance"],
        u_comp=data[:, 5] if meta.get("has_compensation") else None,
        metadata={k: v for k, v in meta.items() if k not in reserved},
    )


def _pair_frequencies(grid, potential, mass, half_window) -> tuple:
    minima = local_minima(potential)
    if minima.size != 2:
        raise DoubleWellError(f"expected two minima, found {minima.size}")
    (x_l, w_l), (x_r, w_r) = (fit_minimum(grid, potential, i, mass, half_window) for i in minima)
    return x_r - x_l, 0.5 * (w_l + w_r)


def barrier_well_minimum(a: float, x0: float, amplitude: float, sigma: float) -> tuple:
    """Right minimum of a (x^2 - x0^2)^2 + amplitude exp(-x^2 / 2 sigma^2); returns (position, curvature).

    Off-grid, so the curvature is a smooth function of the amplitude.
    """
    if amplitude < 0:
        raise ValueError("barrier amplitude must be non-negative")
    if amplitude == 0.0:
        return x0, 8.0 * a * x0**2
    strength = amplitude / sigma**2

    def reduced_slope(x: float) -> float:
        # u'(x) / x, strictly increasing for x > 0
        return 4.0 * a * (x * x - x0 * x0) - strength * math.exp(-x * x / (2.0 * sigma**2))

    upper = math.sqrt(x0**2 + strength / (4.0 * a))
    position = brentq(reduced_slope, x0, upper, xtol=1e-14 * x0, rtol=1e-14)
    gauss = math.exp(-position**2 / (2.0 * sigma**2))
    curvature = a * (12.0 * position**2 - 4.0 * x0**2) + amplitude * gauss * (position**2 / sigma**4 - 1.0 / sigma**2)
    return position, curvature


def model_potential_set(
    grid: SpatialGrid1D,
    omega_x: float,
    d_x: float,
    omega_0: float,
    omega_1: float,
    omega_perp: float,
    barrier_width: Optional[float] = None,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> PotentialSet:
    """Analytic double well calibrated to the target frequencies.

    u_c = a (x^2 - x0^2)^2 with x0 = d_x/2; u_1 is a negative Gaussian whose
    quartic term cancels that of u_c (single well of frequency omega_1); u_0 is
    a positive Gaussian of width `barrier_width` (default x0) pushing the wells
    apart to frequency omega_0. Frequencies are the exact curvatures at the
    continuous minima, so the calibration does not depend on the grid.
    """
    for name, value in (("omega_x", omega_x), ("d_x", d_x), ("omega_0", omega_0),
                        ("omega_1", omega_1), ("omega_perp", omega_perp)):
        if not value > 0:
            raise CalibrationError(f"{name} must be positive")
    mass = constants.m_atom
    x = grid.x
    x0 = d_x / 2
    a = mass * omega_x**2 / (8 * x0**2)
    u_c = a * (x**2 - x0**2) ** 2

    sigma1_sq = x0**2 * (omega_1**2 / omega_x**2 + 0.5)
    amplitude_1 = 8 * a * sigma1_sq**2
    u_1 = -amplitude_1 * np.exp(-x**2 / (2 * sigma1_sq))
    curvature_1 = amplitude_1 / sigma1_sq - 4 * a * x0**2

    sigma0 = barrier_width if barrier_width is not None else x0

    def mismatch(amplitude: float) -> float:
        curvature = barrier_well_minimum(a, x0, amplitude, sigma0)[1]
        return math.sqrt(curvature / mass) - omega_0

    if mismatch(0.0) >= 0:
        raise CalibrationError("omega_0 must exceed omega_x for a barrier that pushes the wells apart")
    upper = a * x0**4
    for _ in range(40):
        if mismatch(upper) > 0:
            break
        upper *= 2
    else:
        raise CalibrationError("could not bracket the u_0 amplitude")
    amplitude_0 = brentq(mismatch, 0.0, upper, xtol=1e-14 * upper, rtol=1e-14)
    u_0 = amplitude_0 * np.exp(-x**2 / (2 * sigma0**2))
    position_0, curvature_0 = barrier_well_minimum(a, x0, amplitude_0, sigma0)

    fitted_x = math.sqrt(8 * a * x0**2 / mass)
    fitted_0 = math.sqrt(curvature_0 / mass)
    fitted_1 = math.sqrt(curvature_1 / mass)
    for label, fitted, target in (("omega_x", fitted_x, omega_x), ("omega_0", fitted_0, omega_0),
                                  ("omega_1", fitted_1, omega_1)):
        if abs(fitted / target - 1) > 1e-9:
            raise CalibrationError(f"{label} calibrated to {fitted:.6e} rad/s, target {target:.6e}")
    single = local_minima(u_c + u_1)
    if single.size != 1:
        raise CalibrationError(f"u_c + u_1 has {single.size} minima after calibration")

    barrier = a * x0**4
    logger.debug(
        "Model potential calibrated",
        extra={"barrier_hbar_omega": barrier / (constants.hbar * omega_x), "amplitude_1": amplitude_1,
               "amplitude_0": amplitude_0, "d_x_dressed": 2 * position_0},
    )
    potentials = PotentialSet(
        grid=grid,
        u_c=u_c,
        u_0=u_0,
        u_1=u_1,
        omega_perp=np.full(grid.n_points, float(omega_perp)),
        d_x=2 * x0,
        omega_x=fitted_x,
        omega_0=fitted_0,
        omega_1=fitted_1,
        provenance="model",
        metadata={"barrier_height": barrier, "barrier_width": sigma0},
    )
    potentials.check_invariants(depth_rtol=1e-9)
    return potentials


@dataclass(frozen=True)
class MicrowaveDrive:
    """Drive of the CPW: detuning, peak amplitudes at lambda = 1 and the modulation."""

    delta0: float
    v0_peak: float = DRIVE_VOLTAGE_PEAK
    i0_peak: float = DRIVE_CURRENT_PEAK
    use_impedance: bool = False
    modulation: Optional[Waveform] = None


def _transverse_omega(layout, points, axis, t, mass, step, constants) -> np.ndarray:
    side = np.cross(axis, [0.0, 0.0, 1.0])
    if np.linalg.norm(side) < 1e-12:
        side = np.array([0.0, 1.0, 0.0])
    side /= np.linalg.norm(side)
    normal = np.cross(axis, side)

    def energy(p):
        b = total_static_field(layout.wires, layout.bias, p, t)
        return constants.mu_B / 2 * np.linalg.norm(b, axis=-1)

    u0 = energy(points)
    hessian = np.empty(points.shape[:1] + (2, 2))
    for i, e_i in enumerate((side, normal)):
        hessian[:, i, i] = (energy(points + step * e_i) - 2 * u0 + energy(points - step * e_i)) / step**2
    cross = (
        energy(points + step * (side + normal)) - energy(points + step * (side - normal))
        - energy(points - step * (side - normal)) + energy(points - step * (side + normal))
    ) / (4 * step**2)
    hessian[:, 0, 1] = hessian[:, 1, 0] = cross
    eigen = np.linalg.eigvalsh(hessian)
    if np.any(eigen <= 0):
        raise DoubleWellError("transverse curvature of u_c is not positive along the axis")
    return np.sqrt(np.sqrt(eigen[:, 0] * eigen[:, 1]) / mass)


def assemble_potential_set(
    layout: ChipLayout,
    cpw: CPWResult,
    trap: TrapGeometry,
    grid: SpatialGrid1D,
    drive: MicrowaveDrive,
    t: float = 0.0,
    fit_half_window: int = 5,
    transverse_step: float = 10e-9,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> PotentialSet:
    """Sample u_c, u_0, u_1 and omega_perp along the (tilted) double-well axis through the trap."""
    axis = trap.axis
    points = trap.center + grid.x[:, None] * axis
    b0 = total_static_field(layout.wires, layout.bias, points, t)
    b_abs = np.linalg.norm(b0, axis=-1)
    u_c_raw = zeeman_potential(b_abs, QUBIT_1, constants)
    offset = float(u_c_raw.min())
    u_c = u_c_raw - offset

    z_abs = abs(cpw.Z_c) if drive.use_impedance else None
    v0, i0 = drive_amplitudes(1.0, drive.v0_peak, z_abs, drive.i0_peak)
    b_mw, e_mw = mw_field_at(cpw, v0, i0, points)
    components = local_polarization_decompose(b_mw, b0)
    v_el = electric_mw_potential(e_mw, constants)

    couplings = []
    mw = {}
    for level in QUBIT_LEVELS:
        level_couplings = transition_couplings(level, components, drive.delta0, b_abs, constants)
        sign = 1.0 if level.F == 1 else -1.0
        mw[level] = sign * _dressing_sum(level_couplings, b_abs.shape, constants)
        couplings.extend(level_couplings)
    u_0 = v_el + mw[QUBIT_0]
    u_1 = v_el + mw[QUBIT_1]

    bx_on, ic_on = compensation_values(1.0)
    bx_off, ic_off = compensation_values(0.0)
    compensated = apply_compensation(layout, lambda _t: bx_on, lambda _t: ic_on)
    static = apply_compensation(layout, lambda _t: bx_off, lambda _t: ic_off)
    b_on = np.linalg.norm(total_static_field(compensated.wires, compensated.bias, points, t), axis=-1)
    b_off = np.linalg.norm(total_static_field(static.wires, static.bias, points, t), axis=-1)
    u_comp = constants.mu_B / 2 * (b_on - b_off)

    omega_perp = _transverse_omega(layout, points, axis, t, constants.m_atom, transverse_step, constants)

    mass = constants.m_atom
    d_x, omega_x = _pair_frequencies(grid, u_c, mass, fit_half_window)
    _, omega_0 = _pair_frequencies(grid, u_c + u_0 + u_comp, mass, fit_half_window)
    single = local_minima(u_c + u_1 + u_comp)
    if single.size != 1:
        raise DoubleWellError(f"u_c + u_1 has {single.size} minima, expected 1")
    _, omega_1 = fit_minimum(grid, u_c + u_1 + u_comp, int(single[0]), mass, fit_half_window)

    mw_scale = float(np.max(np.abs(mw[QUBIT_1]))) or 1.0
    potentials = PotentialSet(
        grid=grid,
        u_c=u_c,
        u_0=u_0,
        u_1=u_1,
        omega_perp=omega_perp,
        d_x=d_x,
        omega_x=omega_x,
        omega_0=omega_0,
        omega_1=omega_1,
        provenance="chip",
        u_comp=u_comp,
        couplings=couplings,
        metadata={
            "u_c_offset": offset,
            "b_min": float(b_abs.min()),
            "tilt": trap.tilt,
            "height": trap.height,
            "v0": v0,
            "i0": i0,
            "v_el_over_v_mw": float(np.max(np.abs(v_el)) / mw_scale),
            "max_ratio_sq": max((c.max_ratio_sq for c in couplings), default=0.0),
        },
    )
    logger.info("Chip potentials assembled", extra={"d_x": d_x, "omega_x": omega_x, "omega_1": omega_1})
    return potentials


def potential_callable(potentials: PotentialSet, state: int, lam: Waveform,
                       lam0: Optional[Waveform] = None) -> Callable[[float], np.ndarray]:
    """U_i(x, t) as a function of time."""
    def at(t: float) -> np.ndarray:
        return potentials.potential(state, lam.at(t), None if lam0 is None else lam0.at(t))
    return at
