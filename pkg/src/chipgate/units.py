"""
Physical constants, unit conventions, grids and waveform containers.

Everything inside the package is SI. Conversion helpers are used only where
values enter from configuration files or the command line.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Union

import numpy as np
from scipy import constants as sc
from scipy.integrate import trapezoid

from chipgate.constants import (
    ALPHA_DC,
    G_I,
    G_J,
    HYPERFINE_SPLITTING_HZ,
    RB87_MASS_U,
)
from chipgate.exceptions import GridError

logger = logging.getLogger(__name__)

GAUSS = 1e-4
MILLIAMP = 1e-3
MICRON = 1e-6
NANOMETER = 1e-9
MILLISECOND = 1e-3
NANOSECOND = 1e-9

LAMBDA_UNIT = "1"
ANGULAR_UNIT = "rad/s"


def khz_to_angular(value_khz: float) -> float:
    return 2.0 * math.pi * value_khz * 1e3


def mhz_to_angular(value_mhz: float) -> float:
    return 2.0 * math.pi * value_mhz * 1e6


def angular_to_khz(omega: float) -> float:
    return omega / (2.0 * math.pi * 1e3)


@dataclass(frozen=True)
class PhysicalConstants:
    """Constants table; every physics routine takes its numbers from here."""

    hbar: float = sc.hbar
    h: float = sc.h
    mu_B: float = sc.physical_constants["Bohr magneton"][0]
    mu_0: float = sc.mu_0
    epsilon_0: float = sc.epsilon_0
    k_B: float = sc.k
    m_atom: float = RB87_MASS_U * sc.physical_constants["atomic mass constant"][0]
    g_J: float = G_J
    g_I: float = G_I
    g_F1: float = -0.5
    g_F2: float = 0.5
    alpha_dc: float = ALPHA_DC
    omega_hfs: float = 2.0 * math.pi * HYPERFINE_SPLITTING_HZ

    def __post_init__(self) -> None:
        if not math.isclose(self.g_F1, -self.g_F2, rel_tol=0.0, abs_tol=1e-15):
            raise ValueError("g_F1 must equal -g_F2 so both qubit states share the static Zeeman shift")
        if self.g_F1 >= 0:
            raise ValueError("g_F1 must be negative")
        positive = ("hbar", "h", "mu_B", "mu_0", "epsilon_0", "k_B", "m_atom", "g_J", "g_F2", "alpha_dc", "omega_hfs")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def g_F(self, F: int) -> float:
        return self.g_F1 if F == 1 else self.g_F2


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class SpatialGrid1D:
    """Uniform grid including both end points."""

    x_min: float
    x_max: float
    n_points: int

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def x(self) -> np.ndarray:
        values = np.linspace(self.x_min, self.x_max, self.n_points)
        values.flags.writeable = False
        return values

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers of the discrete Fourier transform on this grid."""
        values = 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)
        values.flags.writeable = False
        return values

    def index_of(self, position: float) -> int:
        return int(np.argmin(np.abs(self.x - position)))

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_points": self.n_points}


def make_grid(x_min: float, x_max: float, n: int) -> SpatialGrid1D:
    """Build a uniform spatial grid whose size is a power of two."""
    if not x_max > x_min:
        raise GridError(f"grid bounds must increase (got {x_min} .. {x_max})")
    if n < 8:
        raise GridError(f"grid needs at least 8 points (got {n})")
    if n & (n - 1):
        raise GridError(f"grid size must be a power of two (got {n})")
    return SpatialGrid1D(float(x_min), float(x_max), int(n))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid with n_steps intervals and n_steps + 1 samples."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise GridError("time grid needs at least one step")
        if not self.t_end > self.t_start:
            raise GridError("time grid must have t_end > t_start")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @cached_property
    def times(self) -> np.ndarray:
        values = np.linspace(self.t_start, self.t_end, self.n_steps + 1)
        values.flags.writeable = False
        return values

    @cached_property
    def midpoints(self) -> np.ndarray:
        values = self.t_start + (np.arange(self.n_steps) + 0.5) * self.dt
        values.flags.writeable = False
        return values

    @classmethod
    def covering(cls, duration: float, max_dt: float, multiple_of: int = 1, t_start: float = 0.0) -> "TimeGrid":
        """Smallest grid over `duration` with dt <= max_dt and n_steps divisible by `multiple_of`."""
        if duration <= 0 or max_dt <= 0:
            raise GridError("duration and max_dt must be positive")
        n_steps = max(1, math.ceil(duration / max_dt - 1e-9))
        n_steps = multiple_of * math.ceil(n_steps / multiple_of)
        return cls(t_start, t_start + duration, n_steps)

    def to_dict(self) -> dict:
        return {"t_start": self.t_start, "t_end": self.t_end, "n_steps": self.n_steps}


Number = Union[int, float]


@dataclass(frozen=True)
class Waveform:
    """Real samples of a control on a time grid, tagged with an advisory unit."""

    grid: TimeGrid
    values: np.ndarray
    unit: str = LAMBDA_UNIT

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float, copy=True)
        if values.shape != (self.grid.n_steps + 1,):
            raise GridError(
                f"waveform has {values.size} samples, time grid needs {self.grid.n_steps + 1}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def _check_compatible(self, other: "Waveform") -> None:
        if other.grid != self.grid:
            raise GridError("waveforms live on different time grids")
        if other.unit != self.unit:
            raise GridError(f"unit mismatch: {self.unit} vs {other.unit}")

    def __add__(self, other: Union["Waveform", Number]) -> "Waveform":
        if isinstance(other, Waveform):
            self._check_compatible(other)
            return replace(self, values=self.values + other.values)
        return replace(self, values=self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other: Union["Waveform", Number]) -> "Waveform":
        if isinstance(other, Waveform):
            self._check_compatible(other)
            return replace(self, values=self.values - other.values)
        return replace(self, values=self.values - float(other))

    def scale(self, factor: float) -> "Waveform":
        return replace(self, values=self.values * factor)

    def clamp(self, lower: float, upper: float) -> "Waveform":
        return replace(self, values=np.clip(self.values, lower, upper))

    def with_values(self, values: np.ndarray) -> "Waveform":
        return replace(self, values=values)

    def integrate(self) -> float:
        return float(trapezoid(self.values, self.grid.times))

    def at(self, t: float) -> float:
        return float(np.interp(t, self.grid.times, self.values))

    def interval_values(self) -> np.ndarray:
        """Piecewise-constant value on each step (mean of the bounding samples)."""
        return 0.5 * (self.values[:-1] + self.values[1:])

    @classmethod
    def from_intervals(cls, grid: TimeGrid, intervals: np.ndarray, unit: str = LAMBDA_UNIT) -> "Waveform":
        """Samples from per-step values: interior samples average the adjacent steps."""
        intervals = np.asarray(intervals, dtype=float)
        if intervals.shape != (grid.n_steps,):
            raise GridError(f"expected {grid.n_steps} interval values, got {intervals.size}")
        samples = np.empty(grid.n_steps + 1)
        samples[0] = intervals[0]
        samples[-1] = intervals[-1]
        samples[1:-1] = 0.5 * (intervals[:-1] + intervals[1:])
        return cls(grid, samples, unit)

    @classmethod
    def constant(cls, grid: TimeGrid, value: float, unit: str = LAMBDA_UNIT) -> "Waveform":
        return cls(grid, np.full(grid.n_steps + 1, float(value)), unit)


def linear_ramp_trial(period: float, n_oscillations: int, grid: TimeGrid) -> Waveform:
    """Triangular trial control: 0 -> 1 over the first half of each oscillation, back to 0 over the second."""
    if period <= 0:
        raise GridError(f"oscillation period must be positive (got {period})")
    if n_oscillations < 1:
        raise GridError("at least one oscillation is required")
    gate_time = n_oscillations * period
    if not math.isclose(gate_time, grid.duration, rel_tol=1e-9):
        raise GridError(f"time grid spans {grid.duration:.6e} s but N*period is {gate_time:.6e} s")
    if grid.n_steps % (2 * n_oscillations):
        logger.warning(
            "Ramp apexes fall between samples; sampled area differs from tau_g/2",
            extra={"n_steps": grid.n_steps, "n_oscillations": n_oscillations},
        )

    phase = (grid.times - grid.t_start) / period
    fraction = phase - np.floor(phase)
    values = 1.0 - np.abs(2.0 * fraction - 1.0)
    # the last sample closes the final triangle
    values[-1] = 0.0
    return Waveform(grid, values, LAMBDA_UNIT)
