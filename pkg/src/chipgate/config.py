"""
Configuration management for chipgate.
Handles .env discovery, the RunConfig schema and conversion to SI units.
"""

from __future__ import annotations

import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from chipgate.constants import (
    CHIPGATE_JOBS_ENV,
    CHIPGATE_OUTPUT_DIR_ENV,
    CHIPGATE_SKIP_DOTENV_ENV,
    DRIVE_CURRENT_PEAK,
    DRIVE_DETUNING_HZ,
    DRIVE_VOLTAGE_PEAK,
    FIELD_NOISE_RMS,
    REFERENCE_TABLE,
    SCATTERING_LENGTH,
    SURFACE_LOSS_RATE,
    TRAP_FIELD_G,
    TRAP_OMEGA_ONE_HZ,
    TRAP_OMEGA_PERP_HZ,
    TRAP_OMEGA_X_HZ,
    TRAP_OMEGA_ZERO_HZ,
    WELL_SEPARATION,
)
from chipgate.exceptions import ConfigError
from chipgate.units import (
    GAUSS,
    MICRON,
    MILLIAMP,
    MILLISECOND,
    NANOMETER,
    NANOSECOND,
    SpatialGrid1D,
    TimeGrid,
    khz_to_angular,
    make_grid,
    mhz_to_angular,
)
from chipgate.utils import config_hash as _hash_payload
from chipgate.utils import sanitize_error_message

logger = logging.getLogger(__name__)

_PROJECT_ROOT_MARKERS = (".git", "pyproject.toml", "setup.py")


def _is_project_root(directory: Path) -> bool:
    """Return True when the directory looks like the project root."""
    return any((directory / marker).exists() for marker in _PROJECT_ROOT_MARKERS)


def find_and_load_dotenv(filename: str = ".env") -> Optional[Path]:
    """
    Search upward from the current working directory for a dotenv file
    and load it if found. Stops once the project root markers are crossed.
    Returns the path that was loaded or None.
    """
    if os.getenv(CHIPGATE_SKIP_DOTENV_ENV):
        logger.debug("Skipping auto .env load (%s set)", CHIPGATE_SKIP_DOTENV_ENV)
        return None

    if filename == ".env" and "PYTEST_CURRENT_TEST" in os.environ:
        logger.debug("Skipping auto .env load for default file (test context detected)")
        return None

    current_dir = Path.cwd().resolve()

    for parent in (current_dir, *current_dir.parents):
        env_path = parent / filename
        if env_path.is_file():
            load_dotenv(dotenv_path=env_path)
            logger.debug("Loaded environment configuration from %s", env_path)
            return env_path

        if _is_project_root(parent):
            break

    logger.debug("No .env file discovered via upward search from %s", current_dir)
    return None


_LOADED_ENV_PATH = find_and_load_dotenv()


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PotentialConfig(_Section):
    """Where the double-well potentials come from.

    model: analytic double well calibrated to the trap frequencies below.
    chip: CPW solve plus Biot-Savart fields of `geometry_file` (or the shipped layout).
    file: a potential set saved by an earlier `chipgate potential` run.
    """

    source: Literal["model", "chip", "file"]
    geometry_file: Optional[str] = None
    potential_dir: Optional[str] = None
    omega_x_khz: float = Field(TRAP_OMEGA_X_HZ / 1e3, gt=0)
    d_x_um: float = Field(WELL_SEPARATION / MICRON, gt=0)
    omega_0_khz: float = Field(TRAP_OMEGA_ZERO_HZ / 1e3, gt=0)
    omega_1_khz: float = Field(TRAP_OMEGA_ONE_HZ / 1e3, gt=0)
    omega_perp_khz: float = Field(TRAP_OMEGA_PERP_HZ / 1e3, gt=0)
    barrier_width_um: Optional[float] = Field(None, gt=0)
    cpw_method: Literal["sor", "direct"] = "sor"
    cpw_cell_nm: float = Field(20.0, gt=0)
    cpw_margin_um: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def _file_needs_directory(self) -> "PotentialConfig":
        if self.source == "file" and not self.potential_dir:
            raise ValueError("potential_dir is required when source is 'file'")
        return self

    @property
    def omega_x(self) -> float:
        return khz_to_angular(self.omega_x_khz)

    @property
    def omega_0(self) -> float:
        return khz_to_angular(self.omega_0_khz)

    @property
    def omega_1(self) -> float:
        return khz_to_angular(self.omega_1_khz)

    @property
    def omega_perp(self) -> float:
        return khz_to_angular(self.omega_perp_khz)

    @property
    def d_x(self) -> float:
        return self.d_x_um * MICRON

    @property
    def barrier_width(self) -> Optional[float]:
        return None if self.barrier_width_um is None else self.barrier_width_um * MICRON


class GridConfig(_Section):
    x_min_um: float = -2.0
    x_max_um: float = 2.0
    n_points: int = Field(256, ge=8)

    @model_validator(mode="after")
    def _bounds(self) -> "GridConfig":
        if self.x_max_um <= self.x_min_um:
            raise ValueError("x_max_um must exceed x_min_um")
        if self.n_points & (self.n_points - 1):
            raise ValueError("n_points must be a power of two")
        return self

    def build(self) -> SpatialGrid1D:
        return make_grid(self.x_min_um * MICRON, self.x_max_um * MICRON, self.n_points)


class TimeConfig(_Section):
    n_oscillations: int = Field(..., ge=1)
    gate_time_ms: Optional[float] = Field(None, gt=0)
    dt_ns: float = Field(50.0, gt=0)

    @property
    def gate_time(self) -> float:
        if self.gate_time_ms is not None:
            return self.gate_time_ms * MILLISECOND
        if self.n_oscillations not in REFERENCE_TABLE:
            raise ConfigError(
                f"no tabulated gate time for N={self.n_oscillations}; set time.gate_time_ms",
                path="time.gate_time_ms",
            )
        return REFERENCE_TABLE[self.n_oscillations][0][0] * MILLISECOND

    @property
    def period(self) -> float:
        return self.gate_time / self.n_oscillations

    def build(self) -> TimeGrid:
        """Uniform grid with dt <= dt_ns and a step count divisible by 2N (ramp apexes on samples)."""
        chunk = 2 * self.n_oscillations
        n_steps = math.ceil(self.gate_time / (self.dt_ns * NANOSECOND) / chunk) * chunk
        return TimeGrid(0.0, self.gate_time, n_steps)


class DriveConfig(_Section):
    detuning_mhz: float = DRIVE_DETUNING_HZ / 1e6
    v0_peak_v: float = Field(DRIVE_VOLTAGE_PEAK, ge=0)
    i0_peak_ma: float = Field(DRIVE_CURRENT_PEAK / MILLIAMP, ge=0)
    use_impedance: bool = False

    @property
    def delta0(self) -> float:
        return mhz_to_angular(self.detuning_mhz)

    @property
    def i0_peak(self) -> float:
        return self.i0_peak_ma * MILLIAMP


class InteractionConfig(_Section):
    enabled: bool = True
    a_00_nm: float = Field(SCATTERING_LENGTH / NANOMETER, ge=0)
    a_01_nm: float = Field(SCATTERING_LENGTH / NANOMETER, ge=0)
    a_11_nm: float = Field(SCATTERING_LENGTH / NANOMETER, ge=0)
    symmetric_omega: bool = False
    regularization: Literal["diagonal", "gaussian"] = "diagonal"


class ControlConfig(_Section):
    stage1_iterations: int = Field(50, ge=0)
    stage2_iterations: int = Field(20, ge=0)
    conv_tol: float = Field(1e-6, gt=0)
    lambda_a: Optional[float] = Field(None, gt=0)
    first_update: float = Field(0.025, gt=0)
    rise_fraction: float = Field(0.05, ge=0, le=0.5)
    max_retries: int = Field(6, ge=0)
    calibrate: bool = True
    calibration_tol: float = Field(1e-3, gt=0)
    run_stage2: bool = True
    tanh_amplitude: float = Field(0.2, ge=0, lt=1)
    cutoff_ratio: float = Field(0.8, gt=0, lt=2)


class FidelityConfig(_Section):
    gate_phase_over_pi: float = 1.0
    restarts: int = Field(0, ge=0)


class ThermalConfig(_Section):
    """Temperatures as k_B T / hbar omega_x; empty means zero temperature only."""

    kT_over_hbar_omega: List[float] = Field(default_factory=list)
    n_max: int = Field(1, ge=0)
    floor: float = Field(1e-4, ge=0, lt=1)

    @field_validator("kT_over_hbar_omega")
    @classmethod
    def _non_negative(cls, values: List[float]) -> List[float]:
        if any(v < 0 for v in values):
            raise ValueError("temperatures must be non-negative")
        return values


class NoiseConfig(_Section):
    amplitude: float = Field(0.0, ge=0)
    samples: int = Field(0, ge=0)


class ErrorsConfig(_Section):
    surface_rate_per_s: float = Field(SURFACE_LOSS_RATE, ge=0)
    field_noise_mg: float = Field(FIELD_NOISE_RMS / (1e-3 * GAUSS), ge=0)
    trap_field_g: float = Field(TRAP_FIELD_G, ge=0)

    @property
    def field_noise(self) -> float:
        return self.field_noise_mg * 1e-3 * GAUSS

    @property
    def trap_field(self) -> float:
        return self.trap_field_g * GAUSS


class RunConfig(_Section):
    potential: PotentialConfig
    time: TimeConfig
    grid: GridConfig = GridConfig()
    drive: DriveConfig = DriveConfig()
    interaction: InteractionConfig = InteractionConfig()
    control: ControlConfig = ControlConfig()
    fidelity: FidelityConfig = FidelityConfig()
    thermal: ThermalConfig = ThermalConfig()
    noise: NoiseConfig = NoiseConfig()
    errors: ErrorsConfig = ErrorsConfig()
    output_dir: str = "chipgate-out"
    seed: int = Field(0, ge=0, lt=2**64)
    jobs: int = Field(1, ge=1)
    snapshots: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _first_error_path(exc: ValidationError) -> tuple:
    error = exc.errors()[0]
    path = ".".join(str(part) for part in error["loc"])
    return path, error["msg"]


def _env_defaults(payload: dict) -> dict:
    payload = dict(payload)
    if "output_dir" not in payload and os.getenv(CHIPGATE_OUTPUT_DIR_ENV):
        payload["output_dir"] = os.environ[CHIPGATE_OUTPUT_DIR_ENV]
    if "jobs" not in payload and os.getenv(CHIPGATE_JOBS_ENV):
        raw = os.environ[CHIPGATE_JOBS_ENV]
        try:
            payload["jobs"] = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{CHIPGATE_JOBS_ENV} must be an integer (got '{raw}')", path="jobs") from exc
    return payload


def parse_run_config(payload: dict, overrides: Optional[dict] = None) -> RunConfig:
    """Validate a config mapping; overrides with value None are ignored."""
    if not isinstance(payload, dict):
        raise ConfigError("configuration must be a JSON object")
    payload = _env_defaults(payload)
    for key, value in (overrides or {}).items():
        if value is not None:
            payload[key] = value
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as exc:
        path, message = _first_error_path(exc)
        raise ConfigError(message, path=path) from exc


def load_run_config(path: Union[str, Path], overrides: Optional[dict] = None) -> RunConfig:
    """Read a JSON run configuration, apply CLI overrides and environment fallbacks."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {sanitize_error_message(str(exc))}") from exc
    config = parse_run_config(payload, overrides)
    logger.debug("Loaded run config", extra={"path": str(path), "config_hash": config_hash(config)})
    return config


# Not part of the physics; two runs differing only here produce the same artifacts.
HASH_EXCLUDED_FIELDS = ("output_dir", "jobs")


def config_hash(config: RunConfig) -> str:
    payload = {key: value for key, value in config.to_dict().items() if key not in HASH_EXCLUDED_FIELDS}
    return _hash_payload(payload)


def quickstart_path(n_oscillations: int) -> Path:
    """Shipped quickstart config for N oscillations."""
    path = Path(__file__).parent / "data" / f"quickstart_n{n_oscillations}.json"
    if not path.is_file():
        raise ConfigError(f"no quickstart config for N={n_oscillations}")
    return path
