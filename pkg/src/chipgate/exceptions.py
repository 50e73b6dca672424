"""Custom exception types for chipgate."""

from __future__ import annotations

from typing import Optional


class ChipgateError(Exception):
    """Base class for all chipgate errors."""
    pass


class GridError(ChipgateError):
    """Raised when a spatial or time grid violates its construction rules."""
    pass


class GeometryError(ChipgateError):
    """Raised for invalid conductor geometry or field-map queries."""
    pass


class SolverConvergenceError(ChipgateError):
    """Raised when the 2D field relaxation does not converge."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class QuantizationAxisError(ChipgateError):
    """Raised when the static field vanishes and the quantization axis is undefined."""
    pass


class PerturbationError(ChipgateError):
    """Raised when |Omega/Delta| leaves the large-detuning regime."""
    pass


class CalibrationError(ChipgateError):
    """Raised when a model potential misses its target frequencies."""
    pass


class DoubleWellError(ChipgateError):
    """Raised when a potential does not have the expected minima structure."""
    pass


class TunnelingError(ChipgateError):
    """Raised when left/right well states are not stationary on the gate timescale."""

    def __init__(self, message: str, splitting: float) -> None:
        super().__init__(message)
        self.splitting = splitting


class TimeStepError(ChipgateError):
    """Raised when the propagation step is too coarse for the potential range."""

    def __init__(self, message: str, suggested_dt: float) -> None:
        super().__init__(f"{message}; suggested dt <= {suggested_dt:.3e} s")
        self.suggested_dt = suggested_dt


class ConfinementResonanceError(ChipgateError):
    """Raised when the 1D coupling denominator 1 - 1.46 a_s/a_perp is not positive."""
    pass


class ControlError(ChipgateError):
    """Raised for invalid optimal-control problems."""
    pass


class MonotonicityError(ControlError):
    """Raised when a Krotov iteration lowers the objective."""
    pass


class FilterError(ControlError):
    """Raised when a spectral cutoff would destroy the control."""
    pass


class FidelityError(ChipgateError):
    """Raised when gate-fidelity inputs are incomplete."""
    pass


class ConfigError(ChipgateError):
    """Raised when a run configuration fails validation."""

    def __init__(self, message: str, path: Optional[str] = None) -> None:
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class StageError(ChipgateError):
    """Wraps an error raised inside a pipeline stage with the stage label."""

    def __init__(self, stage: str, error: Exception) -> None:
        super().__init__(f"[{stage}] {error}")
        self.stage = stage
        self.error = error


class DiagnosticError(ChipgateError):
    """Raised when a trajectory diagnostic cannot be evaluated (e.g. no collision in the window)."""
    pass
