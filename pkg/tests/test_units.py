"""Tests for grids, waveforms and the constants table."""

import math

import numpy as np
import pytest

from chipgate.exceptions import GridError
from chipgate.units import (
    DEFAULT_CONSTANTS,
    PhysicalConstants,
    TimeGrid,
    Waveform,
    angular_to_khz,
    khz_to_angular,
    linear_ramp_trial,
    make_grid,
)


def test_make_grid_spacing_and_wavenumbers():
    """Grid includes both end points and exposes FFT wavenumbers."""
    grid = make_grid(-2e-6, 2e-6, 256)
    assert grid.x[0] == pytest.approx(-2e-6)
    assert grid.x[-1] == pytest.approx(2e-6)
    assert grid.spacing == pytest.approx(4e-6 / 255)
    assert grid.k.shape == (256,)
    assert grid.k[0] == 0.0


@pytest.mark.parametrize("n", [100, 4, 0])
def test_make_grid_rejects_bad_sizes(n):
    """Sizes must be powers of two and at least 8."""
    with pytest.raises(GridError):
        make_grid(-1.0, 1.0, n)


def test_make_grid_rejects_reversed_bounds():
    with pytest.raises(GridError):
        make_grid(1.0, -1.0, 64)


def test_time_grid_samples_and_midpoints():
    grid = TimeGrid(0.0, 1e-3, 10)
    assert grid.times.shape == (11,)
    assert grid.midpoints.shape == (10,)
    assert grid.dt == pytest.approx(1e-4)
    assert grid.midpoints[0] == pytest.approx(5e-5)


def test_time_grid_covering_respects_multiple():
    grid = TimeGrid.covering(1e-3, 3e-5, multiple_of=4)
    assert grid.n_steps % 4 == 0
    assert grid.dt <= 3e-5


def test_time_grid_rejects_empty():
    with pytest.raises(GridError):
        TimeGrid(0.0, 1.0, 0)
    with pytest.raises(GridError):
        TimeGrid(1.0, 1.0, 4)


def test_waveform_arithmetic_and_units():
    """Waveforms add on the same grid and refuse to mix units."""
    grid = TimeGrid(0.0, 1.0, 4)
    a = Waveform.constant(grid, 1.0)
    b = Waveform.constant(grid, 2.0)
    assert np.allclose((a + b).values, 3.0)
    assert np.allclose((b - a).values, 1.0)
    assert np.allclose(a.scale(0.5).values, 0.5)
    with pytest.raises(GridError):
        a + Waveform.constant(grid, 1.0, unit="rad/s")


def test_waveform_values_are_read_only():
    grid = TimeGrid(0.0, 1.0, 4)
    wave = Waveform.constant(grid, 1.0)
    with pytest.raises(ValueError):
        wave.values[0] = 2.0


def test_waveform_from_intervals_averages_neighbours():
    grid = TimeGrid(0.0, 1.0, 3)
    wave = Waveform.from_intervals(grid, np.array([0.0, 1.0, 2.0]))
    assert np.allclose(wave.values, [0.0, 0.5, 1.5, 2.0])


def test_linear_ramp_trial_area_is_half_gate_time():
    """Triangular ramps with apexes on samples integrate to tau/2."""
    period = 0.2e-3
    grid = TimeGrid(0.0, 3 * period, 600)
    trial = linear_ramp_trial(period, 3, grid)
    assert trial.values[0] == 0.0
    assert trial.values[-1] == 0.0
    assert trial.values.max() == pytest.approx(1.0)
    assert trial.integrate() == pytest.approx(3 * period / 2, rel=1e-9)


def test_linear_ramp_trial_rejects_mismatched_grid():
    with pytest.raises(GridError):
        linear_ramp_trial(1e-3, 2, TimeGrid(0.0, 1e-3, 10))


def test_frequency_conversions():
    assert khz_to_angular(1.0) == pytest.approx(2 * math.pi * 1e3)
    assert angular_to_khz(khz_to_angular(36.0)) == pytest.approx(36.0)


def test_physical_constants_validation():
    """Qubit g-factors must be opposite and every scale positive."""
    assert DEFAULT_CONSTANTS.g_F(1) == -0.5
    assert DEFAULT_CONSTANTS.g_F(2) == 0.5
    with pytest.raises(ValueError):
        PhysicalConstants(g_F1=-0.5, g_F2=0.6)
    with pytest.raises(ValueError):
        PhysicalConstants(hbar=0.0)
