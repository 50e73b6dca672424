"""Tests for Zeeman and microwave potentials, compensation and the model double well."""

import math

import numpy as np
import pytest
from scipy import constants as sc

from chipgate.exceptions import DoubleWellError, PerturbationError, QuantizationAxisError
from chipgate.potentials import (
    QUBIT_0,
    QUBIT_1,
    HyperfineLevel,
    PotentialSet,
    barrier_well_minimum,
    compensation_ramps,
    compensation_values,
    drive_amplitudes,
    hyperfine_lande,
    electric_mw_potential,
    hyperfine_matrix_element,
    load_potential_set,
    local_minima,
    local_polarization_decompose,
    model_potential_set,
    mw_potential_f1,
    mw_potential_f2,
    potential_callable,
    rabi_frequency,
    save_potential_set,
    zeeman_potential,
)
from chipgate.units import DEFAULT_CONSTANTS, TimeGrid, Waveform, khz_to_angular, make_grid


@pytest.fixture(scope="module")
def model_set():
    grid = make_grid(-2e-6, 2e-6, 256)
    return model_potential_set(
        grid,
        omega_x=khz_to_angular(4.432),
        d_x=1.32e-6,
        omega_0=khz_to_angular(4.775),
        omega_1=khz_to_angular(5.448),
        omega_perp=khz_to_angular(77.46),
    )


def _pi_components(b_pi):
    b = np.atleast_1d(np.asarray(b_pi, dtype=complex))
    return b, np.zeros_like(b), np.zeros_like(b)


def test_qubit_states_share_static_zeeman_shift():
    b = np.linspace(3e-4, 4e-4, 5)
    assert np.allclose(zeeman_potential(b, QUBIT_0), zeeman_potential(b, QUBIT_1))


def test_hyperfine_level_validation():
    with pytest.raises(ValueError):
        HyperfineLevel(3, 0)
    with pytest.raises(ValueError):
        HyperfineLevel(1, 2)


def test_polarization_of_parallel_field_is_pure_pi():
    b_pi, b_plus, b_minus = local_polarization_decompose([0.0, 0.0, 2.0], [0.0, 0.0, 1.0])
    assert b_pi == pytest.approx(2.0)
    assert abs(b_plus) < 1e-12 and abs(b_minus) < 1e-12


def test_polarization_preserves_intensity():
    b_mw = np.array([1.0, 2.0 - 1.0j, 0.5j])
    parts = local_polarization_decompose(b_mw, [0.3, -0.2, 0.9])
    assert sum(abs(p) ** 2 for p in parts) == pytest.approx(float(np.sum(np.abs(b_mw) ** 2)))


def test_polarization_needs_a_quantization_axis():
    with pytest.raises(QuantizationAxisError):
        local_polarization_decompose([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])


def test_hyperfine_matrix_elements():
    """<2,0|J_z|1,0> has magnitude 1/2; |delta m| > 1 is forbidden."""
    assert abs(hyperfine_matrix_element(0, 0)) == pytest.approx(0.5)
    assert hyperfine_matrix_element(-1, 1) == 0.0
    assert hyperfine_matrix_element(-1, -1) != 0.0


def test_rabi_frequency_is_linear_in_field():
    single = rabi_frequency(-1, -1, _pi_components(1e-7))
    double = rabi_frequency(-1, -1, _pi_components(2e-7))
    assert np.allclose(double, 2 * single)


def _b_pi_for(omega):
    element = abs(hyperfine_matrix_element(-1, -1))
    return omega * DEFAULT_CONSTANTS.hbar / (DEFAULT_CONSTANTS.g_J * DEFAULT_CONSTANTS.mu_B * element)


def test_dressing_of_single_pi_transition():
    """Omega = 2pi 1 MHz at Delta = 2pi 25 MHz shifts the level by h * 10 kHz."""
    omega = 2 * math.pi * 1e6
    delta0 = 2 * math.pi * 25e6
    components = _pi_components(_b_pi_for(omega))
    v1 = mw_potential_f1(-1, components, delta0, 0.0)
    v2 = mw_potential_f2(-1, components, delta0, 0.0)
    assert v1[0] == pytest.approx(sc.h * 1e4, rel=1e-9)
    assert v2[0] == pytest.approx(-v1[0])


def test_dressing_outside_large_detuning_regime_fails():
    delta0 = 2 * math.pi * 25e6
    components = _pi_components(_b_pi_for(0.35 * delta0))
    with pytest.raises(PerturbationError):
        mw_potential_f1(-1, components, delta0, 0.0)


def test_reversed_detuning_swaps_which_state_loses_the_barrier(model_set):
    """Centred pi field on the model double well: Delta > 0 merges the wells of |1>, Delta < 0 those of |0>."""
    x = np.asarray(model_set.grid.x)
    b_pi = _b_pi_for(2 * math.pi * 3e6) * np.exp(-(x**2) / (2 * (0.66e-6) ** 2))
    components = _pi_components(b_pi)
    delta0 = 2 * math.pi * 25e6

    dressed = {}
    for sign in (1, -1):
        dressed[sign] = (
            mw_potential_f1(QUBIT_0.m_F, components, sign * delta0, 0.0),
            mw_potential_f2(QUBIT_1.m_F, components, sign * delta0, 0.0),
        )
    for v_plus, v_minus in zip(dressed[1], dressed[-1]):
        assert np.allclose(v_minus, -v_plus)

    wells = {sign: [local_minima(model_set.u_c + v).size for v in dressed[sign]] for sign in (1, -1)}
    assert wells[1] == [2, 1]
    assert wells[-1] == [1, 2]


def test_electric_potential_is_attractive():
    assert electric_mw_potential(np.array([[10.0, 0.0, 0.0]]))[0] < 0
    assert electric_mw_potential(10.0) == pytest.approx(electric_mw_potential(np.array([[0.0, 0.0, 10.0]]))[0])


def test_drive_amplitudes():
    v0, i0 = drive_amplitudes(1.0)
    assert (v0, i0) == pytest.approx((1.9895, 15.343e-3))
    v0, i0 = drive_amplitudes(0.25, z_abs=130.0)
    assert v0 == pytest.approx(1.9895 / 2)
    assert i0 == pytest.approx(v0 / 130.0)
    with pytest.raises(ValueError):
        drive_amplitudes(-0.1)


def test_hyperfine_lande_includes_nuclear_moment():
    assert hyperfine_lande(2) == pytest.approx(0.49984, rel=1e-4)
    assert hyperfine_lande(1) == pytest.approx(-0.50183, rel=1e-4)


def test_compensation_values_follow_lambda0():
    bx, ic = compensation_values(0.0)
    assert bx == pytest.approx(-4.464e-4)
    assert ic == pytest.approx(-0.813e-3)
    bx, ic = compensation_values(1.0)
    assert bx == pytest.approx((-4.464 + 0.036) * 1e-4)
    assert ic == pytest.approx((-0.813 - 0.039) * 1e-3)
    with pytest.raises(ValueError):
        compensation_values(1.5)


def test_compensation_ramps_sample_waveform():
    grid = TimeGrid(0.0, 1e-3, 4)
    ramps = compensation_ramps(Waveform(grid, np.linspace(0, 1, 5)))
    bx, ic = ramps.samples()
    assert bx[0] == pytest.approx(-4.464e-4)
    assert ramps.center_current(1e-3) == pytest.approx(ic[-1])
    with pytest.raises(ValueError):
        compensation_ramps(Waveform.constant(grid, 2.0))


def test_model_potential_hits_target_frequencies(model_set):
    assert model_set.omega_x == pytest.approx(khz_to_angular(4.432), rel=1e-6)
    assert model_set.omega_0 == pytest.approx(khz_to_angular(4.775), rel=1e-6)
    assert model_set.omega_1 == pytest.approx(khz_to_angular(5.448), rel=1e-6)
    assert model_set.d_x == pytest.approx(1.32e-6, rel=1e-12)
    left, right = model_set.well_positions()
    assert left == pytest.approx(-right, abs=model_set.grid.spacing)


@pytest.mark.parametrize("half_width, n_points", [(2e-6, 64), (2e-6, 128), (3e-6, 256), (2e-6, 512)])
def test_model_calibration_does_not_depend_on_grid(half_width, n_points):
    potentials = model_potential_set(
        make_grid(-half_width, half_width, n_points),
        omega_x=khz_to_angular(4.432),
        d_x=1.32e-6,
        omega_0=khz_to_angular(4.775),
        omega_1=khz_to_angular(5.448),
        omega_perp=khz_to_angular(77.46),
    )
    assert potentials.omega_0 == pytest.approx(khz_to_angular(4.775), rel=1e-6)
    assert potentials.omega_1 == pytest.approx(khz_to_angular(5.448), rel=1e-6)


def test_barrier_well_frequency_is_continuous_in_amplitude():
    mass = DEFAULT_CONSTANTS.m_atom
    x0 = 0.66e-6
    a = mass * khz_to_angular(4.432) ** 2 / (8 * x0**2)
    amplitudes = np.linspace(0.0, 0.5, 2001) * a * x0**4
    curvatures = np.array([barrier_well_minimum(a, x0, amp, x0)[1] for amp in amplitudes])
    positions = np.array([barrier_well_minimum(a, x0, amp, x0)[0] for amp in amplitudes])
    assert curvatures[0] == pytest.approx(8 * a * x0**2)
    assert np.all(np.diff(curvatures) > 0)
    assert np.all(np.diff(positions) > 0)
    assert np.max(np.abs(np.diff(curvatures))) < 1e-3 * curvatures[0]


def test_barrier_well_minimum_matches_numeric_derivatives():
    mass = DEFAULT_CONSTANTS.m_atom
    x0, sigma = 0.66e-6, 0.5e-6
    a = mass * khz_to_angular(4.432) ** 2 / (8 * x0**2)
    amplitude = 0.3 * a * x0**4

    def u(x):
        return a * (x**2 - x0**2) ** 2 + amplitude * math.exp(-x**2 / (2 * sigma**2))

    position, curvature = barrier_well_minimum(a, x0, amplitude, sigma)
    h = 1e-9
    assert (u(position + h) - u(position - h)) / (2 * h) == pytest.approx(0.0, abs=1e-3 * curvature * h)
    assert (u(position + h) - 2 * u(position) + u(position - h)) / h**2 == pytest.approx(curvature, rel=1e-4)
    with pytest.raises(ValueError):
        barrier_well_minimum(a, x0, -amplitude, sigma)

def test_model_potential_minima_structure(model_set):
    """u_c: two equal wells; u_c + u_1: one well; u_c + u_0: wells pushed apart."""
    model_set.check_invariants()
    potential = potential_callable(model_set, 1, Waveform.constant(TimeGrid(0.0, 1.0, 2), 0.5))
    assert np.allclose(potential(0.3), model_set.u_c + 0.5 * model_set.u_1)


def test_check_invariants_rejects_single_well(model_set):
    broken = PotentialSet(
        grid=model_set.grid,
        u_c=model_set.grid.x**2,
        u_0=model_set.u_0,
        u_1=model_set.u_1,
        omega_perp=model_set.omega_perp,
        d_x=model_set.d_x,
        omega_x=model_set.omega_x,
        omega_0=model_set.omega_0,
        omega_1=model_set.omega_1,
    )
    with pytest.raises(DoubleWellError):
        broken.check_invariants()


def test_potential_set_save_and_load(model_set, tmp_path):
    csv_path, json_path = save_potential_set(model_set, tmp_path)
    assert csv_path.name == "potential.csv" and json_path.name == "potential.json"
    loaded = load_potential_set(tmp_path)
    assert np.array_equal(loaded.u_c, model_set.u_c)
    assert np.array_equal(loaded.u_1, model_set.u_1)
    assert loaded.omega_1 == model_set.omega_1
    assert loaded.provenance == "model"
    assert loaded.u_comp is None
    assert loaded.metadata["barrier_width"] == pytest.approx(model_set.metadata["barrier_width"])
