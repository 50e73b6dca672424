"""Tests for symmetrisation, the worst-case process fidelity and thermal averaging."""

import math

import numpy as np
import pytest

from chipgate.dynamics import BRANCHES
from chipgate.exceptions import FidelityError
from chipgate.fidelity import (
    BranchEndpoints,
    chi_from_angles,
    gram_data,
    mixture,
    process_fidelity,
    surface_adjusted_fidelity,
    symmetrize,
    target_phases,
    thermal_occupations,
)
from chipgate.units import DEFAULT_CONSTANTS

N_POINTS = 8
IMPERFECT_PHASES = [0.1, 0.4, -0.2, 2.5]


def _product():
    """Atom in the left well on site 1, atom in the right well on site 6, disjoint supports."""
    a = np.zeros(N_POINTS)
    b = np.zeros(N_POINTS)
    a[1] = 1.0
    b[6] = 1.0
    return np.outer(a, b).astype(complex)


def _endpoints(phases, reference=True):
    psi = _product()
    initial = {label: psi for label in BRANCHES}
    final = {label: np.exp(1j * phase) * psi for label, phase in zip(BRANCHES, phases)}
    return BranchEndpoints(dx=1.0, initial=initial, final=final, reference=dict(initial) if reference else {})


def test_symmetrize_is_idempotent():
    rng = np.random.default_rng(1)
    components = {"01": rng.normal(size=(4, 4)), "00": rng.normal(size=(4, 4))}
    once = symmetrize(components)
    twice = symmetrize(once)
    assert set(once) == {"00", "01", "10"}
    for label in once:
        assert np.allclose(once[label], twice[label])
    assert np.allclose(once["10"], once["01"].T)


def test_chi_from_angles_is_normalised():
    params = np.random.default_rng(2).uniform(0, 2 * math.pi, size=(20, 6))
    chi = chi_from_angles(params)
    assert np.allclose(np.sum(np.abs(chi) ** 2, axis=1), 1.0)


def test_missing_branches_are_reported():
    psi = _product()
    with pytest.raises(FidelityError, match="11"):
        BranchEndpoints(dx=1.0, initial={label: psi for label in BRANCHES[:3]}, final={label: psi for label in BRANCHES})


def test_ideal_phase_gate_has_unit_fidelity():
    result = process_fidelity(_endpoints([0.0, 0.0, 0.0, math.pi]))
    assert result.fidelity == pytest.approx(1.0, abs=1e-9)
    assert result.literal.fidelity == pytest.approx(1.0, abs=1e-9)


def test_identity_is_the_worst_phase_gate():
    """Half the weight on |11> turns the missing pi phase into zero overlap."""
    result = process_fidelity(_endpoints([0.0, 0.0, 0.0, 0.0]))
    assert result.fidelity == pytest.approx(0.0, abs=1e-9)
    chi = result.local_z.chi
    assert abs(chi[3]) ** 2 == pytest.approx(0.5, abs=1e-3)


def test_local_z_mode_forgives_single_qubit_phases():
    phi_1, phi_2 = 0.5, 0.3
    result = process_fidelity(_endpoints([0.0, phi_1, phi_2, phi_1 + phi_2 + math.pi]))
    assert result.local_z.fidelity == pytest.approx(1.0, abs=1e-9)
    # the literal target still asks for the bare phases; worst case weights 00 and 11 equally
    assert result.literal.fidelity == pytest.approx(math.cos(0.5 * (phi_1 + phi_2)) ** 2, abs=1e-5)


def test_target_phases():
    data = gram_data(_endpoints([0.1, 0.2, 0.3, 0.0]))
    theta = target_phases(data, "local_z")
    assert theta[3] == pytest.approx(0.2 + 0.3 - 0.1 + math.pi)
    literal = target_phases(data, "literal", gate_phase=math.pi / 2)
    assert literal == pytest.approx([0.0, 0.0, 0.0, math.pi / 2])
    with pytest.raises(FidelityError):
        target_phases(data, "global")
    with pytest.raises(FidelityError):
        target_phases(gram_data(_endpoints([0.0] * 4, reference=False)), "literal")


def test_mixture_of_identical_configurations():
    data = gram_data(_endpoints([0.0, 0.0, 0.0, math.pi]))
    mixed = mixture([(0.25, data), (0.75, data)])
    assert np.allclose(mixed.gram, data.gram)
    assert np.allclose(mixed.actual, data.actual)
    assert process_fidelity(mixed).fidelity == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(FidelityError):
        mixture([])


def test_process_fidelity_without_reference_skips_literal():
    result = process_fidelity(_endpoints([0.0, 0.0, 0.0, math.pi], reference=False))
    assert result.literal is None
    assert result.to_dict()["literal"] is None


def test_fidelity_ignores_a_common_phase_on_all_branches():
    plain = process_fidelity(_endpoints(IMPERFECT_PHASES))
    shifted = process_fidelity(_endpoints([phase + 0.7 for phase in IMPERFECT_PHASES]))
    assert plain.local_z.fidelity < 1 - 1e-3
    assert shifted.local_z.fidelity == pytest.approx(plain.local_z.fidelity, abs=1e-7)
    assert shifted.literal.fidelity == pytest.approx(plain.literal.fidelity, abs=1e-7)


def test_random_restarts_find_the_same_minimum():
    single = process_fidelity(_endpoints(IMPERFECT_PHASES))
    restarted = process_fidelity(_endpoints(IMPERFECT_PHASES), restarts=4, seed=3)
    assert restarted.local_z.fidelity == pytest.approx(single.local_z.fidelity, abs=1e-6)
    assert restarted.literal.fidelity == pytest.approx(single.literal.fidelity, abs=1e-6)


def test_surface_adjusted_fidelity():
    assert surface_adjusted_fidelity(0.99, 1e-3) == pytest.approx(0.99 * 0.999)


class TestThermalOccupations:
    def test_zero_temperature_is_ground_state(self):
        ensemble = thermal_occupations(0.0, 1e4, 2)
        assert list(ensemble.occupations) == [1.0, 0.0, 0.0]
        assert ensemble.configurations() == [(0, 0, 1.0)]

    def test_boltzmann_ratios(self):
        omega = 2 * math.pi * 4.432e3
        temperature = DEFAULT_CONSTANTS.hbar * omega / DEFAULT_CONSTANTS.k_B
        ensemble = thermal_occupations(temperature, omega, 4)
        p = ensemble.occupations
        assert p.sum() == pytest.approx(1.0)
        assert p[1] / p[0] == pytest.approx(math.exp(-1.0))
        assert ensemble.P(0, 1) == pytest.approx(p[0] * p[1])
        assert ensemble.table().shape == (5, 5)
        assert ensemble.truncated_weight == pytest.approx(math.exp(-5.0))

    def test_well_energies_override_harmonic_ladder(self):
        omega = 1e4
        hbar = DEFAULT_CONSTANTS.hbar
        temperature = hbar * omega / DEFAULT_CONSTANTS.k_B
        ensemble = thermal_occupations(temperature, omega, 1, energies=np.array([0.5, 2.5]) * hbar * omega)
        assert ensemble.occupations[1] / ensemble.occupations[0] == pytest.approx(math.exp(-2.0))

    def test_floor_drops_rare_configurations(self):
        omega = 1e4
        temperature = 0.2 * DEFAULT_CONSTANTS.hbar * omega / DEFAULT_CONSTANTS.k_B
        ensemble = thermal_occupations(temperature, omega, 2)
        kept = {(n1, n2) for n1, n2, _ in ensemble.configurations(floor=1e-4)}
        assert (0, 0) in kept and (0, 1) in kept
        assert (2, 2) not in kept

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            thermal_occupations(-1.0, 1e4, 2)
        with pytest.raises(ValueError):
            thermal_occupations(1e-6, 1e4, -1)
        with pytest.raises(ValueError):
            thermal_occupations(1e-6, 1e4, 3, energies=np.zeros(2))
