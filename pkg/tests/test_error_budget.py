"""Tests for the Breit-Rabi helpers and the analytic error budget."""

import math

import numpy as np
import pytest
from scipy import constants as sc

from chipgate.error_budget import (
    BudgetEntry,
    ErrorBudget,
    assemble_error_budget,
    breit_rabi_energies,
    dephasing_time,
    differential_moment,
    differential_moment_root,
    drive_scales,
    large_detuning_check,
    mw_moment_shift,
    quasi1d_check,
    qubit_splitting,
    scattering_length_shift,
    surface_lifetime,
    surface_loss_error,
    two_photon_suppression,
)
from chipgate.exceptions import PerturbationError
from chipgate.potentials import PotentialSet, TransitionCoupling
from chipgate.units import DEFAULT_CONSTANTS, GAUSS, make_grid

MU_B = DEFAULT_CONSTANTS.mu_B
HBAR = DEFAULT_CONSTANTS.hbar


class TestBreitRabi:
    def test_magic_field(self):
        """The qubit splitting is first-order field insensitive near 3.23 G."""
        root = differential_moment_root()
        assert root / GAUSS == pytest.approx(3.229, abs=0.01)
        assert abs(float(differential_moment(root))) < 1e-6 * MU_B

    def test_splitting_is_minimal_at_the_magic_field(self):
        root = differential_moment_root()
        at_root = float(qubit_splitting(root))
        assert float(qubit_splitting(root - 0.5 * GAUSS)) > at_root
        assert float(qubit_splitting(root + 0.5 * GAUSS)) > at_root
        # about 431 Hz/G^2
        curvature = (float(qubit_splitting(root + GAUSS)) - at_root) / sc.h
        assert curvature == pytest.approx(431.0, rel=0.05)

    def test_zero_field_splitting_is_hyperfine(self):
        assert float(qubit_splitting(0.0)) == pytest.approx(HBAR * DEFAULT_CONSTANTS.omega_hfs, rel=1e-12)

    def test_low_field_zeeman_slope_of_stretched_states(self):
        b = 1e-7
        energies = breit_rabi_energies(b)
        assert len(energies) == 8
        spread = energies[(2, 2)] - energies[(2, -2)]
        assert spread == pytest.approx(4 * DEFAULT_CONSTANTS.g_F2 * MU_B * b, rel=1e-2)

    def test_field_range_is_checked(self):
        with pytest.raises(ValueError):
            qubit_splitting(100 * GAUSS)
        with pytest.raises(ValueError):
            differential_moment(-GAUSS)
        with pytest.raises(ValueError):
            differential_moment_root((5 * GAUSS, 6 * GAUSS))

    def test_vectorised_moment(self):
        fields = np.linspace(1, 5, 9) * GAUSS
        assert differential_moment(fields).shape == (9,)

    def test_moment_changes_sign_once_below_six_gauss(self):
        moment = differential_moment(np.linspace(0.0, 6.0, 601) * GAUSS)
        signs = np.sign(moment)
        assert np.count_nonzero(signs[1:] != signs[:-1]) == 1
        assert moment[0] < 0 < moment[-1]
        assert np.max(np.abs(moment)) < 3e-3 * MU_B


def test_mw_moment_shift():
    assert mw_moment_shift(0.1, 1.0) == pytest.approx(2.5e-3 * MU_B)
    assert mw_moment_shift(-0.29, 1.0) == pytest.approx(0.25 * 0.29**2 * MU_B)
    with pytest.raises(PerturbationError):
        mw_moment_shift(0.35, 1.0)
    with pytest.raises(PerturbationError):
        mw_moment_shift(3.0, -10.0)
    with pytest.raises(PerturbationError):
        mw_moment_shift(0.6, 1.0)
    with pytest.raises(PerturbationError):
        mw_moment_shift(0.1, 0.0)


def test_dephasing_time_of_drive_induced_moment():
    """A 2.5e-3 mu_B moment against 0.01 mG noise dephases in a few seconds."""
    tau_c = dephasing_time(2.5e-3 * MU_B, 1e-9)
    assert 4.0 < tau_c < 6.0
    assert dephasing_time(0.0, 1e-9) == math.inf
    with pytest.raises(ValueError):
        dephasing_time(-1.0, 1e-9)


def test_surface_loss():
    assert surface_loss_error(0.9, 1.11e-3) == pytest.approx(1e-3, rel=0.05)
    assert surface_lifetime(0.9) == pytest.approx(1 / 0.9)
    assert surface_lifetime(0.0) == math.inf
    with pytest.raises(ValueError):
        surface_loss_error(-1.0, 1e-3)


def test_two_photon_detuning_at_trap_field():
    estimate = two_photon_suppression(2 * math.pi * 1e6, 2 * math.pi * 1e6, 2 * math.pi * 25e6, 3.23 * GAUSS)
    assert estimate.delta_2ph / (2 * math.pi) == pytest.approx(2.26e6, rel=0.01)
    assert estimate.omega_2ph == pytest.approx(2 * math.pi * 2e4)
    assert estimate.ratio == pytest.approx((estimate.omega_2ph / estimate.delta_2ph) ** 2)
    with pytest.raises(PerturbationError):
        two_photon_suppression(1.0, 1.0, 1.0, 0.0)


def test_scattering_length_shift():
    assert scattering_length_shift(0.1, 1.0, 5.4e-9, 5.3e-9) == pytest.approx(0.005 * 0.1e-9)


def test_quasi1d_check():
    omega_perp = 2 * math.pi * 77.46e3
    verdict = quasi1d_check(0.25 * HBAR * omega_perp, omega_perp)
    assert verdict.ratio == pytest.approx(0.5)
    assert verdict.passed and verdict.within_headroom
    tight = quasi1d_check(0.4 * HBAR * omega_perp, omega_perp)
    assert tight.passed and not tight.within_headroom
    assert not quasi1d_check(HBAR * omega_perp, omega_perp).passed


def _couplings(omega=2 * math.pi * 1e6, delta=2 * math.pi * 25e6):
    return [
        TransitionCoupling(-1, 0, np.array([omega, 0.5 * omega]), np.array([delta, delta])),
        TransitionCoupling(0, 1, np.array([0.5 * omega, omega]), np.array([delta, 1.2 * delta])),
    ]


def test_large_detuning_check_warns(caplog):
    assert large_detuning_check(_couplings()) == pytest.approx((1 / 25) ** 2)
    assert large_detuning_check([]) == 0.0
    with caplog.at_level("WARNING"):
        large_detuning_check(_couplings(omega=2 * math.pi * 5e6))
    assert "Large-detuning condition violated" in caplog.text


def test_drive_scales_pick_worst_case():
    omega, delta = 2 * math.pi * 1e6, 2 * math.pi * 25e6
    assert drive_scales(_couplings(omega, delta)) == pytest.approx((omega, omega, delta))
    assert drive_scales(_couplings()[:1]) is None


def test_aggregate_counts_only_error_entries():
    budget = ErrorBudget()
    budget.add(BudgetEntry("a", 0.1, "x"))
    budget.add(BudgetEntry("b", 0.2, "y"))
    budget.add(BudgetEntry("ratio", 0.5, "z", kind="ratio"))
    budget.add(BudgetEntry("meta", 0.0, "w", kind="metadata"))
    assert budget.aggregate == pytest.approx(1 - 0.9 * 0.8)
    assert budget.get("ratio").value == 0.5
    with pytest.raises(KeyError):
        budget.get("missing")
    exported = budget.to_dict()
    assert len(exported["entries"]) == 4
    assert exported["aggregate"] == pytest.approx(budget.aggregate)


def test_budget_without_drive_information():
    budget = assemble_error_budget(tau_g=1e-3)
    names = [entry.name for entry in budget.entries]
    assert names == ["surface_loss", "dephasing", "technical_noise"]
    surface = budget.get("surface_loss").value
    dephasing = budget.get("dephasing").value
    assert budget.aggregate == pytest.approx(1 - (1 - surface) * (1 - dephasing))
    assert budget.get("dephasing").inputs["delta_mu_drive"] == 0.0


def test_budget_with_drive_couplings():
    grid = make_grid(-1e-6, 1e-6, 8)
    zeros = np.zeros(8)
    potentials = PotentialSet(
        grid=grid, u_c=zeros, u_0=zeros, u_1=zeros, omega_perp=np.full(8, 2 * math.pi * 77.46e3),
        d_x=1.32e-6, omega_x=1.0, omega_0=1.0, omega_1=1.0, couplings=_couplings(),
    )
    budget = assemble_error_budget(
        tau_g=1e-3, potentials=potentials, e_kin=1e-32, omega_perp=2 * math.pi * 77.46e3,
        a1d_ratio=0.01, noise_amplitude=0.01,
    )
    names = {entry.name for entry in budget.entries}
    assert {"two_photon", "scattering_length_shift", "large_detuning", "quasi1d", "a1d_energy"} <= names
    assert budget.get("dephasing").inputs["delta_mu_drive"] == pytest.approx(0.25 * (1 / 25) ** 2 * MU_B)
    assert budget.get("technical_noise").inputs["control_noise_amplitude"] == 0.01
    errors = [entry for entry in budget.entries if entry.kind == "error"]
    survival = np.prod([1 - entry.value for entry in errors])
    assert budget.aggregate == pytest.approx(1 - survival)
