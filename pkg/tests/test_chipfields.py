"""Tests for DC wire fields, the CPW cross section and chip layouts."""

import json
import math

import numpy as np
import pytest
from scipy import constants as sc

from chipgate.chipfields import (
    FIELD_MAP_HEADER,
    BiasField,
    CPWResult,
    CPWSpec,
    FieldWindow,
    WireSegment,
    apply_compensation,
    classify_point,
    classify_points,
    cpw_impedance,
    current_density_check,
    export_field_maps,
    field_of_rectangular_wire,
    load_layout,
    locate_trap,
    mw_field_at,
    reference_layout,
    skin_depth,
    solve_cpw,
    total_static_field,
)
from chipgate.exceptions import GeometryError


@pytest.fixture
def long_wire():
    return WireSegment(start=(-1e-3, 0.0, 0.0), end=(1e-3, 0.0, 0.0), width=1e-6, thickness=1e-6, current=1.0, label="W")


def test_long_wire_matches_infinite_wire_limit(long_wire):
    """Far from a long wire the field approaches mu_0 I / (2 pi r)."""
    r = 10e-6
    b = field_of_rectangular_wire(long_wire, (0.0, 0.0, r))
    expected = sc.mu_0 / (2 * math.pi * r)
    assert np.linalg.norm(b) == pytest.approx(expected, rel=1e-3)
    # current along +x, point above: field along -y
    assert b[1] < 0
    assert abs(b[0]) < 1e-6 * expected


def test_wire_field_is_linear_in_current(long_wire):
    point = (0.0, 3e-6, 4e-6)
    single = field_of_rectangular_wire(long_wire, point)
    double = field_of_rectangular_wire(long_wire.with_current(2.0), point)
    assert np.allclose(double, 2 * single)


def test_wire_field_accepts_point_arrays(long_wire):
    points = np.array([[0.0, 0.0, 5e-6], [0.0, 0.0, 10e-6]])
    fields = field_of_rectangular_wire(long_wire, points)
    assert fields.shape == (2, 3)
    assert np.linalg.norm(fields[0]) == pytest.approx(2 * np.linalg.norm(fields[1]), rel=1e-2)


def test_time_dependent_current_ramp(long_wire):
    ramped = long_wire.with_current(lambda t: 1.0 + t)
    point = (0.0, 0.0, 10e-6)
    assert np.allclose(
        field_of_rectangular_wire(ramped, point, t=1.0),
        2 * field_of_rectangular_wire(long_wire, point),
    )


def test_wire_rejects_vertical_or_degenerate_segments():
    with pytest.raises(GeometryError):
        WireSegment(start=(0, 0, 0), end=(0, 0, 1e-3), width=1e-6, thickness=1e-6, current=1.0)
    with pytest.raises(GeometryError):
        WireSegment(start=(0, 0, 0), end=(0, 0, 0), width=1e-6, thickness=1e-6, current=1.0)
    with pytest.raises(GeometryError):
        WireSegment(start=(0, 0, 0), end=(1e-3, 0, 0), width=0.0, thickness=1e-6, current=1.0)


def test_classify_point(long_wire):
    assert classify_point(long_wire, (0.0, 0.0, 0.0)) == "inside"
    assert classify_point(long_wire, (0.0, 0.5e-6, 0.0)) == "edge"
    assert classify_point(long_wire, (0.0, 0.0, 5e-6)) == "outside"


def test_classify_points_labels_every_point(long_wire):
    points = np.array([[0.0, 0.0, 5e-6]] * 100 + [[0.0, 0.0, 0.0], [0.0, 0.5e-6, 0.0]])
    labels = classify_points(long_wire, points)
    assert labels.shape == (102,)
    assert list(labels[-3:]) == ["outside", "inside", "edge"]


def test_field_inside_conductor_is_reported_beyond_the_first_points(long_wire, caplog):
    points = np.zeros((200, 3))
    points[:, 2] = 5e-6
    points[150] = (0.0, 0.0, 0.0)
    with caplog.at_level("WARNING", logger="chipgate.chipfields"):
        field_of_rectangular_wire(long_wire, points)
    messages = [record.getMessage() for record in caplog.records]
    assert messages == ["Field evaluated inside conductor volume at 1 point(s)"]
    assert caplog.records[0].point == [0.0, 0.0, 0.0]


def test_total_field_adds_bias(long_wire):
    bias = BiasField(Bx=1e-4, By=0.0, Bz=0.0)
    point = (0.0, 0.0, 10e-6)
    total = total_static_field([long_wire], bias, point)
    assert np.allclose(total - field_of_rectangular_wire(long_wire, point), [1e-4, 0.0, 0.0])


def test_bias_field_rejects_non_finite():
    with pytest.raises(GeometryError):
        BiasField(Bx=math.inf)


def test_skin_depth_of_gold_at_drive_frequency():
    """About 0.9 um for gold at 6.8 GHz, so a 200 nm film carries a uniform current."""
    delta = skin_depth(2 * math.pi * 6.8e9, 4.5e7)
    assert delta == pytest.approx(0.91e-6, rel=0.02)
    assert skin_depth(1.0, math.inf) == 0.0
    with pytest.raises(ValueError):
        skin_depth(0.0, 1.0)


def test_cpw_impedance_lossless_line():
    """R = 0 gives a real impedance sqrt(L/C) and no attenuation."""
    z_c, beta, alpha = cpw_impedance(0.0, 4e-7, 1e-10, 2 * math.pi * 1e9)
    assert z_c.imag == pytest.approx(0.0, abs=1e-9)
    assert z_c.real == pytest.approx(math.sqrt(4e-7 / 1e-10))
    assert alpha == pytest.approx(0.0, abs=1e-9)
    assert beta == pytest.approx(2 * math.pi * 1e9 * math.sqrt(4e-7 * 1e-10))


def test_cpw_impedance_lossy_line_phase():
    """A resistive line has Re(Z_c) > 0 and -pi/4 < arg(Z_c) < 0."""
    z_c, beta, alpha = cpw_impedance(2e5, 3e-7, 2.6e-10, 2 * math.pi * 6.8e9)
    assert z_c.real > 0
    assert -math.pi / 4 < np.angle(z_c) < 0
    assert alpha > 0 and beta > 0


def test_cpw_spec_validation():
    with pytest.raises(GeometryError):
        CPWSpec(w=0.0, s=1e-7, t=2e-7, ground_width=8e-7, sigma=4.5e7, eps_r=11.9, omega=1.0)
    with pytest.raises(GeometryError):
        CPWSpec(w=8e-7, s=1e-7, t=2e-7, ground_width=8e-7, sigma=4.5e7, eps_r=0.5, omega=1.0)


def _toy_result():
    spec = reference_layout().cpw
    x = np.linspace(-1e-6, 1e-6, 5)
    z = np.linspace(-1e-6, 1e-6, 4)
    xx, zz = np.meshgrid(x, z, indexing="ij")
    return CPWResult(
        spec=spec, Z_c=100 - 50j, R=1.0, L=1.0, C=1.0, beta=1.0, alpha=1.0, x=x, z=z,
        Bx=xx + zz, Bz=xx - zz, Ex=2 * xx, Ez=3 * zz,
    )


def test_field_maps_are_linear_in_drive():
    result = _toy_result()
    rows_1 = np.array(export_field_maps(result, v0=1.0, i0=1.0))
    rows_2 = np.array(export_field_maps(result, v0=2.0, i0=3.0))
    assert rows_1.shape == (20, 7)
    assert FIELD_MAP_HEADER == ("x", "z", "Bx", "By", "Bz", "Ex", "Ez")
    assert np.allclose(rows_2[:, :2], rows_1[:, :2])
    assert np.allclose(rows_2[:, 2:5], 3 * rows_1[:, 2:5])
    assert np.allclose(rows_2[:, 5:], 2 * rows_1[:, 5:])


def test_mw_field_at_interpolates_and_checks_window():
    result = _toy_result()
    b, e = mw_field_at(result, v0=1.0, i0=2.0, point=(0.5e-6, 0.0, 0.25e-6))
    assert b == pytest.approx([2 * 0.75e-6, 0.0, 2 * 0.25e-6])
    assert e == pytest.approx([1e-6, 0.0, 0.75e-6])
    with pytest.raises(GeometryError):
        mw_field_at(result, 1.0, 1.0, (5e-6, 0.0))


def test_solver_margin_must_cover_five_half_widths():
    with pytest.raises(GeometryError):
        solve_cpw(reference_layout().cpw, FieldWindow(margin=1e-6, cell=5e-8))


@pytest.mark.slow
def test_solve_cpw_reference_cross_section():
    """Direct solve on a coarse mesh: lossy line with fields decaying away from the CPW."""
    result = solve_cpw(reference_layout().cpw, FieldWindow(margin=9e-6, cell=5e-8), method="direct")
    assert result.Z_c.real > 0
    assert -math.pi / 4 < np.angle(result.Z_c) < 0
    assert result.C > 0 and result.L > 0
    summary = result.summary()
    assert summary["uniform_current"] is True


def test_reference_layout_loads():
    layout = reference_layout()
    assert {w.label for w in layout.wires} == {"T", "L", "C", "R"}
    assert layout.center_label == "C"
    assert layout.surface_height == pytest.approx(0.1e-6)


def test_load_layout_reports_malformed_file(tmp_path):
    path = tmp_path / "chip.json"
    path.write_text(json.dumps({"wires": []}), encoding="utf-8")
    with pytest.raises(GeometryError, match="malformed layout"):
        load_layout(path)
    with pytest.raises(GeometryError):
        load_layout(tmp_path / "missing.json")


def test_apply_compensation_installs_ramps():
    layout = reference_layout()
    compensated = apply_compensation(layout, lambda t: -4.464e-4 + t, lambda t: -0.813e-3 - t)
    assert compensated.bias.at(1e-4)[0] == pytest.approx(-4.464e-4 + 1e-4)
    assert compensated.wire("C").current_at(1e-4) == pytest.approx(-0.813e-3 - 1e-4)
    # the original layout is untouched
    assert layout.wire("C").current_at(1e-4) == pytest.approx(-0.813e-3)
    with pytest.raises(GeometryError):
        layout.wire("Z")


def test_current_density_check_counts_microwave_share():
    layout = reference_layout()
    static = {e.label: e for e in current_density_check(layout)}
    driven = {e.label: e for e in current_density_check(layout, mw_peak_current=15.343e-3)}
    area = 0.8e-6 * 0.2e-6
    assert driven["C"].density - static["C"].density == pytest.approx(15.343e-3 / area)
    assert driven["L"].density - static["L"].density == pytest.approx(0.5 * 15.343e-3 / area)
    assert driven["T"].density == pytest.approx(static["T"].density)
    assert driven["T"].limit > driven["C"].limit


@pytest.mark.slow
def test_locate_trap_on_reference_chip():
    """Two minima above the surface, separated along the axis."""
    trap = locate_trap(reference_layout())
    assert trap.left[0] < trap.right[0]
    assert trap.separation > 0.2e-6
    assert trap.height > 0
    assert trap.b_min > 0


def test_field_of_short_wire_is_divergence_free():
    """Central differences of B near the end of a short wire: div B vanishes against the local gradient."""
    wire = WireSegment(start=(-5e-6, 0.0, 0.0), end=(5e-6, 0.0, 0.0), width=2e-6, thickness=1e-6, current=1.0)
    h = 1e-8
    for center in ([4e-6, 2e-6, 3e-6], [6e-6, -1e-6, 2e-6], [0.0, 3e-6, -2e-6]):
        offsets = np.vstack([h * np.eye(3), -h * np.eye(3)])
        fields = field_of_rectangular_wire(wire, np.asarray(center) + offsets)
        jacobian = (fields[:3] - fields[3:]) / (2 * h)  # row j: dB/dx_j
        divergence = np.trace(jacobian)
        assert abs(divergence) < 1e-3 * np.max(np.abs(jacobian))
