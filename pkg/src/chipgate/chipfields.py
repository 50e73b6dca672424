"""
Quasi-static fields of the chip.

Magnetostatics of finite rectangular conductors (DC wires and bias), the 2D
electrostatic and magneto-quasistatic cross section of the coplanar waveguide,
and the transmission-line parameters extracted from it.

Chip frame: the chip surface is the xy-plane, z points away from the
substrate. The CPW wires run along y, so its cross section is the xz-plane.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import optimize
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from chipgate.constants import (
    CPW_CURRENT_DENSITY_LIMIT,
    LOWER_WIRE_CURRENT_DENSITY_LIMIT,
)
from chipgate.exceptions import DoubleWellError, GeometryError, SolverConvergenceError
from chipgate.units import DEFAULT_CONSTANTS, PhysicalConstants

logger = logging.getLogger(__name__)

REFERENCE_LAYOUT_PATH = Path(__file__).parent / "data" / "reference_chip.json"

Scalar = Union[float, Callable[[float], float]]

_Z_HAT = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# DC wires and bias
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WireSegment:
    """Straight conductor with a rectangular cross section.

    `start` and `end` are the centroids of the end faces. The width lies in
    the chip plane, the thickness along z.
    """

    start: tuple
    end: tuple
    width: float
    thickness: float
    current: float
    label: str = ""
    current_ramp: Optional[Callable[[float], float]] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "end", tuple(float(v) for v in self.end))
        if not (self.width > 0 and self.thickness > 0):
            raise GeometryError(f"wire {self.label or '?'}: width and thickness must be positive")
        length = np.linalg.norm(np.subtract(self.end, self.start))
        if not (np.isfinite(length) and length > 0):
            raise GeometryError(f"wire {self.label or '?'}: length must be finite and non-zero")
        if abs(self.direction[2]) > 1e-12:
            raise GeometryError(f"wire {self.label or '?'}: conductors must run parallel to the chip plane")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.end, self.start)))

    @property
    def direction(self) -> np.ndarray:
        delta = np.subtract(self.end, self.start)
        return delta / np.linalg.norm(delta)

    @property
    def width_axis(self) -> np.ndarray:
        axis = np.cross(_Z_HAT, self.direction)
        return axis / np.linalg.norm(axis)

    def current_at(self, t: float) -> float:
        if self.current_ramp is not None:
            return float(self.current_ramp(t))
        return self.current

    def with_current(self, current: Union[float, Callable[[float], float]]) -> "WireSegment":
        if callable(current):
            return replace(self, current_ramp=current)
        return replace(self, current=float(current), current_ramp=None)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "start": list(self.start),
            "end": list(self.end),
            "width": self.width,
            "thickness": self.thickness,
            "current": self.current,
        }


@dataclass(frozen=True)
class BiasField:
    """Homogeneous bias; each component is a constant or a function of time."""

    Bx: Scalar = 0.0
    By: Scalar = 0.0
    Bz: Scalar = 0.0

    def __post_init__(self) -> None:
        for name in ("Bx", "By", "Bz"):
            value = getattr(self, name)
            if not callable(value) and not math.isfinite(value):
                raise GeometryError(f"bias component {name} must be finite")

    def at(self, t: float = 0.0) -> np.ndarray:
        return np.array([
            float(component(t)) if callable(component) else float(component)
            for component in (self.Bx, self.By, self.Bz)
        ])

    def to_dict(self) -> dict:
        return {name: (None if callable(value) else value) for name, value in
                (("Bx", self.Bx), ("By", self.By), ("Bz", self.Bz))}


def classify_points(segment: WireSegment, points, rel_tol: float = 1e-6) -> np.ndarray:
    """Label each point "inside", "edge" or "outside" relative to the conductor volume."""
    u = segment.direction
    w_axis = segment.width_axis
    t_axis = np.cross(u, w_axis)
    rel = np.asarray(points, dtype=float).reshape(-1, 3) - np.asarray(segment.start)
    s = rel @ u
    a = np.abs(rel @ w_axis) - segment.width / 2
    b = np.abs(rel @ t_axis) - segment.thickness / 2
    tol = rel_tol * max(segment.width, segment.thickness)
    along = np.minimum(s, segment.length - s)
    outside = (along < -tol) | (a > tol) | (b > tol)
    edge = ~outside & ((along < tol) | (a > -tol) | (b > -tol))
    return np.where(outside, "outside", np.where(edge, "edge", "inside"))


def classify_point(segment: WireSegment, point: Sequence[float], rel_tol: float = 1e-6) -> str:
    """Return "inside", "edge" or "outside" for a point relative to the conductor volume."""
    return str(classify_points(segment, point, rel_tol)[0])


def _filament_field(start: np.ndarray, end: np.ndarray, points: np.ndarray, mu_0: float) -> np.ndarray:
    """Field per ampere of thin straight filaments; starts/ends (F, 3), points (P, 3) -> (F, P, 3)."""
    seg = end - start
    length = np.linalg.norm(seg, axis=-1)
    u = seg / length[:, None]
    a = points[None, :, :] - start[:, None, :]
    b = points[None, :, :] - end[:, None, :]
    along = np.einsum("fpk,fk->fp", a, u)
    perp = a - along[..., None] * u[:, None, :]
    dist = np.linalg.norm(perp, axis=-1)
    norm_a = np.linalg.norm(a, axis=-1)
    norm_b = np.linalg.norm(b, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos1 = along / norm_a
        cos2 = np.einsum("fpk,fk->fp", b, u) / norm_b
        magnitude = mu_0 / (4.0 * np.pi * dist) * (cos1 - cos2)
        direction = np.cross(u[:, None, :], perp) / dist[..., None]
    out = magnitude[..., None] * direction
    # on the filament axis the field is the symmetric limit, zero
    out[~np.isfinite(out)] = 0.0
    return out


def field_of_rectangular_wire(
    segment: WireSegment,
    point: Union[Sequence[float], np.ndarray],
    t: float = 0.0,
    order: int = 8,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Magnetic field (T) of a uniformly filled rectangular conductor of finite length.

    The cross section is integrated with a Gauss-Legendre product rule over
    straight filaments. Points may be a single 3-vector or an (..., 3) array.
    """
    points = np.asarray(point, dtype=float)
    flat = points.reshape(-1, 3)

    labels = classify_points(segment, flat)
    for where, wording in (("inside", "inside"), ("edge", "on the edge of")):
        hits = np.flatnonzero(labels == where)
        if hits.size:
            logger.warning(
                "Field evaluated %s conductor volume at %d point(s)", wording, hits.size,
                extra={"wire": segment.label, "point": flat[hits[0]].tolist()},
            )

    nodes, weights = np.polynomial.legendre.leggauss(order)
    w_axis = segment.width_axis
    t_axis = np.cross(segment.direction, w_axis)
    ww, tt = np.meshgrid(nodes * segment.width / 2, nodes * segment.thickness / 2, indexing="ij")
    wgt = np.outer(weights, weights).ravel() / 4.0
    offsets = ww.ravel()[:, None] * w_axis + tt.ravel()[:, None] * t_axis

    starts = np.asarray(segment.start) + offsets
    ends = np.asarray(segment.end) + offsets
    per_amp = _filament_field(starts, ends, flat, constants.mu_0)
    field_values = segment.current_at(t) * np.einsum("f,fpk->pk", wgt, per_amp)
    return field_values.reshape(points.shape)


def total_static_field(
    wires: Iterable[WireSegment],
    bias: BiasField,
    point: Union[Sequence[float], np.ndarray],
    t: float = 0.0,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Superposition of all wire fields and the bias at time t."""
    points = np.asarray(point, dtype=float)
    total = np.broadcast_to(bias.at(t), points.shape).copy()
    for wire in wires:
        total += field_of_rectangular_wire(wire, points, t=t, constants=constants)
    return total


# ---------------------------------------------------------------------------
# CPW cross section
# ---------------------------------------------------------------------------


def skin_depth(omega: float, sigma: float, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """delta_s = sqrt(2 / (omega mu_0 sigma)); an infinite conductivity gives 0."""
    if omega <= 0 or sigma <= 0:
        raise ValueError("omega and sigma must be positive")
    if math.isinf(sigma):
        return 0.0
    return math.sqrt(2.0 / (omega * constants.mu_0 * sigma))


@dataclass(frozen=True)
class CPWSpec:
    """Coplanar waveguide cross section (center, gaps, two ground wires)."""

    w: float
    s: float
    t: float
    ground_width: float
    sigma: float
    eps_r: float
    omega: float

    def __post_init__(self) -> None:
        for name in ("w", "s", "t", "ground_width", "omega"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"CPW {name} must be positive")
        if not self.sigma > 0:
            raise GeometryError("CPW conductivity must be positive")
        if self.eps_r < 1:
            raise GeometryError("substrate permittivity must be >= 1")

    @property
    def skin_depth(self) -> float:
        return skin_depth(self.omega, self.sigma)

    @property
    def uniform_current(self) -> bool:
        """True when the conductors are thinner than the skin depth."""
        return self.t < self.skin_depth

    @property
    def half_width(self) -> float:
        return self.w / 2 + self.s + self.ground_width

    @property
    def ground_center(self) -> float:
        return self.w / 2 + self.s + self.ground_width / 2

    def to_dict(self) -> dict:
        return {
            "w": self.w,
            "s": self.s,
            "t": self.t,
            "ground_width": self.ground_width,
            "sigma": self.sigma,
            "eps_r": self.eps_r,
            "freq": self.omega / (2 * math.pi),
        }


@dataclass(frozen=True)
class FieldWindow:
    """Solver window around the CPW: margin around the conductors and mesh cell."""

    margin: float = 10e-6
    cell: float = 20e-9
    tol: float = 1e-7
    max_iter: int = 50000


@dataclass(frozen=True)
class Conductor:
    """Rectangle in the xz cross section with a prescribed potential (V) or current (A)."""

    x_min: float
    x_max: float
    z_min: float
    z_max: float
    value: float


@dataclass
class Mesh2D:
    x: np.ndarray
    z: np.ndarray
    cell: float

    @property
    def shape(self) -> tuple:
        return (self.x.size, self.z.size)

    def mask(self, conductor: Conductor) -> np.ndarray:
        tol = 1e-6 * self.cell
        in_x = (self.x >= conductor.x_min - tol) & (self.x <= conductor.x_max + tol)
        in_z = (self.z >= conductor.z_min - tol) & (self.z <= conductor.z_max + tol)
        return in_x[:, None] & in_z[None, :]


def make_mesh(bounds: tuple, cell: float) -> Mesh2D:
    """Uniform square-cell mesh whose nodes sit on integer multiples of `cell`."""
    x_lo, x_hi, z_lo, z_hi = bounds
    i_lo, i_hi = math.floor(x_lo / cell + 1e-9), math.ceil(x_hi / cell - 1e-9)
    k_lo, k_hi = math.floor(z_lo / cell + 1e-9), math.ceil(z_hi / cell - 1e-9)
    if i_hi - i_lo < 4 or k_hi - k_lo < 4:
        raise GeometryError("solver window is smaller than four cells")
    return Mesh2D(np.arange(i_lo, i_hi + 1) * cell, np.arange(k_lo, k_hi + 1) * cell, cell)


def _edge_coefficients(mesh: Mesh2D, eps_cells: np.ndarray) -> tuple:
    """Coupling of each node to its +x and +z neighbours (finite-volume average of cell values)."""
    nx, nz = mesh.shape
    padded = np.pad(eps_cells, 1, mode="edge")
    # padded[i+1, k+1] is the cell between nodes (i, k) and (i+1, k+1)
    east = np.zeros((nx, nz))
    north = np.zeros((nx, nz))
    east[:-1, :] = 0.5 * (padded[1:-1, 1:] + padded[1:-1, :-1])
    north[:, :-1] = 0.5 * (padded[1:, 1:-1] + padded[:-1, 1:-1])
    return east, north


def solve_poisson_2d(
    mesh: Mesh2D,
    eps_cells: np.ndarray,
    fixed: np.ndarray,
    fixed_values: np.ndarray,
    source: Optional[np.ndarray] = None,
    method: str = "sor",
    tol: float = 1e-7,
    max_iter: int = 50000,
) -> np.ndarray:
    """Solve div(eps grad phi) = -source on the mesh with Dirichlet nodes `fixed`.

    The window edge is always fixed. `method` is "sor" (red-black successive
    over-relaxation) or "direct" (sparse LU on the same discretisation).
    """
    nx, nz = mesh.shape
    fixed = fixed.copy()
    fixed[0, :] = fixed[-1, :] = True
    fixed[:, 0] = fixed[:, -1] = True
    values = np.where(fixed, fixed_values, 0.0)
    forcing = np.zeros((nx, nz)) if source is None else source * mesh.cell**2

    east, north = _edge_coefficients(mesh, eps_cells)
    west = np.zeros_like(east)
    south = np.zeros_like(north)
    west[1:, :] = east[:-1, :]
    south[:, 1:] = north[:, :-1]
    diag = east + west + north + south
    free = ~fixed

    if method == "direct":
        return _solve_direct(values, free, forcing, east, west, north, south, diag)
    if method != "sor":
        raise ValueError(f"unknown solver method {method!r}")

    phi = values.copy()
    parity = (np.add.outer(np.arange(nx), np.arange(nz)) % 2).astype(bool)
    colours = (free & ~parity, free & parity)
    relax = 2.0 / (1.0 + math.sin(math.pi / max(nx, nz)))
    scale = max(np.abs(values).max(), np.abs(forcing).max() / diag.max(), 1e-300)
    residual = math.inf

    for iteration in range(1, max_iter + 1):
        for colour in colours:
            neighbours = (
                east * np.roll(phi, -1, 0) + west * np.roll(phi, 1, 0)
                + north * np.roll(phi, -1, 1) + south * np.roll(phi, 1, 1)
            )
            target = (neighbours[colour] + forcing[colour]) / diag[colour]
            phi[colour] += relax * (target - phi[colour])
        if iteration % 50 == 0:
            neighbours = (
                east * np.roll(phi, -1, 0) + west * np.roll(phi, 1, 0)
                + north * np.roll(phi, -1, 1) + south * np.roll(phi, 1, 1)
            )
            residual = float(np.abs((neighbours + forcing - diag * phi)[free] / diag[free]).max()) / scale
            if residual < tol:
                logger.debug("SOR converged", extra={"iterations": iteration, "residual": residual})
                return phi
    raise SolverConvergenceError(f"SOR did not converge in {max_iter} iterations", residual)


def _solve_direct(values, free, forcing, east, west, north, south, diag) -> np.ndarray:
    nx, nz = values.shape
    index = -np.ones((nx, nz), dtype=int)
    index[free] = np.arange(int(free.sum()))
    rhs = forcing[free].copy()
    rows, cols, data = [index[free]], [index[free]], [diag[free]]

    for coef, shift in ((east, (-1, 0)), (west, (1, 0)), (north, (-1, 1)), (south, (1, 1))):
        neighbour_index = np.roll(index, shift[0], shift[1])
        neighbour_value = np.roll(values, shift[0], shift[1])
        neighbour_free = np.roll(free, shift[0], shift[1])
        couple = free & (coef > 0)
        inner = couple & neighbour_free
        rows.append(index[inner])
        cols.append(neighbour_index[inner])
        data.append(-coef[inner])
        boundary = couple & ~neighbour_free
        np.add.at(rhs, index[boundary], coef[boundary] * neighbour_value[boundary])

    n = rhs.size
    matrix = coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsc()
    phi = values.copy()
    phi[free] = spsolve(matrix, rhs)
    return phi


def _edge_energy(phi: np.ndarray, mesh: Mesh2D, eps_cells: np.ndarray) -> float:
    """sum over edges of coupling * (difference)^2, the discrete integral of eps |grad phi|^2."""
    east, north = _edge_coefficients(mesh, eps_cells)
    dx = np.zeros_like(phi)
    dz = np.zeros_like(phi)
    dx[:-1, :] = phi[1:, :] - phi[:-1, :]
    dz[:, :-1] = phi[:, 1:] - phi[:, :-1]
    return float(np.sum(east * dx**2) + np.sum(north * dz**2))


@dataclass
class LaplaceSolution:
    mesh: Mesh2D
    potential: np.ndarray
    Ex: np.ndarray
    Ez: np.ndarray
    capacitance: float


def solve_electrostatics(
    conductors: Sequence[Conductor],
    bounds: tuple,
    cell: float,
    eps_r: float = 1.0,
    substrate_top: Optional[float] = None,
    method: str = "sor",
    tol: float = 1e-7,
    max_iter: int = 50000,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> LaplaceSolution:
    """Laplace problem for fixed conductor potentials with an optional dielectric half-space.

    Capacitance per unit length is 2W/V^2 with V the largest potential
    difference between conductors (or to the grounded window edge).
    """
    mesh = make_mesh(bounds, cell)
    nx, nz = mesh.shape
    z_cells = 0.5 * (mesh.z[:-1] + mesh.z[1:])
    eps_cells = np.ones((nx - 1, nz - 1))
    if substrate_top is not None:
        eps_cells[:, z_cells < substrate_top] = eps_r

    fixed = np.zeros((nx, nz), dtype=bool)
    fixed_values = np.zeros((nx, nz))
    for conductor in conductors:
        mask = mesh.mask(conductor)
        if not mask.any():
            raise GeometryError("conductor does not cover any mesh node; refine the cell size")
        fixed |= mask
        fixed_values[mask] = conductor.value

    phi = solve_poisson_2d(mesh, eps_cells, fixed, fixed_values, method=method, tol=tol, max_iter=max_iter)
    grad_x, grad_z = np.gradient(phi, mesh.cell, mesh.cell)
    levels = [c.value for c in conductors] + [0.0]
    swing = max(levels) - min(levels)
    energy2 = constants.epsilon_0 * _edge_energy(phi, mesh, eps_cells)
    capacitance = energy2 / swing**2 if swing > 0 else 0.0
    return LaplaceSolution(mesh, phi, -grad_x, -grad_z, capacitance)


@dataclass
class MagnetostaticSolution:
    mesh: Mesh2D
    vector_potential: np.ndarray
    Bx: np.ndarray
    Bz: np.ndarray
    inductance: float
    current_density: np.ndarray


def solve_magnetoquasistatics(
    conductors: Sequence[Conductor],
    bounds: tuple,
    cell: float,
    method: str = "sor",
    tol: float = 1e-7,
    max_iter: int = 50000,
    constants: PhysicalConstants = DEFAULT_CONSTANTS,
) -> MagnetostaticSolution:
    """Longitudinal vector potential A_y of uniform currents along y.

    -lap A = mu_0 J, B_x = -dA/dz, B_z = dA/dx; L = int(A J) / I_ref^2 with
    I_ref the largest conductor current.
    """
    mesh = make_mesh(bounds, cell)
    nx, nz = mesh.shape
    density = np.zeros((nx, nz))
    for conductor in conductors:
        mask = mesh.mask(conductor)
        if not mask.any():
            raise GeometryError("conductor does not cover any mesh node; refine the cell size")
        # node count stands in for the area so the discrete current is exact
        density[mask] += conductor.value / (mask.sum() * mesh.cell**2)

    ones = np.ones((nx - 1, nz - 1))
    fixed = np.zeros((nx, nz), dtype=bool)
    vector_potential = solve_poisson_2d(
        mesh, ones, fixed, np.zeros((nx, nz)), source=constants.mu_0 * density,
        method=method, tol=tol, max_iter=max_iter,
    )
    grad_x, grad_z = np.gradient(vector_potential, mesh.cell, mesh.cell)
    reference = max(abs(c.value) for c in conductors)
    inductance = float(np.sum(vector_potential * density) * mesh.cell**2) / reference**2
    return MagnetostaticSolution(mesh, vector_potential, -grad_z, grad_x, inductance, density)


def _cpw_bounds(spec: CPWSpec, window: FieldWindow) -> tuple:
    if window.margin < 5 * spec.half_width:
        raise GeometryError(
            f"solver margin {window.margin:.2e} m is below five CPW half-widths ({5 * spec.half_width:.2e} m)"
        )
    extent = spec.half_width + window.margin
    return (-extent, extent, -spec.t / 2 - window.margin, spec.t / 2 + window.margin)


def _cpw_conductors(spec: CPWSpec, center: float, grounds: float) -> list:
    z0, z1 = -spec.t / 2, spec.t / 2
    g0 = spec.w / 2 + spec.s
    g1 = g0 + spec.ground_width
    return [
        Conductor(-g1, -g0, z0, z1, grounds),
        Conductor(-spec.w / 2, spec.w / 2, z0, z1, center),
        Conductor(g0, g1, z0, z1, grounds),
    ]


def cpw_electrostatics(
    spec: CPWSpec,
    window: FieldWindow = FieldWindow(),
    v0: float = 1.0,
    method: str = "sor",
) -> LaplaceSolution:
    """Center conductor at v0, grounds at 0, substrate of eps_r below the conductor plane."""
    if not spec.uniform_current:
        logger.warning("Conductor thickness exceeds the skin depth", extra={"t": spec.t, "skin_depth": spec.skin_depth})
    return solve_electrostatics(
        _cpw_conductors(spec, v0, 0.0),
        _cpw_bounds(spec, window),
        window.cell,
        eps_r=spec.eps_r,
        substrate_top=-spec.t / 2,
        method=method,
        tol=window.tol,
        max_iter=window.max_iter,
    )


def cpw_resistance(spec: CPWSpec) -> float:
    """DC resistance per length of the return circuit: center plus two grounds in parallel."""
    center = 1.0 / (spec.sigma * spec.w * spec.t)
    ground = 1.0 / (spec.sigma * spec.ground_width * spec.t)
    return center + ground / 2.0


def cpw_magnetoquasistatics(
    spec: CPWSpec,
    window: FieldWindow = FieldWindow(),
    i0: float = 1.0,
    method: str = "sor",
) -> tuple:
    """Currents i0 on the center and -i0/2 on each ground. Returns (solution, R per length)."""
    solution = solve_magnetoquasistatics(
        _cpw_conductors(spec, i0, -i0 / 2.0),
        _cpw_bounds(spec, window),
        window.cell,
        method=method,
        tol=window.tol,
        max_iter=window.max_iter,
    )
    return solution, cpw_resistance(spec)


def cpw_impedance(R: float, L: float, C: float, omega: float) -> tuple:
    """Characteristic impedance and propagation constants (Z_c, beta, alpha) of an RLC line."""
    series = R + 1j * omega * L
    shunt = 1j * omega * C
    z_c = complex(np.sqrt(series / shunt))
    gamma = complex(np.sqrt(series * shunt))
    return z_c, gamma.imag, gamma.real


@dataclass
class CPWResult:
    """Line parameters and field maps per unit drive (1 V for E, 1 A for B)."""

    spec: CPWSpec
    Z_c: complex
    R: float
    L: float
    C: float
    beta: float
    alpha: float
    x: np.ndarray
    z: np.ndarray
    Bx: np.ndarray
    Bz: np.ndarray
    Ex: np.ndarray
    Ez: np.ndarray

    def summary(self) -> dict:
        return {
            "Z_c_abs": abs(self.Z_c),
            "Z_c_arg_over_pi": float(np.angle(self.Z_c) / np.pi),
            "R": self.R,
            "L": self.L,
            "C": self.C,
            "beta_mw": self.beta,
            "alpha_mw": self.alpha,
            "skin_depth": self.spec.skin_depth,
            "uniform_current": self.spec.uniform_current,
        }


def solve_cpw(spec: CPWSpec, window: FieldWindow = FieldWindow(), method: str = "sor") -> CPWResult:
    """Electrostatic and magneto-quasistatic solves plus line parameters."""
    electro = cpw_electrostatics(spec, window, method=method)
    magneto, resistance = cpw_magnetoquasistatics(spec, window, method=method)
    z_c, beta, alpha = cpw_impedance(resistance, magneto.inductance, electro.capacitance, spec.omega)
    logger.info(
        "CPW line parameters",
        extra={"Z_abs": abs(z_c), "Z_arg_pi": float(np.angle(z_c) / np.pi), "beta": beta, "alpha": alpha},
    )
    return CPWResult(
        spec=spec,
        Z_c=z_c,
        R=resistance,
        L=magneto.inductance,
        C=electro.capacitance,
        beta=beta,
        alpha=alpha,
        x=electro.mesh.x,
        z=electro.mesh.z,
        Bx=magneto.Bx,
        Bz=magneto.Bz,
        Ex=electro.Ex,
        Ez=electro.Ez,
    )


def mw_field_at(result: CPWResult, v0: float, i0: float, point: Sequence[float]) -> tuple:
    """Microwave amplitudes (B in T, E in V/m) at (x, z) or (x, y, z) chip coordinates."""
    pts = np.asarray(point, dtype=float)
    if pts.shape[-1] == 3:
        pts = pts[..., [0, 2]]
    flat = pts.reshape(-1, 2)
    x_ok = (flat[:, 0] >= result.x[0]) & (flat[:, 0] <= result.x[-1])
    z_ok = (flat[:, 1] >= result.z[0]) & (flat[:, 1] <= result.z[-1])
    if not np.all(x_ok & z_ok):
        raise GeometryError("point lies outside the simulated CPW window")

    grid = (result.x, result.z)
    values = [
        RegularGridInterpolator(grid, data)(flat)
        for data in (result.Bx, result.Bz, result.Ex, result.Ez)
    ]
    zeros = np.zeros(flat.shape[0])
    b_field = i0 * np.stack([values[0], zeros, values[1]], axis=-1)
    e_field = v0 * np.stack([values[2], zeros, values[3]], axis=-1)
    shape = pts.shape[:-1] + (3,)
    return b_field.reshape(shape), e_field.reshape(shape)


FIELD_MAP_HEADER = ("x", "z", "Bx", "By", "Bz", "Ex", "Ez")


def export_field_maps(result: CPWResult, v0: float = 1.0, i0: float = 1.0, stride: int = 1) -> list:
    """Rows (x, z, Bx, By, Bz, Ex, Ez) of the transverse maps scaled to a drive."""
    rows = []
    for i in range(0, result.x.size, stride):
        for k in range(0, result.z.size, stride):
            rows.append((
                float(result.x[i]), float(result.z[k]),
                float(i0 * result.Bx[i, k]), 0.0, float(i0 * result.Bz[i, k]),
                float(v0 * result.Ex[i, k]), float(v0 * result.Ez[i, k]),
            ))
    return rows


# ---------------------------------------------------------------------------
# Layouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChipLayout:
    wires: tuple
    bias: BiasField
    cpw: CPWSpec
    cpw_labels: tuple = ("L", "C", "R")
    center_label: str = "C"

    def wire(self, label: str) -> WireSegment:
        for wire in self.wires:
            if wire.label == label:
                return wire
        raise GeometryError(f"layout has no wire labelled {label!r}")

    @property
    def surface_height(self) -> float:
        """Top face of the upper metallisation layer."""
        return max(w.start[2] + w.thickness / 2 for w in self.wires) if self.wires else self.cpw.t / 2

    def to_dict(self) -> dict:
        return {
            "wires": [w.to_dict() for w in self.wires],
            "bias": self.bias.to_dict(),
            "cpw": self.cpw.to_dict(),
        }


def _layout_from_dict(payload: dict, source: str) -> ChipLayout:
    try:
        wires = tuple(
            WireSegment(
                start=item["start"],
                end=item["end"],
                width=float(item["width"]),
                thickness=float(item["thickness"]),
                current=float(item["current"]),
                label=str(item.get("label", f"W{index}")),
            )
            for index, item in enumerate(payload.get("wires", []))
        )
        bias_raw = payload.get("bias", {})
        bias = BiasField(float(bias_raw.get("Bx", 0.0)), float(bias_raw.get("By", 0.0)), float(bias_raw.get("Bz", 0.0)))
        cpw_raw = payload["cpw"]
        cpw = CPWSpec(
            w=float(cpw_raw["w"]),
            s=float(cpw_raw["s"]),
            t=float(cpw_raw["t"]),
            ground_width=float(cpw_raw.get("ground_width", cpw_raw["w"])),
            sigma=float(cpw_raw["sigma"]),
            eps_r=float(cpw_raw["eps_r"]),
            omega=2 * math.pi * float(cpw_raw["freq"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GeometryError(f"{source}: malformed layout ({exc})") from exc
    labels = tuple(payload.get("cpw_labels", ("L", "C", "R")))
    return ChipLayout(wires=wires, bias=bias, cpw=cpw, cpw_labels=labels, center_label=labels[len(labels) // 2])


def load_layout(path: Union[str, Path]) -> ChipLayout:
    """Read a geometry JSON file (SI units; `cpw.freq` in Hz)."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GeometryError(f"cannot read layout {path}: {exc}") from exc
    return _layout_from_dict(payload, str(path))


def reference_layout() -> ChipLayout:
    return load_layout(REFERENCE_LAYOUT_PATH)


def apply_compensation(
    layout: ChipLayout,
    bias_x: Callable[[float], float],
    center_current: Callable[[float], float],
) -> ChipLayout:
    """Layout with B_x(t) on the bias and I_C(t) on the center wire."""
    wires = tuple(
        wire.with_current(center_current) if wire.label == layout.center_label else wire
        for wire in layout.wires
    )
    bias = replace(layout.bias, Bx=bias_x)
    return replace(layout, wires=wires, bias=bias)


@dataclass(frozen=True)
class TrapGeometry:
    left: np.ndarray
    right: np.ndarray
    b_min: float
    surface_height: float

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.left + self.right)

    @property
    def axis(self) -> np.ndarray:
        delta = self.right - self.left
        return delta / np.linalg.norm(delta)

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(self.right - self.left))

    @property
    def tilt(self) -> float:
        """Angle of the double-well axis against the chip plane."""
        axis = self.axis
        return float(math.atan2(axis[2], math.hypot(axis[0], axis[1])))

    @property
    def height(self) -> float:
        """Distance of the minima from the wire surface."""
        return float(self.center[2] - self.surface_height)

    def to_dict(self) -> dict:
        return {
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "separation": self.separation,
            "tilt": self.tilt,
            "height": self.height,
            "b_min": self.b_min,
        }


def _field_norm(layout: ChipLayout, t: float) -> Callable[[np.ndarray], float]:
    def norm(p: np.ndarray) -> float:
        return float(np.linalg.norm(total_static_field(layout.wires, layout.bias, p, t)))
    return norm


def locate_trap(
    layout: ChipLayout,
    t: float = 0.0,
    search_half_width: float = 3e-6,
    scan_points: int = 241,
    height_range: tuple = (0.3e-6, 10e-6),
) -> TrapGeometry:
    """Two minima of |B_0| above the chip: line scan for seeds, then 3D refinement."""
    surface = layout.surface_height
    heights = surface + np.linspace(height_range[0], height_range[1], 400)
    column = total_static_field(layout.wires, layout.bias, np.column_stack([
        np.zeros_like(heights), np.zeros_like(heights), heights]), t)
    z_guess = float(heights[np.argmin(np.linalg.norm(column, axis=1))])

    xs = np.linspace(-search_half_width, search_half_width, scan_points)
    line = np.column_stack([xs, np.zeros_like(xs), np.full_like(xs, z_guess)])
    profile = np.linalg.norm(total_static_field(layout.wires, layout.bias, line, t), axis=1)
    interior = np.where((profile[1:-1] < profile[:-2]) & (profile[1:-1] < profile[2:]))[0] + 1
    if interior.size < 2:
        raise DoubleWellError(f"found {interior.size} minima of |B0| along the scan line, expected 2")
    seeds = sorted(interior, key=lambda i: profile[i])[:2]

    norm = _field_norm(layout, t)
    minima = []
    for index in sorted(seeds, key=lambda i: xs[i]):
        start = np.array([xs[index], 0.0, z_guess])
        found = optimize.minimize(
            lambda p: norm(start + p * 1e-6),
            np.zeros(3),
            method="Nelder-Mead",
            options={
                "xatol": 1e-6,
                "fatol": 1e-12,
                "maxiter": 4000,
                "initial_simplex": np.vstack([np.zeros(3), 0.05 * np.eye(3)]),
            },
        )
        minima.append(start + found.x * 1e-6)
    left, right = minima
    if np.linalg.norm(right - left) < 1e-9:
        raise DoubleWellError("both minima collapsed onto one point")
    b_min = 0.5 * (norm(left) + norm(right))
    logger.debug("Trap located", extra={"left": left.tolist(), "right": right.tolist(), "b_min": b_min})
    return TrapGeometry(left=left, right=right, b_min=b_min, surface_height=surface)


@dataclass(frozen=True)
class CurrentDensityEntry:
    label: str
    density: float
    limit: float
    ok: bool


def current_density_check(layout: ChipLayout, mw_peak_current: float = 0.0) -> list:
    """Total current density per wire; limits are quoted to one significant figure."""
    entries = []
    lower_plane = -layout.cpw.t / 2
    for wire in layout.wires:
        current = abs(wire.current)
        if wire.label in layout.cpw_labels:
            share = 1.0 if wire.label == layout.center_label else 0.5
            current += share * abs(mw_peak_current)
        density = current / (wire.width * wire.thickness)
        limit = LOWER_WIRE_CURRENT_DENSITY_LIMIT if wire.start[2] < lower_plane else CPW_CURRENT_DENSITY_LIMIT
        ok = float(f"{density:.0e}") <= limit
        if not ok:
            logger.warning("Current density above limit", extra={"wire": wire.label, "density": density, "limit": limit})
        entries.append(CurrentDensityEntry(wire.label, density, limit, ok))
    return entries
