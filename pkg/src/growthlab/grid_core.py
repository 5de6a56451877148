"""
Grids, domains, fields, measures and quadrature.

A planar domain is stored as a signed-distance level set phi on a uniform
grid (negative inside). Everything else in growthlab is built on the pieces
defined here:

- GridSpec: origin, spacing and node counts of the grid
- GridDomain: mask, phi and the ordered boundary crossings of phi = 0
- ScalarField / BoundaryProfile: values on grid nodes / boundary nodes
- Measure: grid density plus point atoms

Arrays are indexed [row, column] = [y, x].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from growthlab.errors import DomainError, GridError
from growthlab.logger import Logger

logger = Logger()

Point = Union[complex, Tuple[float, float], Sequence[float]]

MAX_MOMENT_ORDER = 8

# (row step, column step) for +x, -x, +y, -y
DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0))


def as_complex(point: Point) -> complex:
    """Accept complex numbers or (x, y) pairs."""
    if isinstance(point, (complex, float, int, np.number)):
        return complex(point)
    x, y = point
    return complex(float(x), float(y))


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid with equal spacing h in both axes."""

    origin: Tuple[float, float]
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.h > 0:
            raise GridError(f"grid spacing must be positive, got {self.h}")
        if self.nx < 8 or self.ny < 8:
            raise GridError(f"grid needs at least 8 nodes per axis, got {self.nx}x{self.ny}")
        object.__setattr__(self, 'origin', (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def square(cls, n: int, half_width: float = 2.0, center: Point = 0j) -> 'GridSpec':
        """n x n nodes covering [c-L, c+L]^2."""
        c = as_complex(center)
        h = 2.0 * half_width / (n - 1)
        return cls((c.real - half_width, c.imag - half_width), h, n, n)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        x, y = self.x, self.y
        return (x[0], x[-1], y[0], y[-1])

    def nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays X, Y of shape (ny, nx)."""
        return np.meshgrid(self.x, self.y)

    def complex_nodes(self) -> np.ndarray:
        X, Y = self.nodes()
        return X + 1j * Y

    def fractional_index(self, points: np.ndarray) -> np.ndarray:
        """(row, col) fractional indices for an array of complex points."""
        points = np.asarray(points, dtype=complex)
        return np.vstack([
            (points.imag - self.origin[1]) / self.h,
            (points.real - self.origin[0]) / self.h,
        ])

    def nearest_node(self, point: Point) -> Tuple[int, int]:
        z = as_complex(point)
        j = int(round((z.imag - self.origin[1]) / self.h))
        i = int(round((z.real - self.origin[0]) / self.h))
        if not (0 <= j < self.ny and 0 <= i < self.nx):
            raise GridError(f"point {z} lies outside the grid")
        return j, i

    def node_point(self, j: int, i: int) -> complex:
        return complex(self.origin[0] + i * self.h, self.origin[1] + j * self.h)

    def snap(self, point: Point) -> complex:
        """Nearest grid node as a complex point."""
        return self.node_point(*self.nearest_node(point))

    def matches(self, other: 'GridSpec') -> bool:
        tol = 1e-12 * max(1.0, abs(self.h))
        return (self.nx == other.nx and self.ny == other.ny
                and abs(self.h - other.h) <= tol
                and abs(self.origin[0] - other.origin[0]) <= tol
                and abs(self.origin[1] - other.origin[1]) <= tol)

    def require_match(self, other: 'GridSpec', what: str = 'field'):
        if not self.matches(other):
            raise GridError(f"{what} is defined on a different grid")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values on every node of a grid."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.spec.shape:
            raise GridError(f"field shape {values.shape} does not match grid {self.spec.shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def from_function(cls, spec: GridSpec, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> 'ScalarField':
        X, Y = spec.nodes()
        return cls(spec, np.broadcast_to(fn(X, Y), spec.shape))

    @classmethod
    def constant(cls, spec: GridSpec, value: float) -> 'ScalarField':
        return cls(spec, np.full(spec.shape, float(value)))

    @classmethod
    def radial(cls, spec: GridSpec, profile: Callable[[np.ndarray], np.ndarray], center: Point = 0j) -> 'ScalarField':
        c = as_complex(center)
        Z = spec.complex_nodes()
        return cls(spec, profile(np.abs(Z - c)))

    def sample(self, points) -> np.ndarray:
        """Bilinear interpolation at complex points."""
        coords = self.spec.fractional_index(np.atleast_1d(points))
        return ndimage.map_coordinates(self.values, coords, order=1, mode='nearest')

    def at(self, point: Point) -> float:
        return float(self.sample(np.array([as_complex(point)]))[0])

    def max_abs(self, mask: Optional[np.ndarray] = None) -> float:
        vals = self.values if mask is None else self.values[mask]
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    def _combine(self, other, op):
        if isinstance(other, ScalarField):
            self.spec.require_match(other.spec)
            return ScalarField(self.spec, op(self.values, other.values))
        return ScalarField(self.spec, op(self.values, float(other)))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.spec, -self.values)


@dataclass(frozen=True)
class BoundaryNode:
    """One crossing of the zero level set with its outward normal and arclength weight."""

    position: complex
    outward_normal: complex
    ds: float


@dataclass(frozen=True, eq=False)
class BoundaryProfile:
    """Values aligned with a GridDomain's boundary list."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(values)):
            raise GridError("boundary profile contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def from_function(cls, D: 'GridDomain', fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> 'BoundaryProfile':
        z = D.boundary_positions
        return cls(np.broadcast_to(fn(z.real, z.imag), z.shape))

    @classmethod
    def from_angle(cls, D: 'GridDomain', fn: Callable[[np.ndarray], np.ndarray], center: Point = 0j) -> 'BoundaryProfile':
        theta = np.angle(D.boundary_positions - as_complex(center))
        return cls(np.broadcast_to(fn(theta), theta.shape))

    @classmethod
    def constant(cls, D: 'GridDomain', value: float) -> 'BoundaryProfile':
        return cls(np.full(D.n_boundary, float(value)))

    def __len__(self) -> int:
        return self.values.size

    def _combine(self, other, op):
        if isinstance(other, BoundaryProfile):
            if len(other) != len(self):
                raise GridError("boundary profiles have different lengths")
            return BoundaryProfile(op(self.values, other.values))
        return BoundaryProfile(op(self.values, float(other)))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Measure:
    """Finite positive measure: grid density plus point atoms (w, m)."""

    density: ScalarField
    atoms: Tuple[Tuple[complex, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if np.any(self.density.values < 0):
            raise GridError("measure density must be nonnegative")
        atoms = tuple((as_complex(w), float(m)) for w, m in self.atoms)
        for w, m in atoms:
            if not m > 0:
                raise GridError(f"atom at {w} has nonpositive mass {m}")
        object.__setattr__(self, 'atoms', atoms)

    @classmethod
    def point(cls, spec: GridSpec, w: Point, mass: float) -> 'Measure':
        return cls(ScalarField.constant(spec, 0.0), ((as_complex(w), mass),))

    @classmethod
    def indicator(cls, D: 'GridDomain', atoms: Iterable[Tuple[Point, float]] = ()) -> 'Measure':
        """chi_D with cut-cell fractions on boundary cells."""
        return cls(ScalarField(D.spec, D.weights), tuple(atoms))

    @property
    def spec(self) -> GridSpec:
        return self.density.spec

    @property
    def density_mass(self) -> float:
        return float(self.density.values.sum() * self.spec.h ** 2)

    @property
    def total_mass(self) -> float:
        return self.density_mass + sum(m for _, m in self.atoms)

    def scaled(self, factor: float) -> 'Measure':
        return Measure(self.density * factor, tuple((w, m * factor) for w, m in self.atoms))

    def plus(self, other: 'Measure') -> 'Measure':
        return Measure(self.density + other.density, self.atoms + other.atoms)

    def with_atom(self, w: Point, mass: float) -> 'Measure':
        if mass <= 0:
            return self
        return Measure(self.density, self.atoms + ((as_complex(w), float(mass)),))

    def support_extent(self) -> Tuple[float, float, float, float]:
        """Bounding box (xmin, xmax, ymin, ymax) of density and atoms."""
        xs: List[float] = [w.real for w, _ in self.atoms]
        ys: List[float] = [w.imag for w, _ in self.atoms]
        rows, cols = np.nonzero(self.density.values > 0)
        if rows.size:
            xs += [self.spec.x[cols.min()], self.spec.x[cols.max()]]
            ys += [self.spec.y[rows.min()], self.spec.y[rows.max()]]
        if not xs:
            raise GridError("measure is empty")
        return (min(xs), max(xs), min(ys), max(ys))


class GridDomain:
    """
    Bounded planar domain as a signed-distance level set.

    Attributes:
        spec (GridSpec): grid the domain lives on
        phi (np.ndarray): signed distance, negative inside
        mask (np.ndarray): phi < 0
        weights (np.ndarray): cut-cell quadrature weights clamp(0.5 - phi/h, 0, 1)
    """

    def __init__(self, spec: GridSpec, phi: np.ndarray):
        phi = np.array(phi, dtype=float)
        if phi.shape != spec.shape:
            raise GridError(f"phi shape {phi.shape} does not match grid {spec.shape}")
        if not np.all(np.isfinite(phi)):
            raise GridError("phi contains non-finite values")
        mask = phi < 0
        if not mask.any():
            raise DomainError("domain is empty")
        if mask[:2, :].any() or mask[-2:, :].any() or mask[:, :2].any() or mask[:, -2:].any():
            raise DomainError("domain reaches the outer two node rings of the grid")

        phi.setflags(write=False)
        mask.setflags(write=False)
        self.spec = spec
        self.phi = phi
        self.mask = mask
        self.weights = np.clip(0.5 - phi / spec.h, 0.0, 1.0)
        self.weights.setflags(write=False)
        self.cache = {}
        self._build_boundary()

    @classmethod
    def from_phi(cls, spec: GridSpec, phi: np.ndarray) -> 'GridDomain':
        return cls(spec, phi)

    def _build_boundary(self):
        spec, phi, mask = self.spec, self.phi, self.mask
        h = spec.h
        X, Y = spec.nodes()
        coeffs = ndimage.spline_filter(phi, order=3, mode='nearest')
        gy, gx = np.gradient(phi, h)

        inner_j, inner_i, dirs, thetas = [], [], [], []
        for d, (dj, di) in enumerate(DIRECTIONS):
            neighbour_inside = np.roll(mask, shift=(-dj, -di), axis=(0, 1))
            jj, ii = np.nonzero(mask & ~neighbour_inside)
            pa = phi[jj, ii]
            pb = phi[jj + dj, ii + di]
            theta = pa / (pa - pb)
            theta = self._refine_crossing(coeffs, jj, ii, dj, di, pa, theta)
            inner_j.append(jj)
            inner_i.append(ii)
            dirs.append(np.full(jj.size, d))
            thetas.append(theta)

        jj = np.concatenate(inner_j)
        ii = np.concatenate(inner_i)
        dirs = np.concatenate(dirs)
        theta = np.concatenate(thetas)
        step = np.array(DIRECTIONS)[dirs]
        pos = (X[jj, ii] + theta * step[:, 1] * h) + 1j * (Y[jj, ii] + theta * step[:, 0] * h)

        coords = spec.fractional_index(pos)
        nx_ = ndimage.map_coordinates(gx, coords, order=1, mode='nearest')
        ny_ = ndimage.map_coordinates(gy, coords, order=1, mode='nearest')
        norm = np.hypot(nx_, ny_)
        flat = norm < 1e-14
        nx_ = np.where(flat, step[:, 1], nx_)
        ny_ = np.where(flat, step[:, 0], ny_)
        norm = np.hypot(nx_, ny_)
        normals = (nx_ + 1j * ny_) / norm

        # order by angle about the centroid; fall back to axis weights if the
        # ordered polygon is not a chain of short segments
        centre = complex(X[mask].mean(), Y[mask].mean())
        order = np.argsort(np.angle(pos - centre), kind='stable')
        pos, normals = pos[order], normals[order]
        jj, ii, dirs, theta = jj[order], ii[order], dirs[order], theta[order]

        seg = np.abs(np.roll(pos, -1) - pos)
        if seg.max() <= 3.0 * h:
            ds = 0.5 * (seg + np.roll(seg, 1))
        else:
            logger.debug("boundary is not star-shaped about its centroid; using axis crossing weights")
            axis_component = np.where(dirs < 2, np.abs(normals.real), np.abs(normals.imag))
            ds = h * axis_component

        for arr in (pos, normals, ds, theta):
            arr.setflags(write=False)
        self.boundary_positions = pos
        self.boundary_normals = normals
        self.boundary_ds = ds
        self.boundary_theta = theta
        self.boundary_dir = dirs
        self.boundary_inner = jj * spec.nx + ii

        unknowns = np.flatnonzero(mask.ravel())
        node_to_unknown = np.full(mask.size, -1, dtype=np.int64)
        node_to_unknown[unknowns] = np.arange(unknowns.size)
        self.unknowns = unknowns
        self.node_to_unknown = node_to_unknown

        arm_theta = np.ones((4, unknowns.size))
        arm_bidx = np.full((4, unknowns.size), -1, dtype=np.int64)
        k = node_to_unknown[self.boundary_inner]
        arm_theta[dirs, k] = theta
        arm_bidx[dirs, k] = np.arange(pos.size)
        self.arm_theta = arm_theta
        self.arm_bidx = arm_bidx

    @staticmethod
    def _refine_crossing(coeffs, jj, ii, dj, di, pa, theta):
        """Secant steps on the cubic-spline interpolant of phi along each edge."""
        def spline(t):
            coords = np.vstack([jj + t * dj, ii + t * di])
            return ndimage.map_coordinates(coeffs, coords, order=3, prefilter=False, mode='nearest')

        t0, f0 = np.zeros_like(theta), pa
        t1 = np.clip(theta, 1e-6, 1.0)
        f1 = spline(t1)
        best_t, best_f = t1.copy(), np.abs(f1)
        for _ in range(4):
            denom = f1 - f0
            safe = np.abs(denom) > 1e-300
            t2 = np.where(safe, t1 - f1 * (t1 - t0) / np.where(safe, denom, 1.0), t1)
            t2 = np.clip(t2, 1e-6, 1.0)
            f2 = spline(t2)
            better = np.abs(f2) < best_f
            best_t = np.where(better, t2, best_t)
            best_f = np.where(better, np.abs(f2), best_f)
            t0, f0, t1, f1 = t1, f1, t2, f2
        return best_t

    @property
    def n_boundary(self) -> int:
        return self.boundary_positions.size

    @property
    def n_unknowns(self) -> int:
        return self.unknowns.size

    @cached_property
    def boundary(self) -> Tuple[BoundaryNode, ...]:
        return tuple(
            BoundaryNode(complex(p), complex(n), float(s))
            for p, n, s in zip(self.boundary_positions, self.boundary_normals, self.boundary_ds)
        )

    @cached_property
    def boundary_tree(self) -> cKDTree:
        z = self.boundary_positions
        return cKDTree(np.column_stack([z.real, z.imag]))

    @cached_property
    def _exterior_nearest(self) -> Tuple[np.ndarray, np.ndarray]:
        ext = np.flatnonzero(~self.mask.ravel())
        Z = self.spec.complex_nodes().ravel()[ext]
        _, idx = self.boundary_tree.query(np.column_stack([Z.real, Z.imag]))
        return ext, idx

    def fill_exterior(self, values: np.ndarray, boundary_values: Optional[np.ndarray] = None) -> np.ndarray:
        """Copy of values with every exterior node set to its nearest boundary value."""
        out = np.array(values, dtype=float).reshape(-1)
        ext, idx = self._exterior_nearest
        out[ext] = 0.0 if boundary_values is None else np.asarray(boundary_values, dtype=float)[idx]
        return out.reshape(self.spec.shape)

    def clearance(self, point: Point) -> float:
        """Distance from an interior point to the boundary (negative outside)."""
        coords = self.spec.fractional_index(np.array([as_complex(point)]))
        return float(-ndimage.map_coordinates(self.phi, coords, order=1, mode='nearest')[0])

    def contains(self, point: Point) -> bool:
        return self.clearance(point) > 0

    def centroid(self) -> complex:
        Z = self.spec.complex_nodes()
        return complex((self.weights * Z).sum() / self.weights.sum())


def extend_from_interior(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Give each node outside mask the value of its nearest node inside."""
    _, (rows, cols) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return np.asarray(values)[rows, cols]


def _check_fits(spec: GridSpec, center: complex, rx: float, ry: float):
    xmin, xmax, ymin, ymax = spec.extent
    margin = 2.0 * spec.h
    if (center.real - rx < xmin + margin or center.real + rx > xmax - margin
            or center.imag - ry < ymin + margin or center.imag + ry > ymax - margin):
        raise DomainError("shape does not fit inside the grid with a two-cell margin")


def make_disk(center: Point, radius: float, spec: GridSpec) -> GridDomain:
    """Disk with exact signed distance."""
    c = as_complex(center)
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius}")
    _check_fits(spec, c, radius, radius)
    Z = spec.complex_nodes()
    return GridDomain(spec, np.abs(Z - c) - radius)


def _parametric_signed_distance(spec: GridSpec, curve: Callable, inside: np.ndarray,
                                samples: int = 4096, newton_steps: int = 12) -> np.ndarray:
    """
    Signed distance to a closed parametric curve t -> (P, P', P'').

    Nearest dense sample seeds a Newton iteration on (P(t) - q).P'(t) = 0.
    """
    Z = spec.complex_nodes().ravel()
    t_dense = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    P_dense, _, _ = curve(t_dense)
    tree = cKDTree(np.column_stack([P_dense.real, P_dense.imag]))
    _, idx = tree.query(np.column_stack([Z.real, Z.imag]))
    t = t_dense[idx]
    dt_max = 2.0 * np.pi / samples
    for _ in range(newton_steps):
        P, dP, ddP = curve(t)
        diff = P - Z
        f = (diff * np.conj(dP)).real
        df = (dP * np.conj(dP)).real + (diff * np.conj(ddP)).real
        step = np.where(np.abs(df) > 1e-300, f / np.where(df == 0, 1.0, df), 0.0)
        t = t - np.clip(step, -dt_max, dt_max)
    P, _, _ = curve(t)
    dist = np.minimum(np.abs(P - Z), tree.query(np.column_stack([Z.real, Z.imag]))[0])
    sign = np.where(inside.ravel(), -1.0, 1.0)
    return (sign * dist).reshape(spec.shape)


def make_ellipse(center: Point, a: float, b: float, spec: GridSpec) -> GridDomain:
    """Axis-aligned ellipse with semi-axis a along x and b along y."""
    c = as_complex(center)
    if not (a > 0 and b > 0):
        raise DomainError(f"semi-axes must be positive, got a={a}, b={b}")
    if abs(a - b) <= 1e-12 * max(a, b):
        return make_disk(c, a, spec)
    _check_fits(spec, c, a, b)

    def curve(t):
        P = c + a * np.cos(t) + 1j * b * np.sin(t)
        dP = -a * np.sin(t) + 1j * b * np.cos(t)
        ddP = -a * np.cos(t) - 1j * b * np.sin(t)
        return P, dP, ddP

    Z = spec.complex_nodes()
    inside = ((Z.real - c.real) / a) ** 2 + ((Z.imag - c.imag) / b) ** 2 < 1.0
    return GridDomain(spec, _parametric_signed_distance(spec, curve, inside))


def make_star(center: Point, radius: float, amplitude: float, k: int, spec: GridSpec,
              phase: float = 0.0) -> GridDomain:
    """Perturbed disk r(theta) = R (1 + amplitude cos(k (theta - phase)))."""
    c = as_complex(center)
    if not radius > 0 or not 0 <= amplitude < 1:
        raise DomainError(f"need radius > 0 and 0 <= amplitude < 1, got {radius}, {amplitude}")
    if amplitude == 0:
        return make_disk(c, radius, spec)
    rmax = radius * (1 + amplitude)
    _check_fits(spec, c, rmax, rmax)

    def curve(t):
        r = radius * (1 + amplitude * np.cos(k * (t - phase)))
        dr = -radius * amplitude * k * np.sin(k * (t - phase))
        ddr = -radius * amplitude * k * k * np.cos(k * (t - phase))
        e = np.exp(1j * t)
        P = c + r * e
        dP = (dr + 1j * r) * e
        ddP = (ddr + 2j * dr - r) * e
        return P, dP, ddP

    Z = spec.complex_nodes() - c
    rho = radius * (1 + amplitude * np.cos(k * (np.angle(Z) - phase)))
    return GridDomain(spec, _parametric_signed_distance(spec, curve, np.abs(Z) < rho))


def integrate(f: ScalarField, D: GridDomain) -> float:
    """Cut-cell midpoint quadrature of f over D."""
    D.spec.require_match(f.spec)
    return float(np.sum(D.weights * f.values) * D.spec.h ** 2)


def area(D: GridDomain) -> float:
    return float(D.weights.sum() * D.spec.h ** 2)


def boundary_integrate(p: BoundaryProfile, D: GridDomain) -> float:
    """Sum of values times arclength weights."""
    if len(p) != D.n_boundary:
        raise GridError(f"profile has {len(p)} values but the domain has {D.n_boundary} boundary nodes")
    return float(np.dot(p.values, D.boundary_ds))


def harmonic_moment(D: GridDomain, n: int) -> complex:
    """t_n = integral of z^n over D."""
    if n < 0 or n > MAX_MOMENT_ORDER:
        raise DomainError(f"moment order must be in [0, {MAX_MOMENT_ORDER}], got {n}")
    Z = D.spec.complex_nodes()
    return complex(np.sum(D.weights * Z ** n) * D.spec.h ** 2)


def symmetric_difference_area(a: np.ndarray, b: np.ndarray, spec: GridSpec) -> float:
    return float(np.count_nonzero(a != b) * spec.h ** 2)


def perimeter(D: GridDomain) -> float:
    return float(D.boundary_ds.sum())
