"""
Direct solvers for the three operator families on a GridDomain.

- laplace:      L = Delta
- schrodinger:  L = Delta - u, u >= 0
- beltrami:     L = div(lambda grad), lambda >= lambda_0

Interior nodes carry the unknowns. Arms that cross the boundary use the
crossing distance (Shortley-Weller), so Dirichlet data enter at the exact
crossing points. Systems are assembled with scipy.sparse and factorized once
per (operator, domain) pair; Green functions use singularity splitting
g = Q E + h with E the frozen-coefficient log kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from growthlab.config import settings
from growthlab.errors import ConvergenceError, GridError, HypothesisError, SingularityError
from growthlab.grid_core import (
    DIRECTIONS,
    BoundaryProfile,
    GridDomain,
    GridSpec,
    Point,
    ScalarField,
    as_complex,
)
from growthlab.logger import Logger

logger = Logger()

MAX_CACHED_SYSTEMS = 4


class OperatorKind(Enum):
    LAPLACE = 'laplace'
    SCHRODINGER = 'schrodinger'
    BELTRAMI = 'beltrami'


@dataclass(frozen=True, eq=False)
class OperatorDesc:
    """Operator family plus its coefficient field (u or lambda)."""

    kind: OperatorKind
    coefficient: Optional[ScalarField] = None

    def __post_init__(self):
        kind = OperatorKind(self.kind)
        object.__setattr__(self, 'kind', kind)
        if kind is OperatorKind.LAPLACE:
            if self.coefficient is not None:
                raise HypothesisError("laplace operator takes no coefficient")
            return
        if self.coefficient is None:
            raise HypothesisError(f"{kind.value} operator needs a coefficient field")
        if kind is OperatorKind.BELTRAMI:
            floor = settings().get('solver.beltrami_floor', 1e-6)
            low = float(self.coefficient.values.min())
            if low < floor:
                raise HypothesisError(f"lambda must stay above {floor:g}, minimum is {low:g}")

    @classmethod
    def laplace(cls) -> 'OperatorDesc':
        return LAPLACE

    @classmethod
    def schrodinger(cls, u: ScalarField) -> 'OperatorDesc':
        return cls(OperatorKind.SCHRODINGER, u)

    @classmethod
    def beltrami(cls, lam: ScalarField) -> 'OperatorDesc':
        return cls(OperatorKind.BELTRAMI, lam)

    def lambda_at(self, point: Point) -> float:
        """lambda(point) for beltrami, 1 otherwise."""
        if self.kind is OperatorKind.BELTRAMI:
            return self.coefficient.at(point)
        return 1.0


LAPLACE = OperatorDesc(OperatorKind.LAPLACE)


@dataclass(frozen=True)
class SolveReport:
    """Diagnostics of one linear solve."""

    method: str
    unknowns: int
    residual: float


class EllipticSystem:
    """
    Assembled operator on the interior unknowns of a domain.

    (L u)_k = (A u_interior + B u_boundary)_k, with u_boundary given at the
    boundary crossings in domain order.
    """

    def __init__(self, op: OperatorDesc, D: GridDomain):
        self.op = op
        self.D = D
        self.A, self.B = self._assemble()
        self._lu = None

    def _assemble(self) -> Tuple[sps.csc_matrix, sps.csr_matrix]:
        op, D = self.op, self.D
        h = D.spec.h
        nx = D.spec.nx
        n, nb = D.n_unknowns, D.n_boundary
        nodes = D.unknowns

        if op.kind is OperatorKind.SCHRODINGER:
            u = op.coefficient.values.ravel()[nodes]
            clamp = settings().get('solver.negative_clamp', 1e-9)
            if u.min() < -clamp:
                raise HypothesisError(f"schrodinger potential must be >= 0 on the domain, minimum is {u.min():g}")
        lam_flat = op.coefficient.values.ravel() if op.kind is OperatorKind.BELTRAMI else None

        rows_a, cols_a, vals_a = [], [], []
        rows_b, cols_b, vals_b = [], [], []
        diag = np.zeros(n)
        k = np.arange(n)

        for axis in (0, 1):
            plus, minus = (0, 1) if axis == 0 else (2, 3)
            hp = D.arm_theta[plus] * h
            hm = D.arm_theta[minus] * h
            for d, arm, other in ((plus, hp, hm), (minus, hm, hp)):
                coef = 2.0 / (arm * (arm + other))
                if lam_flat is not None:
                    dj, di = DIRECTIONS[d]
                    lam_p = lam_flat[nodes]
                    lam_n = lam_flat[nodes + dj * nx + di]
                    theta = D.arm_theta[d]
                    lam_far = lam_p + theta * (lam_n - lam_p)
                    coef = coef * (2.0 * lam_p * lam_far / (lam_p + lam_far))
                diag -= coef

                bidx = D.arm_bidx[d]
                inside = bidx < 0
                dj, di = DIRECTIONS[d]
                nb_unknown = D.node_to_unknown[nodes[inside] + dj * nx + di]
                rows_a.append(k[inside])
                cols_a.append(nb_unknown)
                vals_a.append(coef[inside])
                rows_b.append(k[~inside])
                cols_b.append(bidx[~inside])
                vals_b.append(coef[~inside])

        if op.kind is OperatorKind.SCHRODINGER:
            diag -= u

        rows_a.append(k)
        cols_a.append(k)
        vals_a.append(diag)
        A = sps.csc_matrix(
            (np.concatenate(vals_a), (np.concatenate(rows_a), np.concatenate(cols_a))), shape=(n, n))
        B = sps.csr_matrix(
            (np.concatenate(vals_b), (np.concatenate(rows_b), np.concatenate(cols_b))), shape=(n, nb))
        return A, B

    @property
    def lu(self):
        if self._lu is None:
            logger.debug(f"factorizing {self.op.kind.value} system with {self.D.n_unknowns} unknowns")
            self._lu = spla.splu(self.A)
        return self._lu

    def _checked(self, x: np.ndarray, rhs: np.ndarray, matrix) -> np.ndarray:
        scale = np.max(np.abs(rhs))
        if scale == 0:
            return x
        residual = float(np.max(np.abs(matrix @ x - rhs)) / scale)
        rtol = settings().get('solver.rtol', 1e-10)
        if not np.all(np.isfinite(x)) or residual > rtol:
            raise ConvergenceError(f"linear solve residual {residual:.3e} exceeds {rtol:.1e}")
        self.last_report = SolveReport('splu', self.D.n_unknowns, residual)
        return x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A x = rhs."""
        rhs = np.asarray(rhs, dtype=float)
        return self._checked(self.lu.solve(rhs), rhs, self.A)

    def solve_transpose(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A^T x = rhs (adjoint problems, Poisson kernels)."""
        rhs = np.asarray(rhs, dtype=float)
        return self._checked(self.lu.solve(rhs, trans='T'), rhs, self.A.T)

    def solve_dirichlet(self, source: np.ndarray, boundary_values: np.ndarray) -> np.ndarray:
        """Interior values of L u = source with u = boundary_values on the crossings."""
        rhs = np.asarray(source, dtype=float) - self.B @ np.asarray(boundary_values, dtype=float)
        return self.solve(rhs)

    def report(self) -> SolveReport:
        return getattr(self, 'last_report', SolveReport('splu', self.D.n_unknowns, 0.0))


def assemble(op: OperatorDesc, D: GridDomain) -> EllipticSystem:
    """Cached EllipticSystem for (op, D)."""
    systems = D.cache.setdefault('systems', {})
    system = systems.get(op)
    if system is None:
        if len(systems) >= MAX_CACHED_SYSTEMS:
            systems.pop(next(iter(systems)))
        system = EllipticSystem(op, D)
        systems[op] = system
    return system


def interior_of(f: ScalarField, D: GridDomain) -> np.ndarray:
    D.spec.require_match(f.spec)
    return f.values.ravel()[D.unknowns]


def field_from_interior(D: GridDomain, interior: np.ndarray, boundary_values: Optional[np.ndarray] = None) -> ScalarField:
    values = np.zeros(D.spec.nx * D.spec.ny)
    values[D.unknowns] = interior
    return ScalarField(D.spec, D.fill_exterior(values, boundary_values))


def fundamental_scale(op: OperatorDesc, w: complex) -> float:
    """1/(2 pi lambda(w)) for beltrami, 1/(2 pi) otherwise."""
    return 1.0 / (2.0 * np.pi * op.lambda_at(w))


def fundamental_values(spec: GridSpec, w: complex, scale: float) -> np.ndarray:
    """scale * ln|z - w| on nodes; nodes within h/2 of w get the cell-averaged value."""
    r = np.abs(spec.complex_nodes() - w)
    rho = spec.h / np.sqrt(np.pi)
    near = r < 0.5 * spec.h
    return scale * np.where(near, np.log(rho) - 0.5, np.log(np.where(near, 1.0, r)))


def fundamental_gradient(points: np.ndarray, w: complex, scale: float, h: float) -> np.ndarray:
    """Gradient of scale * ln|z - w| as a complex number (d/dx + i d/dy); zero within h/2."""
    diff = np.asarray(points, dtype=complex) - w
    r2 = np.abs(diff) ** 2
    near = r2 < (0.5 * h) ** 2
    return np.where(near, 0.0, scale * diff / np.where(near, 1.0, r2))


@dataclass(frozen=True, eq=False)
class GreenSolution:
    """
    Green function L g = Q delta_w, g = 0 on the boundary, g <= 0 for Q > 0.

    total = Q E + regular_part inside D, with E = scale * ln|z - w|.
    """

    op: OperatorDesc
    D: GridDomain
    w: complex
    Q: float
    scale: float
    regular_part: ScalarField
    total: ScalarField
    regular_boundary: np.ndarray = field(repr=False)
    report: Optional[SolveReport] = None

    def value_at(self, z: Point) -> float:
        """g(z) at an arbitrary interior point."""
        z = as_complex(z)
        r = abs(z - self.w)
        h = self.D.spec.h
        singular = np.log(h / np.sqrt(np.pi)) - 0.5 if r < 0.5 * h else np.log(r)
        return float(self.Q * self.scale * singular + self.regular_part.at(z))

    def interior_values(self) -> np.ndarray:
        return self.total.values.ravel()[self.D.unknowns]


def _check_source(D: GridDomain, w: complex):
    clearance = settings().get('solver.singular_clearance', 3)
    if D.clearance(w) < clearance * D.spec.h:
        raise SingularityError(
            f"source {w} is within {clearance} cells of the boundary (clearance {D.clearance(w):.4g})")


def clamp_sign(values: np.ndarray, Q: float, tolerance: float) -> Tuple[np.ndarray, float]:
    """
    A Green function of strength Q >= 0 is nonpositive (nonnegative for Q < 0).
    Values on the wrong side of zero by at most tolerance are set to zero;
    returns the values and the largest miss.
    """
    flipped = values if Q >= 0 else -values
    worst = max(float(np.max(flipped, initial=0.0)), 0.0)
    fixed = np.where((flipped > 0) & (flipped <= tolerance), 0.0, flipped)
    return (fixed if Q >= 0 else -fixed), worst


def green(op: OperatorDesc, D: GridDomain, w: Point, Q: float = 1.0) -> GreenSolution:
    """Green function of op on D with singularity at w and strength Q."""
    w = as_complex(w)
    _check_source(D, w)
    system = assemble(op, D)
    spec = D.spec
    scale = fundamental_scale(op, w)
    E = fundamental_values(spec, w, scale)
    E_int = E.ravel()[D.unknowns]

    boundary = -Q * scale * np.log(np.abs(D.boundary_positions - w))
    if op.kind is OperatorKind.LAPLACE:
        source = np.zeros(D.n_unknowns)
    elif op.kind is OperatorKind.SCHRODINGER:
        source = Q * interior_of(op.coefficient, D) * E_int
    else:
        lam_y, lam_x = np.gradient(op.coefficient.values, spec.h)
        Z_int = spec.complex_nodes().ravel()[D.unknowns]
        grad_E = fundamental_gradient(Z_int, w, scale, spec.h)
        source = -Q * (lam_x.ravel()[D.unknowns] * grad_E.real + lam_y.ravel()[D.unknowns] * grad_E.imag)

    h_int = system.solve_dirichlet(source, boundary)
    total_int = Q * E_int + h_int
    # O(h^2) discretization error can flip the sign of values next to the boundary
    tolerance = spec.h ** 2 * float(np.max(np.abs(total_int), initial=0.0))
    total_int, violation = clamp_sign(total_int, Q, tolerance)
    if violation > tolerance:
        logger.warning(f"green[{op.kind.value}] w={w:.4g}: values of the wrong sign up to {violation:.3e} "
                       f"(tolerance {tolerance:.1e}); the maximum principle fails on this grid")

    regular = field_from_interior(D, h_int, boundary)
    total_vals = np.zeros(spec.nx * spec.ny)
    total_vals[D.unknowns] = total_int
    total = ScalarField(spec, total_vals.reshape(spec.shape))
    report = system.report()
    logger.debug(f"green[{op.kind.value}] w={w:.4g} Q={Q:g}: residual {report.residual:.2e}")
    return GreenSolution(op, D, w, float(Q), scale, regular, total, boundary, report)


def normal_operator(D: GridDomain, interior_radius: float = 3.2, boundary_radius: float = 2.2,
                     boundary_weight: float = 4.0) -> Tuple[sps.csr_matrix, sps.csr_matrix]:
    """
    Sparse maps (interior values, boundary values) -> outward normal derivative.

    Each boundary node fits a weighted least-squares quadratic to the boundary
    value and the interior nodes within ~3 cells, then takes its gradient
    along the outward normal.
    """
    key = ('normal', interior_radius, boundary_radius, boundary_weight)
    if key in D.cache:
        return D.cache[key]
    h = D.spec.h
    Z_int = D.spec.complex_nodes().ravel()[D.unknowns]
    tree_int = cKDTree(np.column_stack([Z_int.real, Z_int.imag]))
    zb = D.boundary_positions
    nb = zb.size

    rows_i, cols_i, vals_i = [], [], []
    rows_b, cols_b, vals_b = [], [], []
    for b in range(nb):
        zeta = zb[b]
        radius = interior_radius
        while True:
            idx_i = tree_int.query_ball_point([zeta.real, zeta.imag], radius * h)
            idx_b = D.boundary_tree.query_ball_point([zeta.real, zeta.imag], boundary_radius * h)
            if len(idx_i) + len(idx_b) >= 9 or radius > 6:
                break
            radius += 1.0
        idx_i = np.asarray(idx_i, dtype=np.int64)
        idx_b = np.asarray(idx_b, dtype=np.int64)
        pts = np.concatenate([Z_int[idx_i], zb[idx_b]])
        s = (pts - zeta) / h
        X, Y = s.real, s.imag
        V = np.column_stack([np.ones_like(X), X, Y, X * X, X * Y, Y * Y])
        wts = np.sqrt(np.concatenate([np.ones(idx_i.size), np.full(idx_b.size, boundary_weight)]))
        P = np.linalg.pinv(V * wts[:, None]) * wts[None, :]
        n = D.boundary_normals[b]
        row = (n.real * P[1] + n.imag * P[2]) / h
        rows_i.append(np.full(idx_i.size, b))
        cols_i.append(idx_i)
        vals_i.append(row[:idx_i.size])
        rows_b.append(np.full(idx_b.size, b))
        cols_b.append(idx_b)
        vals_b.append(row[idx_i.size:])

    N_int = sps.csr_matrix(
        (np.concatenate(vals_i), (np.concatenate(rows_i), np.concatenate(cols_i))), shape=(nb, D.n_unknowns))
    N_bd = sps.csr_matrix(
        (np.concatenate(vals_b), (np.concatenate(rows_b), np.concatenate(cols_b))), shape=(nb, nb))
    D.cache[key] = (N_int, N_bd)
    return N_int, N_bd


def field_normal_derivative(f: ScalarField, D: GridDomain,
                            boundary_values: Optional[BoundaryProfile] = None) -> BoundaryProfile:
    """
    Outward normal derivative of a field on the boundary nodes.

    boundary_values are the Dirichlet data of f; omitted means f = 0 on the boundary.
    """
    N_int, N_bd = normal_operator(D)
    dn = N_int @ interior_of(f, D)
    if boundary_values is not None:
        if len(boundary_values) != D.n_boundary:
            raise GridError("boundary values are not aligned with the domain boundary")
        dn = dn + N_bd @ boundary_values.values
    return BoundaryProfile(dn)


def normal_derivative(gs: GreenSolution) -> BoundaryProfile:
    """Outward normal derivative of a Green function; the log part is differentiated exactly."""
    D = gs.D
    N_int, N_bd = normal_operator(D)
    regular = N_int @ gs.regular_part.values.ravel()[D.unknowns] + N_bd @ gs.regular_boundary
    grad_E = fundamental_gradient(D.boundary_positions, gs.w, gs.scale, D.spec.h)
    n = D.boundary_normals
    singular = gs.Q * (grad_E.real * n.real + grad_E.imag * n.imag)
    return BoundaryProfile(singular + regular)


def poisson_kernel(op: OperatorDesc, D: GridDomain, zeta_index: int) -> ScalarField:
    """
    z -> P(zeta, z) = d_n g_z(zeta) on interior nodes, from one adjoint solve.

    Pairs with fields through kernel_pairing.
    """
    if not 0 <= zeta_index < D.n_boundary:
        raise GridError(f"boundary index {zeta_index} out of range [0, {D.n_boundary})")
    N_int, _ = normal_operator(D)
    row = N_int[zeta_index].toarray().ravel()
    kernel = assemble(op, D).solve_transpose(row) / D.spec.h ** 2
    return field_from_interior(D, kernel)


def kernel_pairing(f: ScalarField, P: ScalarField, D: GridDomain) -> float:
    """Integral of f against a discrete Poisson kernel (node sum over the interior)."""
    D.spec.require_match(P.spec)
    return float(np.dot(interior_of(f, D), interior_of(P, D)) * D.spec.h ** 2)


def dirichlet_solve(op: OperatorDesc, D: GridDomain, f: BoundaryProfile) -> ScalarField:
    """L phi = 0 in D, phi = f on the boundary."""
    if len(f) != D.n_boundary:
        raise GridError("boundary data are not aligned with the domain boundary")
    interior = assemble(op, D).solve_dirichlet(np.zeros(D.n_unknowns), f.values)
    return field_from_interior(D, interior, f.values)


def solve_zero_dirichlet(op: OperatorDesc, D: GridDomain, rhs: ScalarField) -> ScalarField:
    """L psi = rhs in D, psi = 0 on the boundary (the T operator for laplace)."""
    interior = assemble(op, D).solve(interior_of(rhs, D))
    return field_from_interior(D, interior)


def grid_laplacian(values: np.ndarray, h: float) -> np.ndarray:
    """5-point Laplacian on the whole grid; edge nodes copy their inner neighbours."""
    out = np.zeros_like(values)
    out[1:-1, 1:-1] = (values[2:, 1:-1] + values[:-2, 1:-1] + values[1:-1, 2:] + values[1:-1, :-2]
                       - 4.0 * values[1:-1, 1:-1]) / h ** 2
    out[0, :], out[-1, :] = out[1, :], out[-2, :]
    out[:, 0], out[:, -1] = out[:, 1], out[:, -2]
    return out


@dataclass(frozen=True)
class ConversionResult:
    """Schrodinger potential of a lambda and the Green identity discrepancy."""

    u: ScalarField
    discrepancy: float
    scale: float
    clamped_nodes: int


def beltrami_to_schrodinger_potential(lam: ScalarField) -> Tuple[ScalarField, int]:
    """u = lambda^{-1/2} Delta lambda^{1/2} by central differences."""
    floor = settings().get('solver.beltrami_floor', 1e-6)
    if lam.values.min() < floor:
        raise HypothesisError(f"lambda must stay above {floor:g}")
    root = np.sqrt(lam.values)
    u = grid_laplacian(root, lam.spec.h) / root
    clamp = settings().get('solver.negative_clamp', 1e-9)
    tiny = (u < 0) & (u >= -clamp)
    if tiny.any():
        logger.warning(f"clamped {int(tiny.sum())} slightly negative potential values to 0")
        u = np.where(tiny, 0.0, u)
    return ScalarField(lam.spec, u), int(tiny.sum())


def convert_beltrami_to_schrodinger(lam: ScalarField, D: GridDomain, w: Point) -> ConversionResult:
    """
    Check G_w = g_w sqrt(lambda(w) lambda(z)) where G is the Green function of
    Delta - u and g the Green function of div(lambda grad).
    """
    w = as_complex(w)
    u, clamped = beltrami_to_schrodinger_potential(lam)
    G = green(OperatorDesc.schrodinger(u), D, w)
    g = green(OperatorDesc.beltrami(lam), D, w)
    h = D.spec.h
    Z = D.spec.complex_nodes()
    keep = (D.phi <= -3 * h) & (np.abs(Z - w) >= 3 * h)
    predicted = g.total.values * np.sqrt(lam.at(w) * lam.values)
    gap = np.abs(G.total.values - predicted)[keep]
    scale = float(np.max(np.abs(G.total.values[keep])))
    return ConversionResult(u, float(gap.max()), scale, clamped)


def positive_solution(u: ScalarField, D: GridDomain) -> Tuple[ScalarField, float]:
    """(Delta - u) phi = 0, phi = 1 on the boundary; returns phi and its interior minimum."""
    phi = dirichlet_solve(OperatorDesc.schrodinger(u), D, BoundaryProfile.constant(D, 1.0))
    return phi, float(phi.values[D.mask].min())


def interior_gradient(values: np.ndarray, D: GridDomain,
                      boundary_values: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    (d/dx, d/dy) at the interior unknowns from three-point differences with
    unequal arms; arms that cross the boundary use the crossing value.

    values holds one entry per interior unknown.
    """
    h = D.spec.h
    nx = D.spec.nx
    bvals = np.zeros(D.n_boundary) if boundary_values is None else np.asarray(boundary_values, dtype=float)
    grads = []
    for plus, minus in ((0, 1), (2, 3)):
        ends = []
        for d in (plus, minus):
            dj, di = DIRECTIONS[d]
            bidx = D.arm_bidx[d]
            neighbour = D.node_to_unknown[D.unknowns + dj * nx + di]
            ends.append(np.where(bidx < 0, values[np.maximum(neighbour, 0)], bvals[np.maximum(bidx, 0)]))
        up, um = ends
        hp = D.arm_theta[plus] * h
        hm = D.arm_theta[minus] * h
        grads.append((hm * hm * up - hp * hp * um + (hp * hp - hm * hm) * values) / (hp * hm * (hp + hm)))
    return grads[0], grads[1]
