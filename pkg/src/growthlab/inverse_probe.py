"""
Forward maps behind the inverse problems: the boundary response operator A,
pumping responses lambda dn g_p, and the Dirichlet-to-Neumann map built
either directly or from pumping responses.

Nothing here tries to invert these maps; the two-point experiment only
records how well responses separate different lambdas.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from growthlab.config import settings
from growthlab.errors import DomainError, GridError
from growthlab.grid_core import (
    BoundaryProfile,
    GridDomain,
    Point,
    ScalarField,
    as_complex,
    boundary_integrate,
    extend_from_interior,
    integrate,
)
from growthlab.io_formats import write_rows
from growthlab.logger import Logger
from growthlab.operators_green import (
    OperatorDesc,
    assemble,
    dirichlet_solve,
    field_normal_derivative,
    green,
    interior_gradient,
    interior_of,
    normal_derivative,
    normal_operator,
    solve_zero_dirichlet,
)

logger = Logger()

PREIMAGE_DEGREE = 6


def _operator(lam: Optional[ScalarField]) -> OperatorDesc:
    return OperatorDesc.laplace() if lam is None else OperatorDesc.beltrami(lam)


def forward_A(u: ScalarField, D: GridDomain, w: Point) -> BoundaryProfile:
    """
    A u(zeta) = integral of u g_w P_zeta, evaluated as dn psi(zeta) with
    Lap psi = u g_w and psi = 0 on the boundary.
    """
    laplace = OperatorDesc.laplace()
    gw = green(laplace, D, as_complex(w))
    psi = solve_zero_dirichlet(laplace, D, u * gw.total)
    return field_normal_derivative(psi, D)


@dataclass(frozen=True)
class Preimage:
    coefficients: np.ndarray
    fitted: BoundaryProfile
    residual_ratio: float
    basis: Tuple[Tuple[int, int], ...]


def least_squares_preimage(D: GridDomain, w: Point, target: BoundaryProfile,
                           degree: int = PREIMAGE_DEGREE) -> Preimage:
    """
    Best u in span{x^a y^b : a, b < degree} for A u = target in the ds-weighted
    boundary L2 norm. The residual ratio is the practical stand-in for dense range.
    """
    if len(target) != D.n_boundary:
        raise GridError("target is not aligned with the domain boundary")
    centre = D.centroid()
    X, Y = D.spec.nodes()
    x, y = X - centre.real, Y - centre.imag
    basis = tuple((a, b) for a in range(degree) for b in range(degree))
    columns = [forward_A(ScalarField(D.spec, x ** a * y ** b), D, w).values for a, b in basis]
    sqrt_ds = np.sqrt(D.boundary_ds)
    M = np.column_stack(columns) * sqrt_ds[:, None]
    rhs = target.values * sqrt_ds
    coeffs, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    fitted = np.column_stack(columns) @ coeffs
    ratio = float(np.linalg.norm(M @ coeffs - rhs) / max(np.linalg.norm(rhs), 1e-300))
    logger.debug(f"least-squares preimage: {len(basis)} basis functions, residual ratio {ratio:.3e}")
    return Preimage(coeffs, BoundaryProfile(fitted), ratio, basis)


def pumping_response(lam: Optional[ScalarField], D: GridDomain, p: Point) -> BoundaryProfile:
    """V(p) = lambda dn g_p on the boundary nodes."""
    gs = green(_operator(lam), D, as_complex(p))
    dn = normal_derivative(gs).values
    if lam is not None:
        dn = dn * lam.sample(D.boundary_positions)
    return BoundaryProfile(dn)


def dtn_direct(lam: Optional[ScalarField], D: GridDomain, f: BoundaryProfile) -> BoundaryProfile:
    """N_lambda f = dn u with div(lambda grad u) = 0, u = f."""
    u = dirichlet_solve(_operator(lam), D, f)
    return field_normal_derivative(u, D, f)


def response_extension(lam: Optional[ScalarField], D: GridDomain, f: BoundaryProfile) -> ScalarField:
    """
    u(p) = integral of f V(p) ds at every interior node from one adjoint solve.

    dn g_p(zeta) = N (A^-1 e_p) / h^2, so the sum over zeta for all p at once is
    A^-T N^T (f ds lambda) / h^2.
    """
    if len(f) != D.n_boundary:
        raise GridError("boundary data are not aligned with the domain boundary")
    N_int, _ = normal_operator(D)
    weights = f.values * D.boundary_ds
    if lam is not None:
        weights = weights * lam.sample(D.boundary_positions)
    system = assemble(_operator(lam), D)
    interior = system.solve_transpose(N_int.T @ weights) / D.spec.h ** 2
    values = np.zeros(D.spec.nx * D.spec.ny)
    values[D.unknowns] = interior
    return ScalarField(D.spec, D.fill_exterior(values, f.values))


def _cubic_terms(s: np.ndarray) -> np.ndarray:
    X, Y = s.real, s.imag
    return np.column_stack([np.ones_like(X), X, Y, X * X, X * Y, Y * Y,
                            X ** 3, X * X * Y, X * Y * Y, Y ** 3])


def dtn_from_response(lam: Optional[ScalarField], D: GridDomain, f: BoundaryProfile,
                      probe_band: Tuple[float, float] = (3.0, 7.0)) -> BoundaryProfile:
    """
    dn u on the boundary from u rebuilt by pumping responses at probe nodes
    between probe_band[0] and probe_band[1] cells inside the boundary.

    Each boundary node fits a cubic to nearby probe values and the boundary
    data, then differentiates along the outward normal.
    """
    inner, outer = probe_band
    if inner < 3.0:
        raise GridError(f"probes must stay at least 3 cells inside the boundary, got {inner}")
    h = D.spec.h
    u = response_extension(lam, D, f)
    depth = -D.phi
    probes = np.flatnonzero(((depth >= inner * h) & (depth <= outer * h)).ravel())
    if probes.size == 0:
        raise DomainError("domain has no nodes in the probe band")
    Z = D.spec.complex_nodes().ravel()[probes]
    uvals = u.values.ravel()[probes]
    tree = cKDTree(np.column_stack([Z.real, Z.imag]))
    zb = D.boundary_positions

    out = np.empty(D.n_boundary)
    radius = outer + 2.0
    for b in range(D.n_boundary):
        zeta = zb[b]
        idx = tree.query_ball_point([zeta.real, zeta.imag], radius * h)
        near_b = D.boundary_tree.query_ball_point([zeta.real, zeta.imag], 2.5 * h)
        pts = np.concatenate([Z[idx], zb[near_b]])
        vals = np.concatenate([uvals[idx], f.values[near_b]])
        V = _cubic_terms((pts - zeta) / h)
        coef, *_ = np.linalg.lstsq(V, vals, rcond=None)
        n = D.boundary_normals[b]
        out[b] = (n.real * coef[1] + n.imag * coef[2]) / h
    return BoundaryProfile(out)


def fourier_modes(D: GridDomain, order: int, center: Optional[complex] = None) -> Tuple[List[str], List[BoundaryProfile]]:
    """1, cos k theta, sin k theta (k <= order) on the boundary nodes."""
    max_order = settings().get('dtn.max_order', 6)
    if not 0 <= order <= max_order:
        raise DomainError(f"Fourier order must be in [0, {max_order}], got {order}")
    c = D.centroid() if center is None else center
    labels, modes = ['1'], [BoundaryProfile.constant(D, 1.0)]
    for k in range(1, order + 1):
        labels += [f'cos{k}', f'sin{k}']
        modes += [BoundaryProfile.from_angle(D, lambda t, k=k: np.cos(k * t), c),
                  BoundaryProfile.from_angle(D, lambda t, k=k: np.sin(k * t), c)]
    return labels, modes


@dataclass(frozen=True)
class DtNMatrix:
    """M[i][j] = integral of mode_i N mode_j ds over Fourier modes (cos k, sin k have norm^2 pi)."""

    labels: Tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.shape != (len(self.labels), len(self.labels)):
            raise GridError("DtN matrix must be square over its basis")

    def symmetry_defect(self) -> float:
        scale = np.max(np.abs(self.matrix))
        return 0.0 if scale == 0 else float(np.max(np.abs(self.matrix - self.matrix.T)) / scale)

    def entry(self, row: str, col: str) -> float:
        return float(self.matrix[self.labels.index(row), self.labels.index(col)])

    def to_csv(self, path: Path) -> Path:
        rows = ([label] + list(map(float, row)) for label, row in zip(self.labels, self.matrix))
        return write_rows(path, ['mode'] + list(self.labels), rows)


def dtn_matrix(lam: Optional[ScalarField], D: GridDomain, order: int = 3,
               method: str = 'direct') -> DtNMatrix:
    """DtN map in the Fourier basis, one Dirichlet solve per column."""
    labels, modes = fourier_modes(D, order)
    if method == 'direct':
        columns = [dtn_direct(lam, D, m) for m in modes]
    elif method == 'response':
        columns = [dtn_from_response(lam, D, m) for m in modes]
    else:
        raise ValueError(f"unknown DtN method {method!r}")
    M = np.array([[boundary_integrate(mi * col, D) for col in columns] for mi in modes])
    return DtNMatrix(tuple(labels), M)


@dataclass(frozen=True)
class PowerReport:
    power: float
    energy: float


def power_functional(lam: Optional[ScalarField], D: GridDomain, f: BoundaryProfile) -> PowerReport:
    """integral of f lambda dn u ds against the Dirichlet energy integral of lambda |grad u|^2."""
    u = dirichlet_solve(_operator(lam), D, f)
    dn = field_normal_derivative(u, D, f).values
    lam_b = np.ones(D.n_boundary) if lam is None else lam.sample(D.boundary_positions)
    power = float(np.dot(f.values * lam_b * dn, D.boundary_ds))
    gx, gy = interior_gradient(interior_of(u, D), D, f.values)
    lam_int = np.ones(D.n_unknowns) if lam is None else interior_of(lam, D)
    density = np.zeros(D.spec.nx * D.spec.ny)
    density[D.unknowns] = lam_int * (gx * gx + gy * gy)
    extended = extend_from_interior(density.reshape(D.spec.shape), D.mask)
    return PowerReport(power, integrate(ScalarField(D.spec, extended), D))


@dataclass(frozen=True)
class TwoPointReport:
    w: complex
    xi: complex
    gap_w: float
    gap_xi: float
    scale: float
    profiles: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            'w': [self.w.real, self.w.imag],
            'xi': [self.xi.real, self.xi.imag],
            'gap_w': self.gap_w,
            'gap_xi': self.gap_xi,
            'scale': self.scale,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def two_point_response_experiment(lam1: Optional[ScalarField], lam2: Optional[ScalarField], D: GridDomain,
                                  w: Point, xi: Point) -> TwoPointReport:
    """Max gaps between the responses of lam1 and lam2 at w and at xi. Records data, asserts nothing."""
    w, xi = as_complex(w), as_complex(xi)
    if w == xi:
        raise GridError("the two pumping points must differ")
    V = {(k, p): pumping_response(lam, D, p).values
         for k, lam in (('lam1', lam1), ('lam2', lam2)) for p in (w, xi)}
    gap_w = float(np.max(np.abs(V['lam1', w] - V['lam2', w])))
    gap_xi = float(np.max(np.abs(V['lam1', xi] - V['lam2', xi])))
    scale = float(max(np.max(np.abs(v)) for v in V.values()))
    logger.info(f"two-point experiment: gap at w {gap_w:.3e}, gap at xi {gap_xi:.3e}")
    return TwoPointReport(w, xi, gap_w, gap_xi, scale, {f'{k}@{p}': v for (k, p), v in V.items()})
