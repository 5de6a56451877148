"""
Perturbative Dirichlet solvers for Delta - eps u and div((1 + eps u) grad).

Both first-order corrections are zero-Dirichlet Poisson solves against the
unperturbed solution phi_0, which is the same as integrating against g_z.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from growthlab.checks import CheckMode, GoldenRow
from growthlab.errors import DomainError
from growthlab.grid_core import (
    BoundaryProfile,
    GridDomain,
    GridSpec,
    Point,
    ScalarField,
    area,
    as_complex,
    integrate,
    make_disk,
)
from growthlab.logger import Logger
from growthlab.operators_green import (
    OperatorDesc,
    interior_of,
    field_from_interior,
    dirichlet_solve,
    green,
    interior_gradient,
    solve_zero_dirichlet,
)

logger = Logger()

MAX_AREA_MOMENT = 4
MIN_PROBES = 16


def dirichlet_schrodinger_first_order(D: GridDomain, u: ScalarField, f: BoundaryProfile,
                                      eps: float) -> ScalarField:
    """phi_0 + eps psi with Lap psi = u phi_0, psi = 0 on the boundary."""
    laplace = OperatorDesc.laplace()
    phi0 = dirichlet_solve(laplace, D, f)
    if eps == 0:
        return phi0
    psi = solve_zero_dirichlet(laplace, D, u * phi0)
    return phi0 + psi * eps


def beltrami_source(D: GridDomain, u: ScalarField, phi0: ScalarField, f: BoundaryProfile) -> ScalarField:
    """-grad u . grad phi_0 on the interior nodes (zero outside)."""
    uy, ux = np.gradient(u.values, D.spec.h)
    px, py = interior_gradient(interior_of(phi0, D), D, f.values)
    source = -(ux.ravel()[D.unknowns] * px + uy.ravel()[D.unknowns] * py)
    return field_from_interior(D, source)


def dirichlet_beltrami_first_order(D: GridDomain, u: ScalarField, f: BoundaryProfile,
                                   eps: float) -> ScalarField:
    """
    phi_0 + eps psi for div((1 + eps u) grad phi) = 0, phi = f.

    Expanding the equation to first order gives Lap psi = -grad u . grad phi_0
    with psi = 0 on the boundary.
    """
    D.spec.require_match(u.spec)
    # constructing the operator validates lambda = 1 + eps u against the floor
    OperatorDesc.beltrami(ScalarField.constant(D.spec, 1.0) + u * eps)
    laplace = OperatorDesc.laplace()
    phi0 = dirichlet_solve(laplace, D, f)
    if eps == 0:
        return phi0
    psi = solve_zero_dirichlet(laplace, D, beltrami_source(D, u, phi0, f))
    return phi0 + psi * eps


def _require_unit_disk(D: GridDomain):
    h = D.spec.h
    radii = np.abs(D.boundary_positions)
    if np.max(np.abs(radii - 1.0)) > h or abs(area(D) - np.pi) > 0.01 * np.pi:
        raise DomainError("the Green-area identity is only available on the unit disk")


def green_area_closed_form(z: Point, n: int) -> float:
    r2 = abs(as_complex(z)) ** 2
    return -(1.0 - r2 ** (n + 1)) / (4.0 * (n + 1) ** 2)


def green_area_moment(D: GridDomain, z: Point, n: int) -> Tuple[float, float]:
    """
    (quadrature, closed form) of the integral of |xi|^{2n} g_z(xi) over the unit disk.
    """
    if not 0 <= n <= MAX_AREA_MOMENT:
        raise DomainError(f"moment power must be in [0, {MAX_AREA_MOMENT}], got {n}")
    _require_unit_disk(D)
    z = as_complex(z)
    g = green(OperatorDesc.laplace(), D, z)
    weight = ScalarField.radial(D.spec, lambda r: r ** (2 * n))
    return integrate(weight * g.total, D), green_area_closed_form(z, n)


def _green_l2(D: GridDomain, z: complex) -> float:
    """||g_z||_2 with the singular cell integrated analytically."""
    g = green(OperatorDesc.laplace(), D, z)
    sq = g.total.values ** 2
    j, i = D.spec.nearest_node(z)
    if abs(D.spec.node_point(j, i) - z) < 0.5 * D.spec.h:
        rho = D.spec.h / np.sqrt(np.pi)
        lr = np.log(rho)
        reg = g.regular_part.values[j, i]
        s = g.Q * g.scale
        sq = sq.copy()
        sq[j, i] = s * s * (lr * lr - lr + 0.5) + 2.0 * s * reg * (lr - 0.5) + reg * reg
    return float(np.sqrt(integrate(ScalarField(D.spec, sq), D)))


def default_probes(D: GridDomain, count: int = MIN_PROBES, clearance_cells: float = 5.0) -> List[complex]:
    """count interior nodes spread evenly over the nodes at least clearance_cells deep."""
    deep = np.flatnonzero((D.phi <= -clearance_cells * D.spec.h).ravel())
    if deep.size < count:
        raise DomainError(f"domain has only {deep.size} nodes {clearance_cells} cells from the boundary")
    picks = deep[np.linspace(0, deep.size - 1, count).round().astype(int)]
    Z = D.spec.complex_nodes().ravel()
    return [complex(Z[k]) for k in picks]


@dataclass(frozen=True)
class LinearizationBound:
    probes: Tuple[complex, ...]
    variations: np.ndarray
    bounds: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        safe = self.bounds > 0
        return np.where(safe, self.variations / np.where(safe, self.bounds, 1.0), 0.0)

    @property
    def worst_ratio(self) -> float:
        return float(self.ratios.max())


def linearization_bound_check(D: GridDomain, u: ScalarField, f: BoundaryProfile,
                              probes: Optional[Sequence[Point]] = None) -> LinearizationBound:
    """
    |delta phi(z)| against ||u||_2 ||g_z||_2 ||f||_inf at interior probes.

    delta phi = integral of u phi_0 g_z, the first Schrodinger correction.
    """
    probes = default_probes(D) if probes is None else [D.spec.snap(as_complex(p)) for p in probes]
    if len(probes) < MIN_PROBES:
        raise DomainError(f"need at least {MIN_PROBES} probes, got {len(probes)}")
    laplace = OperatorDesc.laplace()
    phi0 = dirichlet_solve(laplace, D, f)
    delta = solve_zero_dirichlet(laplace, D, u * phi0)
    u_l2 = float(np.sqrt(integrate(u * u, D)))
    f_inf = float(np.max(np.abs(f.values))) if len(f) else 0.0
    variations = np.array([abs(delta.at(z)) for z in probes])
    bounds = np.array([u_l2 * _green_l2(D, z) * f_inf for z in probes])
    result = LinearizationBound(tuple(probes), variations, bounds)
    logger.debug(f"linearization bound: worst ratio {result.worst_ratio:.4f} over {len(probes)} probes")
    return result


def dirichlet_golden_rows(spec: GridSpec, eps: float = 0.1) -> List[GoldenRow]:
    """Worked disk examples: Helmholtz correction, Beltrami correction and Green-area moments."""
    D = make_disk(0j, 1.0, spec)
    one = BoundaryProfile.constant(D, 1.0)
    helm = dirichlet_schrodinger_first_order(D, ScalarField.constant(spec, 1.0), one, eps)
    u = ScalarField.radial(spec, lambda r: r * r)
    saddle = BoundaryProfile.from_function(D, lambda x, y: x * x - y * y)
    belt = dirichlet_beltrami_first_order(D, u, saddle, 1.0)
    phi0 = dirichlet_solve(OperatorDesc.laplace(), D, saddle)

    rows = []
    for z in (0j, 0.3 + 0j, 0.2 + 0.4j, 0.6j):
        r2 = abs(z) ** 2
        rows.append(GoldenRow(f'helmholtz_first_order z={z}', 1 - eps / 4 * (1 - r2), helm.at(z), 1e-3))
        theta = np.angle(z) if z != 0 else 0.0
        rows.append(GoldenRow(f'beltrami_first_variation z={z}', (r2 - r2 * r2) * np.cos(2 * theta) / 3,
                              belt.at(z) - phi0.at(z), 1e-3))
        quad, closed = green_area_moment(D, z, 1)
        rows.append(GoldenRow(f'green_area_weighted_4r2 z={z}', 4 * closed, 4 * quad, 1e-3))
    for n in (0, 1, 2):
        for z in (0j, 0.3 + 0j, 0.6 + 0j):
            quad, closed = green_area_moment(D, z, n)
            rows.append(GoldenRow(f'green_area n={n} z={z}', closed, quad, 0.01, CheckMode.RELATIVE))
    return rows
