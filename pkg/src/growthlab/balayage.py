"""
Partial balayage Bal(mu, 1) as an obstacle problem.

V is the smallest function with V >= Lambda^mu and L V <= 1; the balayage
is L V. Writing W = V - q with L q = 1 turns this into a linear
complementarity problem for the (negated) assembled operator M = -A:

    W >= psi,   M W - b >= 0,   (W - psi) . (M W - b) = 0

with psi = Lambda^mu - q and b the boundary contribution. Projected
red-black SOR gets close, a primal-dual active-set iteration finishes it.

Potentials live on a square computational box. The box is treated as a
GridDomain whose boundary sits 1.5 cells inside the outer edge, so the
operators of operators_green apply unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy import ndimage

from growthlab.config import settings
from growthlab.errors import ConvergenceError, DomainError, MassConservationError
from growthlab.grid_core import GridDomain, GridSpec, Measure, ScalarField
from growthlab.logger import Logger
from growthlab.operators_green import (
    OperatorDesc,
    assemble,
    fundamental_gradient,
    fundamental_values,
)

logger = Logger()

SATURATION_TOL = 1e-6


@lru_cache(maxsize=4)
def box_domain(box: GridSpec) -> GridDomain:
    """The computational box as a domain; nodes of the two outer rings are exterior."""
    X, Y = box.nodes()
    x0, x1, y0, y1 = box.extent
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    ax = 0.5 * (x1 - x0) - 1.5 * box.h
    ay = 0.5 * (y1 - y0) - 1.5 * box.h
    return GridDomain(box, np.maximum(np.abs(X - cx) - ax, np.abs(Y - cy) - ay))


def balayage_box(mu: Measure, n: Optional[int] = None, inflation: Optional[float] = None) -> GridSpec:
    """
    Square box around the support of mu, inflated so that a disk of the same
    mass also fits.
    """
    cfg = settings()
    n = n or cfg.get('grid.n', 256)
    inflation = inflation or cfg.get('balayage.box_inflation', 2.5)
    xmin, xmax, ymin, ymax = mu.support_extent()
    centre = complex(0.5 * (xmin + xmax), 0.5 * (ymin + ymax))
    half = max(0.5 * (xmax - xmin), 0.5 * (ymax - ymin), np.sqrt(mu.total_mass / np.pi))
    return GridSpec.square(n, inflation * half, centre)


def _check_margin(extent: Tuple[float, float, float, float], box: GridSpec, what: str):
    fraction = settings().get('balayage.margin_fraction', 0.25)
    x0, x1, y0, y1 = box.extent
    mx, my = fraction * (x1 - x0), fraction * (y1 - y0)
    xmin, xmax, ymin, ymax = extent
    if xmin < x0 + mx or xmax > x1 - mx or ymin < y0 + my or ymax > y1 - my:
        raise DomainError(f"{what} is not inside the central part of the computational box")


def _far_field(mu: Measure, points: np.ndarray) -> np.ndarray:
    """Log, dipole and quadrupole terms of the Newtonian potential of mu about its centre of mass."""
    spec = mu.spec
    Z = spec.complex_nodes()
    rho = mu.density.values * spec.h ** 2
    weights = np.concatenate([rho.ravel(), [m for _, m in mu.atoms]])
    locs = np.concatenate([Z.ravel(), [w for w, _ in mu.atoms]])
    mass = weights.sum()
    if mass <= 0:
        return np.zeros(points.shape)
    c = complex(np.dot(weights, locs) / mass)
    d1 = complex(np.dot(weights, locs - c))
    d2 = complex(np.dot(weights, (locs - c) ** 2))
    zc = points - c
    return (mass * np.log(np.abs(zc)) - (d1 / zc).real - (0.5 * d2 / zc ** 2).real) / (2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class PotentialField:
    """
    Potential of a measure on the computational box.

    field = atoms (frozen-coefficient log kernels) + smooth, and
    L field = mu in the grid sense.
    """

    field: ScalarField
    smooth: ScalarField
    kind: str
    source: Measure
    lam: Optional[ScalarField] = None
    residual: float = 0.0
    boundary_values: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def box(self) -> GridSpec:
        return self.field.spec

    def operator(self) -> OperatorDesc:
        return OperatorDesc.laplace() if self.lam is None else OperatorDesc.beltrami(self.lam)

    def value_at(self, z: complex) -> float:
        """Atoms evaluated exactly, smooth part interpolated."""
        total = self.smooth.at(z)
        for w, m in self.source.atoms:
            lam_w = 1.0 if self.lam is None else self.lam.at(w)
            total += m / (2.0 * np.pi * lam_w) * np.log(abs(z - w))
        return float(total)


def _potential(mu: Measure, lam: Optional[ScalarField], box: GridSpec) -> PotentialField:
    box.require_match(mu.spec, 'measure')
    _check_margin(mu.support_extent(), box, 'measure support')
    B = box_domain(box)
    op = OperatorDesc.laplace() if lam is None else OperatorDesc.beltrami(lam)
    system = assemble(op, B)
    nodes = box.complex_nodes()

    atoms = np.zeros(box.shape)
    source = mu.density.values.ravel()[B.unknowns].copy()
    if lam is not None:
        box.require_match(lam.spec, 'lambda')
        lam_y, lam_x = np.gradient(lam.values, box.h)
        lx, ly = lam_x.ravel()[B.unknowns], lam_y.ravel()[B.unknowns]
    Z_int = nodes.ravel()[B.unknowns]
    atoms_b = np.zeros(B.n_boundary)
    for w, m in mu.atoms:
        scale = m / (2.0 * np.pi * (1.0 if lam is None else lam.at(w)))
        atoms += fundamental_values(box, w, 1.0) * scale
        atoms_b += scale * np.log(np.abs(B.boundary_positions - w))
        if lam is not None:
            grad = fundamental_gradient(Z_int, w, scale, box.h)
            source -= lx * grad.real + ly * grad.imag

    far_b = _far_field(mu, B.boundary_positions)
    far_nodes = _far_field(mu, nodes)
    if lam is not None:
        far_b = far_b / lam.sample(B.boundary_positions)
        far_nodes = far_nodes / lam.values
    interior = system.solve_dirichlet(source, far_b - atoms_b)

    smooth = (far_nodes - atoms).ravel()
    smooth[B.unknowns] = interior
    smooth = smooth.reshape(box.shape)
    report = system.report()
    kind = 'newtonian' if lam is None else 'elliptic'
    logger.debug(f"{kind} potential: mass {mu.total_mass:.6g}, {len(mu.atoms)} atoms, residual {report.residual:.2e}")
    return PotentialField(ScalarField(box, smooth + atoms), ScalarField(box, smooth), kind, mu, lam,
                          report.residual, far_b)


def newtonian_potential(mu: Measure, box: GridSpec) -> PotentialField:
    """U^mu = integral of (2 pi)^-1 ln|z - w| dmu(w) on the box."""
    return _potential(mu, None, box)


def elliptic_potential(mu: Measure, lam: ScalarField, box: GridSpec) -> PotentialField:
    """Lambda^mu with div(lambda grad Lambda^mu) = mu on the box."""
    return _potential(mu, lam, box)


@dataclass(frozen=True, eq=False)
class BalayageResult:
    """
    Solution of the obstacle problem.

    result_density is L V, taken as mu's own density on nodes where the
    obstacle is active, plus the discrete L (V - Lambda^mu).
    """

    V: ScalarField
    potential: PotentialField
    result_density: ScalarField
    saturated_mask: np.ndarray
    iterations: int
    residual: float
    complementarity: float
    trace: List[Tuple[int, float]] = field(default_factory=list, repr=False)

    @property
    def mass(self) -> float:
        return float(self.result_density.values.sum() * self.V.spec.h ** 2)

    def as_measure(self) -> Measure:
        return Measure(self.result_density)


def _color_blocks(B: GridDomain, M: sps.csr_matrix):
    spec = B.spec
    rows, cols = np.divmod(B.unknowns, spec.nx)
    blocks = []
    for color in (0, 1):
        idx = np.flatnonzero((rows + cols) % 2 == color)
        blocks.append((idx, M[idx], M.diagonal()[idx]))
    return blocks


def _psor(blocks, W: np.ndarray, psi: np.ndarray, b: np.ndarray, omega: float, sweeps: int,
          tol: float, trace: List[Tuple[int, float]], start: int) -> Tuple[np.ndarray, int, float]:
    change = np.inf
    k = start
    for k in range(start + 1, start + sweeps + 1):
        change = 0.0
        for idx, M_c, diag in blocks:
            r = b[idx] - M_c @ W
            new = np.maximum(psi[idx], W[idx] + omega * r / diag)
            change = max(change, float(np.max(np.abs(new - W[idx]))))
            W[idx] = new
        if k % 50 == 0:
            trace.append((k, change))
        if change <= tol:
            break
    return W, k, change


def _active_set_polish(M: sps.csr_matrix, W: np.ndarray, psi: np.ndarray, b: np.ndarray,
                       rounds: int, trace: List[Tuple[int, float]], start: int) -> Tuple[np.ndarray, int]:
    """Primal-dual active set iteration for the complementarity problem."""
    diag = M.diagonal()
    multiplier = M @ W - b
    active = multiplier + diag * (psi - W) > 0
    for k in range(1, rounds + 1):
        inactive = ~active
        W = np.where(active, psi, W)
        if inactive.any():
            I = np.flatnonzero(inactive)
            A_idx = np.flatnonzero(active)
            rhs = b[I] - M[I][:, A_idx] @ psi[A_idx]
            W[I] = spla.spsolve(M[I][:, I].tocsc(), rhs)
        multiplier = np.where(active, M @ W - b, 0.0)
        new_active = multiplier + diag * (psi - W) > 0
        changed = int(np.count_nonzero(new_active != active))
        trace.append((start + k, float(changed)))
        logger.debug(f"active-set round {k}: {changed} nodes switched, {int(new_active.sum())} active")
        active = new_active
        if changed == 0:
            return W, k
    raise ConvergenceError(f"active-set polish did not settle in {rounds} rounds")


def partial_balayage(mu: Measure, lam: Optional[ScalarField] = None,
                     box: Optional[GridSpec] = None) -> BalayageResult:
    """Bal(mu, 1) for L = Delta (lam None) or L = div(lam grad)."""
    cfg = settings()
    box = box or mu.spec
    potential = _potential(mu, lam, box)
    B = box_domain(box)
    op = potential.operator()
    system = assemble(op, B)
    h = box.h

    if lam is None:
        c = complex(*[0.5 * (lo + hi) for lo, hi in zip(box.extent[::2], box.extent[1::2])])
        q = np.abs(box.complex_nodes() - c) ** 2 / 4.0
        q_b = np.abs(B.boundary_positions - c) ** 2 / 4.0
    else:
        q_int = system.solve_dirichlet(np.ones(B.n_unknowns), np.zeros(B.n_boundary))
        q = np.zeros(box.nx * box.ny)
        q[B.unknowns] = q_int
        q = q.reshape(box.shape)
        q_b = np.zeros(B.n_boundary)

    Lam = potential.field.values
    Lam_b = potential.boundary_values
    psi = (Lam - q).ravel()[B.unknowns]
    W_b = Lam_b - q_b
    M = (-system.A).tocsr()
    b = system.B @ W_b

    scale = max(float(np.max(np.abs(Lam))), 1e-300)
    tol = cfg.get('psor.tol', 1e-11) * scale
    omega = cfg.get('psor.omega', 1.9)
    blocks = _color_blocks(B, M)
    trace: List[Tuple[int, float]] = []

    W = psi.copy()
    W, sweeps, change = _psor(blocks, W, psi, b, omega, cfg.get('psor.warm_sweeps', 400), tol, trace, 0)
    W, rounds = _active_set_polish(M, W, psi, b, cfg.get('psor.polish_rounds', 25), trace, sweeps)
    W, sweeps, change = _psor(blocks, W, psi, b, omega, cfg.get('psor.max_sweeps', 20000), tol, trace,
                              sweeps + rounds)
    if change > tol:
        raise ConvergenceError(f"projected SOR stalled at change {change:.3e} (tolerance {tol:.1e})")

    gap = W - psi
    LW = -(M @ W - b)
    # active nodes carry mu's own density plus what spills in from saturated neighbours
    active_density = mu.density.values.ravel()[B.unknowns] + system.A @ gap
    density_int = np.where(gap > 0, 1.0 + LW, active_density)
    density = np.zeros(box.nx * box.ny)
    density[B.unknowns] = np.clip(density_int, 0.0, 1.0)
    density = density.reshape(box.shape)

    V = np.array(Lam, dtype=float).reshape(-1)
    V[B.unknowns] = W + q.ravel()[B.unknowns]
    V = V.reshape(box.shape)
    complementarity = float(np.max(np.minimum(np.abs(LW), np.abs(gap) / scale)))
    saturated = density >= 1.0 - SATURATION_TOL

    result = BalayageResult(ScalarField(box, V), potential, ScalarField(box, density), saturated,
                            sweeps, float(change / scale), complementarity, trace)
    mass_in = mu.total_mass
    drift = abs(result.mass - mass_in) / mass_in if mass_in > 0 else 0.0
    logger.info(f"balayage: {sweeps} sweeps + {rounds} polish rounds, mass {result.mass:.6g} "
                f"(input {mass_in:.6g}, drift {drift:.2e})")
    if drift > cfg.get('balayage.mass_tolerance', 0.005):
        raise MassConservationError(f"balayage changed the mass by {100 * drift:.3f}%; enlarge the box")
    if saturated.any():
        rows, cols = np.nonzero(saturated)
        _check_margin((box.x[cols.min()], box.x[cols.max()], box.y[rows.min()], box.y[rows.max()]),
                      box, 'saturated set')
    return result


def quadrature_domain_check(mu: Measure, result: BalayageResult, dilation: int = 3) -> float:
    """
    Max |Lambda^{Bal mu} - Lambda^mu| over box nodes outside the saturated set
    grown by `dilation` cells.
    """
    lam = result.potential.lam
    swept = _potential(result.as_measure(), lam, result.V.spec)
    original = result.potential
    outside = ~ndimage.binary_dilation(result.saturated_mask, iterations=dilation)
    outside &= box_domain(result.V.spec).mask
    if not outside.any():
        return 0.0
    gap = np.abs(swept.field.values - original.field.values)[outside]
    return float(gap.max())
