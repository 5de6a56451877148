"""
Strong (level-set) and weak (balayage) growth of a domain pumped at w.

The boundary moves with normal velocity v_n = lambda dn g_w, where g_w is
the Green function of the operator with strength Q (lambda = 1 for laplace
and schrodinger). Strong steps advect the signed distance phi with a
second-order ENO upwind scheme and Heun time stepping; weak steps take one
partial balayage of chi_D + Q dt delta_w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from growthlab.balayage import balayage_box, partial_balayage
from growthlab.config import settings
from growthlab.errors import CFLError, DomainError, HypothesisError
from growthlab.grid_core import (
    BoundaryProfile,
    GridDomain,
    GridSpec,
    Measure,
    ScalarField,
    area,
    as_complex,
    harmonic_moment,
    integrate,
    make_disk,
    make_ellipse,
)
from growthlab.io_formats import write_pgm, write_rows
from growthlab.logger import Logger
from growthlab.operators_green import (
    OperatorDesc,
    OperatorKind,
    dirichlet_solve,
    green,
    normal_derivative,
)
from growthlab.special import besseli0

logger = Logger()

EDGE_CLEARANCE_CELLS = 3
REJECT_THRESHOLD = 1e-3
RICHARDSON_TOLERANCE = 0.05
RUN_LOG_HEADER = ['step', 't', 'area', 'rate'] + [f'{part} t{n}' for n in range(1, 5) for part in ('Re', 'Im')] \
    + ['max_vn', 'solver_iters']


@dataclass(frozen=True)
class MomentRecord:
    step: int
    t: float
    area: float
    moments: Tuple[complex, ...]
    rate: float
    max_vn: float
    solver_iters: int

    def as_row(self) -> list:
        row = [self.step, self.t, self.area, self.rate]
        for tn in self.moments[1:5]:
            row += [tn.real, tn.imag]
        return row + [self.max_vn, self.solver_iters]


@dataclass(frozen=True, eq=False)
class GrowthState:
    """Domain D(t) pumped at w with rate Q under op."""

    t: float
    D: GridDomain
    op: OperatorDesc
    w: complex
    Q: float = 1.0
    step: int = 0
    moment_log: Tuple[MomentRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'w', as_complex(self.w))
        if self.Q < 0:
            raise HypothesisError(f"suction (Q = {self.Q:g} < 0) is ill-posed and is not integrated")
        if not self.D.contains(self.w):
            raise DomainError(f"source {self.w} is not inside the domain")

    @property
    def area(self) -> float:
        return area(self.D)


def boundary_velocity(state: GrowthState) -> Tuple[BoundaryProfile, int]:
    """v_n on the boundary nodes, and the solver iteration count (1 for a direct solve)."""
    if state.Q == 0:
        return BoundaryProfile.constant(state.D, 0.0), 0
    gs = green(state.op, state.D, state.w, state.Q)
    vn = normal_derivative(gs)
    if state.op.kind is OperatorKind.BELTRAMI:
        vn = BoundaryProfile(vn.values * state.op.coefficient.sample(state.D.boundary_positions))
    return vn, 1


def record_state(state: GrowthState, vn: Optional[BoundaryProfile] = None, iters: int = 1) -> MomentRecord:
    if vn is None:
        vn, iters = boundary_velocity(state)
    D = state.D
    return MomentRecord(
        step=state.step,
        t=state.t,
        area=area(D),
        moments=tuple(harmonic_moment(D, n) for n in range(5)),
        rate=float(np.dot(vn.values, D.boundary_ds)),
        max_vn=float(np.max(np.abs(vn.values))) if len(vn) else 0.0,
        solver_iters=iters,
    )


def extend_velocity(D: GridDomain, vn: BoundaryProfile) -> np.ndarray:
    """Speed on every node, copied from the closest boundary node."""
    Z = D.spec.complex_nodes().ravel()
    _, idx = D.boundary_tree.query(np.column_stack([Z.real, Z.imag]))
    return vn.values[idx].reshape(D.spec.shape)


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def _eno2_differences(phi: np.ndarray, h: float, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    """Second-order ENO one-sided differences (D-, D+) along axis."""
    p = np.pad(phi, [(2, 2) if a == axis else (0, 0) for a in range(2)], mode='edge')
    n = phi.shape[axis]

    def s(k):
        return np.take(p, np.arange(2 + k, 2 + k + n), axis=axis)

    d2 = [(s(k + 1) - 2 * s(k) + s(k - 1)) / h ** 2 for k in (-1, 0, 1)]
    minus = (s(0) - s(-1)) / h + 0.5 * h * _minmod(d2[0], d2[1])
    plus = (s(1) - s(0)) / h - 0.5 * h * _minmod(d2[1], d2[2])
    return minus, plus


def _godunov_rate(phi: np.ndarray, speed: np.ndarray, h: float) -> np.ndarray:
    """speed * |grad phi| with Godunov upwinding."""
    xm, xp = _eno2_differences(phi, h, axis=1)
    ym, yp = _eno2_differences(phi, h, axis=0)
    grow = np.sqrt(np.maximum(xm, 0) ** 2 + np.minimum(xp, 0) ** 2
                   + np.maximum(ym, 0) ** 2 + np.minimum(yp, 0) ** 2)
    shrink = np.sqrt(np.minimum(xm, 0) ** 2 + np.maximum(xp, 0) ** 2
                     + np.minimum(ym, 0) ** 2 + np.maximum(yp, 0) ** 2)
    return np.where(speed > 0, speed * grow, speed * shrink)


def reinitialize(phi: np.ndarray, spec: GridSpec) -> np.ndarray:
    """
    Signed distance from a level-set array: nodes next to the interface keep
    phi / |grad phi|, the rest get the distance to the nearest edge crossing.
    """
    D = GridDomain(spec, phi)
    h = spec.h
    gy, gx = np.gradient(phi, h)
    grad = np.maximum(np.hypot(gx, gy), 1e-12)
    inside = phi < 0
    near = np.zeros_like(inside)
    for axis in (0, 1):
        flip = inside != np.roll(inside, 1, axis=axis)
        near |= flip | np.roll(flip, -1, axis=axis)
    Z = spec.complex_nodes().ravel()
    dist, _ = D.boundary_tree.query(np.column_stack([Z.real, Z.imag]))
    far = np.where(inside, -1.0, 1.0) * dist.reshape(spec.shape)
    return np.where(near, phi / grad, far)


def _check_edge(spec: GridSpec, mask: np.ndarray):
    k = EDGE_CLEARANCE_CELLS
    if mask[:k, :].any() or mask[-k:, :].any() or mask[:, :k].any() or mask[:, -k:].any():
        raise DomainError(f"the growing domain came within {k} cells of the grid edge")


def strong_step(state: GrowthState, dt: Optional[float] = None, t_limit: Optional[float] = None) -> GrowthState:
    """
    Advance phi by one level-set step of length dt.

    The default dt is cfl_factor times the CFL bound, capped at t_limit.
    """
    cfg = settings()
    vn, iters = boundary_velocity(state)
    record = record_state(state, vn, iters)
    D = state.D
    h = D.spec.h
    max_v = record.max_vn
    if max_v == 0:
        dt = (t_limit or 0.0) if dt is None else dt
        return replace(state, t=state.t + dt, step=state.step + 1, moment_log=state.moment_log + (record,))
    bound = h / max_v
    if dt is None:
        dt = cfg.get('growth.cfl_factor', 0.4) * bound
        if t_limit is not None:
            dt = min(dt, t_limit)
    if dt > bound * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.4g} exceeds the CFL bound h / max|v_n| = {bound:.4g}")

    speed = extend_velocity(D, vn)
    phi = np.array(D.phi)
    stage = phi - dt * _godunov_rate(phi, speed, h)
    phi_new = 0.5 * (phi + stage - dt * _godunov_rate(stage, speed, h))

    step = state.step + 1
    if step % cfg.get('growth.reinit_interval', 5) == 0:
        phi_new = reinitialize(phi_new, D.spec)
    _check_edge(D.spec, phi_new < 0)
    new_D = GridDomain(D.spec, phi_new)
    logger.debug(f"strong step {step}: dt={dt:.4g}, max v_n={max_v:.4g}, area {record.area:.6g}")
    return GrowthState(state.t + dt, new_D, state.op, state.w, state.Q, step, state.moment_log + (record,))


def _aligned_box(D: GridDomain, mu: Measure) -> Tuple[GridSpec, int, int]:
    """Box on D's lattice big enough for the balayage of mu; returns (box, row offset, col offset)."""
    template = balayage_box(mu)
    spec = D.spec
    half = 0.5 * (template.extent[1] - template.extent[0])
    x0, x1, y0, y1 = template.extent
    j, i = spec.nearest_node(complex(0.5 * (x0 + x1), 0.5 * (y0 + y1)))
    K = int(math.ceil(half / spec.h))
    box = GridSpec((spec.x[0] + (i - K) * spec.h, spec.y[0] + (j - K) * spec.h), spec.h, 2 * K + 1, 2 * K + 1)
    return box, K - j, K - i


def weak_step(state: GrowthState, dt: float) -> GrowthState:
    """D(t + dt) from the saturated set of Bal(chi_D(t) + Q dt delta_w, 1)."""
    if dt == 0 or state.Q == 0:
        return replace(state, t=state.t + dt)
    if state.Q * dt < 0:
        raise HypothesisError(f"weak steps need Q dt > 0, got Q = {state.Q:g}, dt = {dt:g}")
    D, spec = state.D, state.D.spec
    lam = state.op.coefficient if state.op.kind is OperatorKind.BELTRAMI else None
    if state.op.kind is OperatorKind.SCHRODINGER:
        raise HypothesisError("weak growth is defined for laplace and beltrami operators")
    record = record_state(state)

    probe = Measure.indicator(D, [(state.w, state.Q * dt)])
    box, dj, di = _aligned_box(D, probe)
    rows, cols = np.nonzero(D.weights > 0)
    density = np.zeros(box.shape)
    density[rows + dj, cols + di] = D.weights[rows, cols]
    box_lam = None
    if lam is not None:
        Zb = box.complex_nodes()
        box_lam = ScalarField(box, lam.sample(Zb.ravel()).reshape(box.shape))
    mu = Measure(ScalarField(box, density), ((state.w, state.Q * dt),))
    result = partial_balayage(mu, box_lam, box)

    out = result.result_density.values
    r, c = np.nonzero(out > 0)
    r, c = r - dj, c - di
    if r.min() < 0 or c.min() < 0 or r.max() >= spec.ny or c.max() >= spec.nx:
        raise DomainError("the weak solution left the growth grid")
    grown = np.zeros(spec.shape)
    grown[r, c] = out[r + dj, c + di]
    _check_edge(spec, grown >= 0.5)
    phi = reinitialize((0.5 - grown) * spec.h, spec)
    new_D = GridDomain(spec, phi)
    record = replace(record, solver_iters=result.iterations)
    logger.debug(f"weak step to t={state.t + dt:.4g}: area {area(new_D):.6g}")
    return GrowthState(state.t + dt, new_D, state.op, state.w, state.Q, state.step + 1,
                       state.moment_log + (record,))


@dataclass
class GrowthRun:
    states: List[GrowthState]

    @property
    def final(self) -> GrowthState:
        return self.states[-1]

    @property
    def records(self) -> Tuple[MomentRecord, ...]:
        return self.final.moment_log


def growth_run(state: GrowthState, t_end: float, mode: str = 'strong', dt: Optional[float] = None,
               out_dir: Optional[Path] = None, snapshot_stride: Optional[int] = None,
               keep_states: bool = True) -> GrowthRun:
    """
    Step from state.t to t_end. Weak runs use dt (default a tenth of the span).

    With out_dir, writes run_log.csv, boundary_snapshots.csv and PGM masks
    every snapshot_stride steps.
    """
    if mode not in ('strong', 'weak'):
        raise ValueError(f"unknown growth mode {mode!r}")
    stride = snapshot_stride or settings().get('growth.snapshot_stride', 10)
    if mode == 'weak' and dt is None:
        dt = (t_end - state.t) / 10.0
    states = [state]
    snapshots = []
    out_dir = Path(out_dir) if out_dir is not None else None

    def snapshot(s: GrowthState):
        for k, z in enumerate(s.D.boundary_positions):
            snapshots.append([s.t, k, z.real, z.imag])
        if out_dir is not None:
            write_pgm(out_dir / f'mask_{s.step:05d}.pgm', s.D.mask.astype(float))

    snapshot(state)
    while state.t < t_end - 1e-12:
        remaining = t_end - state.t
        if mode == 'strong':
            nxt = strong_step(state, None if dt is None else min(dt, remaining), t_limit=remaining)
        else:
            nxt = weak_step(state, min(dt, remaining))
        if not keep_states:
            state.D.cache.clear()
        state = nxt
        if keep_states:
            states.append(state)
        else:
            states[-1] = state
        if state.step % stride == 0:
            snapshot(state)

    final_record = record_state(state)
    state = replace(state, moment_log=state.moment_log + (final_record,))
    states[-1] = state
    logger.info(f"{mode} run: {state.step} steps to t={state.t:.4g}, area {final_record.area:.6g}")
    if out_dir is not None:
        write_rows(out_dir / 'run_log.csv', RUN_LOG_HEADER, (r.as_row() for r in state.moment_log))
        write_rows(out_dir / 'boundary_snapshots.csv', ['t', 'index', 'x', 'y'], snapshots)
    return GrowthRun(states)


@dataclass(frozen=True)
class MomentTrace:
    times: np.ndarray
    areas: np.ndarray
    area_rate: float
    area_rates: np.ndarray
    instantaneous_rates: np.ndarray
    moment_drift: np.ndarray
    test_rates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    test_targets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    test_scales: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def test_errors(self) -> np.ndarray:
        """Rate errors relative to Q max|phi| over the final domain."""
        return np.abs(self.test_rates - self.test_targets) / np.maximum(self.test_scales, 1e-300)


def moment_trace(states: Sequence[GrowthState],
                 test_functions: Sequence[ScalarField] = ()) -> MomentTrace:
    """
    Area rate and harmonic-moment drift over a run.

    moment_drift[n-1] = max |t_n(t) - t_n(0)| / (A_0 r_0^n) with r_0 = sqrt(A_0 / pi).
    For each L-harmonic test function phi, d/dt integral of phi over D(t) is
    fitted and compared with Q phi(w).
    """
    if len(states) < 3:
        raise ValueError("moment_trace needs at least three states")
    times = np.array([s.t for s in states])
    areas = np.array([area(s.D) for s in states])
    moments = np.array([[harmonic_moment(s.D, n) for n in range(1, 5)] for s in states])
    A0 = areas[0]
    r0 = math.sqrt(A0 / math.pi)
    scale = A0 * r0 ** np.arange(1, 5)
    drift = np.max(np.abs(moments - moments[0]), axis=0) / scale
    slope = float(np.polyfit(times, areas, 1)[0])
    records = {r.step: r.rate for r in states[-1].moment_log}
    inst = np.array([records.get(s.step, np.nan) for s in states])

    rates, targets, scales = [], [], []
    first, last = states[0], states[-1]
    for phi in test_functions:
        values = np.array([integrate(phi, s.D) for s in states])
        rates.append(float(np.polyfit(times, values, 1)[0]))
        targets.append(first.Q * phi.at(first.w))
        scales.append(first.Q * phi.max_abs(last.D.mask))
    return MomentTrace(times, areas, slope, np.gradient(areas, times), inst, drift,
                       np.array(rates), np.array(targets), np.array(scales))


def enclosing_disk(states: Sequence[GrowthState], center: complex, margin_cells: int = 3) -> GridDomain:
    """Disk about center holding every D(t) of the run, margin_cells away from the widest boundary."""
    spec = states[0].D.spec
    reach = max(float(np.max(np.abs(s.D.boundary_positions - center))) for s in states)
    return make_disk(center, reach + margin_cells * spec.h, spec)


def elliptic_richardson_functions(states: Sequence[GrowthState], degree: int = 2) -> List[ScalarField]:
    """
    L-harmonic functions with boundary data 1, Re (z - c)^k, Im (z - c)^k
    (k <= degree) on a disk about the initial centroid c that encloses the run.
    """
    first = states[0]
    centre = first.D.centroid()
    host = enclosing_disk(states, centre)
    data = [lambda z: np.ones_like(z.real)]
    for k in range(1, degree + 1):
        data.append(lambda z, k=k: ((z - centre) ** k).real)
        data.append(lambda z, k=k: ((z - centre) ** k).imag)
    z = host.boundary_positions
    return [dirichlet_solve(first.op, host, BoundaryProfile(f(z))) for f in data]


def radial_area_rate(lam: Callable[[np.ndarray], np.ndarray], R: float, samples: int = 256) -> float:
    """
    sqrt(lambda(0)) / sqrt(lambda(R)): area rate of the growing disks under
    Delta - u with u = lambda^{-1/2} Delta lambda^{1/2}.
    """
    r = np.linspace(0.0, R, samples)
    values = np.asarray(lam(r), dtype=float)
    if np.any(values <= 0):
        raise HypothesisError("lambda must be positive")
    if np.any(np.diff(values) < -1e-12 * np.max(values)):
        raise HypothesisError("lambda must be nondecreasing in r")
    return float(math.sqrt(values[0] / values[-1]))


def bessel_disk_rate(R: float) -> float:
    """1 / I0(R), the rate for u = 1 (lambda = I0(r)^2)."""
    return float(1.0 / besseli0(R))


def schrodinger_area_rate(u: ScalarField, D: GridDomain, w: complex = 0j) -> float:
    """Instantaneous area rate integral of dn g_w ds for Delta - u, Q = 1."""
    state = GrowthState(0.0, D, OperatorDesc.schrodinger(u), w)
    vn, _ = boundary_velocity(state)
    return float(np.dot(vn.values, D.boundary_ds))


def initial_rate_probe(u_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], w: complex = 0j,
                       radii: Sequence[float] = (0.4, 0.2, 0.1), n: Optional[int] = None) -> np.ndarray:
    """Schrodinger area rates of disks of shrinking radius about w, each on a grid of half width 2R."""
    n = n or settings().get('grid.n', 256)
    rates = []
    for R in radii:
        spec = GridSpec.square(n, 2.0 * R, w)
        D = make_disk(w, R, spec)
        rates.append(schrodinger_area_rate(ScalarField.from_function(spec, u_fn), D, w))
        logger.debug(f"initial rate at R={R:g}: {rates[-1]:.6f}")
    return np.array(rates)


@dataclass(frozen=True)
class FamilyVerdict:
    verdict: str
    rates: np.ndarray
    areas: np.ndarray
    reason: str

    @property
    def rejected(self) -> bool:
        return self.verdict == 'REJECT'


def reject_zero_rate_families(domains: Sequence[GridDomain], times: Sequence[float],
                              threshold: float = REJECT_THRESHOLD) -> FamilyVerdict:
    """
    Elliptic growth with a positive source has area rate bounded away from
    zero, so a family whose area stalls cannot be elliptic growth.
    """
    times = np.asarray(times, dtype=float)
    if len(domains) != times.size or times.size < 3:
        raise ValueError("need at least three domains with matching times")
    areas = np.array([area(D) for D in domains])
    rates = np.gradient(areas, times, edge_order=2)
    stalled = np.flatnonzero(np.abs(rates) <= threshold * areas)
    if stalled.size:
        t0 = times[stalled[0]]
        reason = (f"dA/dt = {rates[stalled[0]]:.3e} at t = {t0:g}; no Laplace-Beltrami or Schrodinger "
                  f"growth with a positive source has a vanishing area rate")
        return FamilyVerdict('REJECT', rates, areas, reason)
    return FamilyVerdict('ACCEPT', rates, areas, 'area rate stays away from zero')


def ellipse_family(times: Sequence[float], c: float, minor: float, spec: GridSpec) -> List[GridDomain]:
    """Ellipses with fixed semi-minor axis (along y) and foci at +-c t."""
    return [make_ellipse(0j, math.sqrt(minor ** 2 + (c * t) ** 2), minor, spec) for t in times]


def perturbation_amplitude(D: GridDomain, center: complex, k: int) -> float:
    """|k-th Fourier coefficient| / mean of the boundary radius about center."""
    rel = D.boundary_positions - center
    theta = np.angle(rel)
    order = np.argsort(theta)
    theta, r = theta[order], np.abs(rel)[order]
    gaps = np.diff(np.concatenate([theta, [theta[0] + 2 * np.pi]]))
    weights = 0.5 * (gaps + np.roll(gaps, 1))
    mean = np.dot(r, weights) / (2 * np.pi)
    coeff = np.dot(r * np.exp(-1j * k * theta), weights) / np.pi
    return float(abs(coeff) / mean)


@dataclass(frozen=True)
class AreaDeficit:
    deficit: float
    bound: float


def area_deficit_bound(lam: ScalarField, D: GridDomain, w: complex) -> AreaDeficit:
    """
    |integral of sqrt(lambda) dn g_w ds - 1/sqrt(lambda(w))| for the beltrami
    Green function, against ||1/sqrt(lambda) - 1/sqrt(lambda(w))|| on the closed domain.
    """
    gs = green(OperatorDesc.beltrami(lam), D, w)
    dn = normal_derivative(gs).values
    root_b = np.sqrt(lam.sample(D.boundary_positions))
    root_w = math.sqrt(lam.at(w))
    deficit = abs(float(np.dot(root_b * dn, D.boundary_ds)) - 1.0 / root_w)
    closed = np.concatenate([np.sqrt(lam.values[D.mask]), root_b])
    bound = float(np.max(np.abs(1.0 / closed - 1.0 / root_w)))
    return AreaDeficit(deficit, bound)
