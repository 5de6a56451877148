"""
First-order and series variations of Green functions.

Every formula here has a direct counterpart: re-solve on the perturbed domain
or with the perturbed coefficient and compare. VariationReport records that
comparison for two or more epsilons and checks the defect law, i.e. that the
gap between prediction and re-solve shrinks like epsilon squared.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from growthlab.errors import GridError, SeriesDivergenceError
from growthlab.grid_core import (
    BoundaryProfile,
    GridDomain,
    Point,
    ScalarField,
    as_complex,
    extend_from_interior,
    integrate,
)
from growthlab.logger import Logger
from growthlab.operators_green import (
    GreenSolution,
    OperatorDesc,
    fundamental_gradient,
    green,
    grid_laplacian,
    interior_gradient,
    kernel_pairing,
    normal_derivative,
    poisson_kernel,
    solve_zero_dirichlet,
)

logger = Logger()

MAX_SERIES_TERMS = 6
DEFECT_RATIO_RANGE = (3.0, 5.5)


@dataclass(frozen=True)
class VariationSample:
    """Prediction against re-solve at one epsilon."""

    epsilon: float
    predicted_delta: np.ndarray
    direct_delta: np.ndarray
    error: float

    @property
    def defect(self) -> float:
        return self.error / self.epsilon


@dataclass(frozen=True)
class VariationReport:
    """
    Defect-law record for one first-order formula.

    ratio is error(eps_0) / error(eps_1) for the first two epsilons; a correct
    first-order coefficient gives ~4 when eps_1 = eps_0 / 2.
    """

    name: str
    samples: Tuple[VariationSample, ...]
    ratio_range: Tuple[float, float] = DEFECT_RATIO_RANGE

    def __post_init__(self):
        if len(self.samples) < 2:
            raise GridError("a variation report needs at least two epsilons")
        shape = np.shape(self.samples[0].predicted_delta)
        for s in self.samples:
            if np.shape(s.predicted_delta) != shape or np.shape(s.direct_delta) != shape:
                raise GridError(f"{self.name}: predicted and direct deltas have different shapes")

    @property
    def epsilons(self) -> Tuple[float, ...]:
        return tuple(s.epsilon for s in self.samples)

    @property
    def defects(self) -> Tuple[float, ...]:
        return tuple(s.defect for s in self.samples)

    @property
    def ratio(self) -> float:
        first, second = self.samples[0].error, self.samples[1].error
        return float('inf') if second == 0 else first / second

    @property
    def passed(self) -> bool:
        lo, hi = self.ratio_range
        return lo <= self.ratio <= hi

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'epsilon': list(self.epsilons),
            'defects': list(self.defects),
            'errors': [s.error for s in self.samples],
            'ratio': self.ratio,
            'ratio_range': list(self.ratio_range),
            'pass': self.passed,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _values(x) -> np.ndarray:
    if isinstance(x, (ScalarField, BoundaryProfile)):
        return np.asarray(x.values, dtype=float)
    return np.atleast_1d(np.asarray(x, dtype=float))


def variation_report(name: str, base, coefficient, direct: Callable[[float], object],
                     epsilons: Sequence[float] = (0.02, 0.01),
                     mask: Optional[np.ndarray] = None) -> VariationReport:
    """
    Compare base + eps * coefficient with direct(eps) for each epsilon.

    base, coefficient and direct(eps) may be reals, arrays, ScalarFields or
    BoundaryProfiles; errors are max norms (over mask when given).
    """
    base_v = _values(base)
    coef_v = _values(coefficient)
    samples = []
    for eps in epsilons:
        predicted = eps * coef_v
        direct_delta = _values(direct(eps)) - base_v
        gap = np.abs(direct_delta - predicted)
        if mask is not None:
            gap = gap[mask]
        samples.append(VariationSample(float(eps), predicted, direct_delta, float(gap.max())))
        logger.debug(f"{name}: eps={eps:g} error={samples[-1].error:.3e}")
    report = VariationReport(name, tuple(samples))
    logger.info(f"{name}: defect ratio {report.ratio:.3f} ({'pass' if report.passed else 'FAIL'})")
    return report


def _boundary_lambda(D: GridDomain, lam: Optional[ScalarField]) -> np.ndarray:
    if lam is None:
        return np.ones(D.n_boundary)
    D.spec.require_match(lam.spec)
    return lam.sample(D.boundary_positions)


def _greens(op: OperatorDesc, D: GridDomain, *points: complex):
    """Green solutions for each point, sharing the solve for repeated points."""
    solved = {}
    out = []
    for p in points:
        if p not in solved:
            solved[p] = green(op, D, p)
        out.append(solved[p])
    return out


def hadamard_variation(D: GridDomain, w: Point, z: Point, p: BoundaryProfile,
                       lam: Optional[ScalarField] = None) -> float:
    """
    First variation of g_w(z) when the boundary moves out by eps * p:
    -integral of p lambda dn g_z dn g_w ds.
    """
    if len(p) != D.n_boundary:
        raise GridError("normal displacement is not aligned with the domain boundary")
    w, z = as_complex(w), as_complex(z)
    op = OperatorDesc.laplace() if lam is None else OperatorDesc.beltrami(lam)
    gz, gw = _greens(op, D, z, w)
    dn_z = normal_derivative(gz).values
    dn_w = dn_z if gw is gz else normal_derivative(gw).values
    weight = p.values * _boundary_lambda(D, lam)
    return float(-np.sum(weight * dn_z * dn_w * D.boundary_ds))


@dataclass(frozen=True)
class ZeroCurvatureReport:
    derivatives: Tuple[float, float, float]
    max_gap: float

    @property
    def relative_gap(self) -> float:
        scale = max(abs(d) for d in self.derivatives)
        return 0.0 if scale == 0 else self.max_gap / scale


def zero_curvature_check(D: GridDomain, a: Point, b: Point, c: Point,
                         lam: Optional[ScalarField] = None) -> ZeroCurvatureReport:
    """
    d g(a, b) / d T_c for the three cyclic orders of (a, b, c).

    Pumping at c moves the boundary with velocity lambda dn g_c, so each
    derivative is -integral of lambda^2 dn g_a dn g_b dn g_c ds.
    """
    a, b, c = as_complex(a), as_complex(b), as_complex(c)
    op = OperatorDesc.laplace() if lam is None else OperatorDesc.beltrami(lam)
    ga, gb, gc = _greens(op, D, a, b, c)
    lam_b = _boundary_lambda(D, lam)
    dn = {id(g): normal_derivative(g).values for g in (ga, gb, gc)}
    da, db, dc = dn[id(ga)], dn[id(gb)], dn[id(gc)]
    weight = lam_b * lam_b * D.boundary_ds
    derivatives = (
        float(-np.sum(da * db * dc * weight)),
        float(-np.sum(db * dc * da * weight)),
        float(-np.sum(dc * da * db * weight)),
    )
    gap = max(abs(x - y) for i, x in enumerate(derivatives) for y in derivatives[i + 1:])
    return ZeroCurvatureReport(derivatives, float(gap))


@dataclass(frozen=True, eq=False)
class SeriesResult:
    """Partial sum of the Schrodinger Green series."""

    solution: GreenSolution
    last_term_norm: float
    n_terms: int
    t_norm: float


def t_operator_norm(D: GridDomain) -> float:
    """||T|| in the max norm, T phi = integral of phi g_z (one power step on phi = 1)."""
    one = ScalarField.constant(D.spec, 1.0)
    return solve_zero_dirichlet(OperatorDesc.laplace(), D, one).max_abs(D.mask)


def schrodinger_green_series(D: GridDomain, u: ScalarField, w: Point, eps: float,
                             n_terms: int = 1, Q: float = 1.0) -> SeriesResult:
    """
    Green function of Delta - eps u as g_w + sum_n (eps T u)^n g_w.

    T is applied as a zero-Dirichlet Poisson solve.
    """
    if not 0 <= n_terms <= MAX_SERIES_TERMS:
        raise SeriesDivergenceError(f"n_terms must be in [0, {MAX_SERIES_TERMS}], got {n_terms}")
    w = as_complex(w)
    t_norm = t_operator_norm(D)
    contraction = abs(eps) * u.max_abs(D.mask) * t_norm
    if contraction >= 0.5:
        raise SeriesDivergenceError(
            f"eps * ||u|| * ||T|| = {contraction:.3g} is not below 0.5; the series is not trusted")

    laplace = OperatorDesc.laplace()
    g0 = green(laplace, D, w, Q)
    total = g0.total.values.copy()
    term = g0.total
    last = term.max_abs(D.mask)
    for _ in range(n_terms):
        term = solve_zero_dirichlet(laplace, D, term * u) * eps
        total += term.values
        last = term.max_abs(D.mask)

    total_field = ScalarField(D.spec, total)
    regular = ScalarField(D.spec, g0.regular_part.values + (total - g0.total.values))
    solution = GreenSolution(OperatorDesc.schrodinger(u * eps),
                             D, w, g0.Q, g0.scale, regular, total_field, g0.regular_boundary, g0.report)
    logger.debug(f"schrodinger series: {n_terms} terms, last term {last:.3e}, contraction {contraction:.3f}")
    return SeriesResult(solution, float(last), n_terms, float(t_norm))


def _green_gradient(gs: GreenSolution) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient of a Green function at interior nodes; analytic on the log part."""
    D = gs.D
    gx, gy = interior_gradient(gs.regular_part.values.ravel()[D.unknowns], D, gs.regular_boundary)
    Z_int = D.spec.complex_nodes().ravel()[D.unknowns]
    grad_E = gs.Q * fundamental_gradient(Z_int, gs.w, gs.scale, D.spec.h)
    return gx + grad_E.real, gy + grad_E.imag


def _interior_integral(D: GridDomain, interior_values: np.ndarray) -> float:
    values = np.zeros(D.spec.nx * D.spec.ny)
    values[D.unknowns] = interior_values
    extended = extend_from_interior(values.reshape(D.spec.shape), D.mask)
    return integrate(ScalarField(D.spec, extended), D)


def beltrami_green_variation(D: GridDomain, p: ScalarField, w: Point, z: Point, eps: float,
                             formula: str = 'gradient') -> float:
    """
    eps times the first variation of g(z, w) under lambda = 1 + eps p.

    formula='gradient':  integral of p grad g_z . grad g_w
    formula='laplacian': -g(z, w) (p(z) + p(w)) / 2 + (1/2) integral of g_z g_w Lap p

    z and w are snapped to grid nodes so the singular nodes coincide with
    the analytic part of the splitting.
    """
    D.spec.require_match(p.spec)
    zs, ws = D.spec.snap(as_complex(z)), D.spec.snap(as_complex(w))
    laplace = OperatorDesc.laplace()
    gz, gw = _greens(laplace, D, zs, ws)

    if formula == 'gradient':
        zx, zy = _green_gradient(gz)
        wx, wy = (zx, zy) if gw is gz else _green_gradient(gw)
        p_int = p.values.ravel()[D.unknowns]
        F = _interior_integral(D, p_int * (zx * wx + zy * wy))
    elif formula == 'laplacian':
        lap_p = grid_laplacian(p.values, D.spec.h)
        product = gz.total.values * gw.total.values * lap_p
        g_zw = gw.value_at(zs)
        F = -g_zw * (p.at(zs) + p.at(ws)) / 2.0 + 0.5 * float(np.sum(product) * D.spec.h ** 2)
    else:
        raise ValueError(f"unknown formula {formula!r}; use 'gradient' or 'laplacian'")
    return float(eps * F)


def _check_zeta(D: GridDomain, zeta_index: int):
    if not 0 <= zeta_index < D.n_boundary:
        raise GridError(f"boundary index {zeta_index} out of range [0, {D.n_boundary})")


def normal_variation_schrodinger(D: GridDomain, u: ScalarField, w: Point, zeta_index: int,
                                 eps: float) -> float:
    """dn g*_w(zeta) ~ dn g_w(zeta) + eps * integral of u g_w P_zeta for Delta - eps u."""
    _check_zeta(D, zeta_index)
    laplace = OperatorDesc.laplace()
    gw = green(laplace, D, as_complex(w))
    dn = normal_derivative(gw).values[zeta_index]
    if eps == 0:
        return float(dn)
    P = poisson_kernel(laplace, D, zeta_index)
    return float(dn + eps * kernel_pairing(u * gw.total, P, D))


def normal_variation_beltrami(D: GridDomain, u: ScalarField, w: Point, zeta_index: int,
                              eps: float) -> float:
    """
    dn g*_w(zeta) for div((1 + eps u) grad):
    dn g_w(zeta) + (eps / 2) [integral of Lap u g_w P_zeta - dn g_w(zeta) (u(zeta) + u(w))].
    """
    _check_zeta(D, zeta_index)
    w = as_complex(w)
    laplace = OperatorDesc.laplace()
    gw = green(laplace, D, w)
    dn = normal_derivative(gw).values[zeta_index]
    if eps == 0:
        return float(dn)
    P = poisson_kernel(laplace, D, zeta_index)
    lap_u = ScalarField(D.spec, grid_laplacian(u.values, D.spec.h))
    zeta = D.boundary_positions[zeta_index]
    correction = kernel_pairing(lap_u * gw.total, P, D) - dn * (u.at(zeta) + u.at(w))
    return float(dn + 0.5 * eps * correction)


# -- defect-law reports: first-order prediction against a direct re-solve --

DEFAULT_EPSILONS = (0.02, 0.01)


def displaced_domain(D: GridDomain, p: BoundaryProfile, eps: float) -> GridDomain:
    """D with its boundary moved out along the normal by eps * p (p extended by closest boundary node)."""
    if len(p) != D.n_boundary:
        raise GridError("normal displacement is not aligned with the domain boundary")
    Z = D.spec.complex_nodes().ravel()
    _, idx = D.boundary_tree.query(np.column_stack([Z.real, Z.imag]))
    shift = p.values[idx].reshape(D.spec.shape)
    return GridDomain(D.spec, D.phi - eps * shift)


def hadamard_report(D: GridDomain, w: Point, z: Point, p: BoundaryProfile,
                    epsilons: Sequence[float] = DEFAULT_EPSILONS) -> VariationReport:
    laplace = OperatorDesc.laplace()
    base = green(laplace, D, w).value_at(z)
    coefficient = hadamard_variation(D, w, z, p)
    return variation_report('hadamard', base, coefficient,
                            lambda eps: green(laplace, displaced_domain(D, p, eps), w).value_at(z), epsilons)


def _away_from(D: GridDomain, w: complex, cells: float = 2.0) -> np.ndarray:
    Z = D.spec.complex_nodes()
    return D.mask & (np.abs(Z - w) >= cells * D.spec.h)


def schrodinger_series_report(D: GridDomain, u: ScalarField, w: Point,
                              epsilons: Sequence[float] = DEFAULT_EPSILONS) -> VariationReport:
    """One-term series for Delta - eps u against the direct Green solve."""
    w = as_complex(w)
    g0 = green(OperatorDesc.laplace(), D, w)
    eps0 = min(epsilons)
    series = schrodinger_green_series(D, u, w, eps0, n_terms=1)
    coefficient = (series.solution.total.values - g0.total.values) / eps0
    return variation_report('schrodinger_series', g0.total, coefficient,
                            lambda eps: green(OperatorDesc.schrodinger(u * eps), D, w).total,
                            epsilons, mask=_away_from(D, w))


def beltrami_report(D: GridDomain, p: ScalarField, w: Point, z: Point, formula: str = 'gradient',
                    epsilons: Sequence[float] = DEFAULT_EPSILONS) -> VariationReport:
    """g(z, w) under lambda = 1 + eps p; z and w are snapped to nodes."""
    zs, ws = D.spec.snap(as_complex(z)), D.spec.snap(as_complex(w))
    base = green(OperatorDesc.laplace(), D, ws).value_at(zs)
    coefficient = beltrami_green_variation(D, p, ws, zs, 1.0, formula)
    one = ScalarField.constant(D.spec, 1.0)

    def direct(eps):
        return green(OperatorDesc.beltrami(one + p * eps), D, ws).value_at(zs)

    return variation_report(f'beltrami_{formula}', base, coefficient, direct, epsilons)


def normal_variation_report(D: GridDomain, u: ScalarField, w: Point, zeta_index: int, kind: str = 'schrodinger',
                            epsilons: Sequence[float] = DEFAULT_EPSILONS) -> VariationReport:
    """dn g_w(zeta) for Delta - eps u (kind='schrodinger') or div((1 + eps u) grad) (kind='beltrami')."""
    w = as_complex(w)
    if kind == 'schrodinger':
        predict = normal_variation_schrodinger

        def operator(eps):
            return OperatorDesc.schrodinger(u * eps)
    elif kind == 'beltrami':
        predict = normal_variation_beltrami
        one = ScalarField.constant(D.spec, 1.0)

        def operator(eps):
            return OperatorDesc.beltrami(one + u * eps)
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    base = predict(D, u, w, zeta_index, 0.0)
    coefficient = predict(D, u, w, zeta_index, 1.0) - base
    return variation_report(f'normal_{kind}', base, coefficient,
                            lambda eps: normal_derivative(green(operator(eps), D, w)).values[zeta_index],
                            epsilons)
