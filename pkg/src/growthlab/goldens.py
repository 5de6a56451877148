"""
The golden table: closed-form and defect-law checks of the whole lab.

Each criterion is a function of the grid size returning GoldenRow objects;
golden_table runs any subset of them in order.
"""

from __future__ import annotations

import math
import time
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from growthlab.balayage import balayage_box, partial_balayage, quadrature_domain_check
from growthlab.checks import CheckMode, GoldenRow, at_least, at_most, within
from growthlab.dirichlet_perturb import dirichlet_golden_rows
from growthlab.grid_core import (
    BoundaryProfile,
    GridDomain,
    GridSpec,
    Measure,
    ScalarField,
    area,
    make_disk,
    make_star,
    perimeter,
    symmetric_difference_area,
)
from growthlab.growth_sim import (
    RICHARDSON_TOLERANCE,
    GrowthState,
    bessel_disk_rate,
    elliptic_richardson_functions,
    ellipse_family,
    growth_run,
    initial_rate_probe,
    moment_trace,
    reject_zero_rate_families,
    schrodinger_area_rate,
    weak_step,
)
from growthlab.inverse_probe import dtn_direct, dtn_from_response, dtn_matrix, pumping_response
from growthlab.logger import Logger
from growthlab.operators_green import OperatorDesc, convert_beltrami_to_schrodinger, green
from growthlab.perturbation import (
    DEFECT_RATIO_RANGE,
    beltrami_report,
    hadamard_report,
    normal_variation_report,
    schrodinger_series_report,
    zero_curvature_check,
)
from growthlab.special import besseli0

logger = Logger()

HALF_WIDTH = 2.0


def _grid(n: int) -> GridSpec:
    return GridSpec.square(n, HALF_WIDTH)


def disk_green_closed_form(z: complex, w: complex, radius: float = 1.0, center: complex = 0j) -> float:
    """(2 pi)^-1 ln(R |z - w| / |R^2 - conj(w) z|) in coordinates centred on the disk."""
    zc, wc = z - center, w - center
    return math.log(radius * abs(zc - wc) / abs(radius ** 2 - wc.conjugate() * zc)) / (2.0 * math.pi)


def mask_perimeter(mask: np.ndarray, spec: GridSpec) -> float:
    """Perimeter of the region a boolean mask covers, through its level set."""
    return perimeter(GridDomain(spec, (0.5 - mask.astype(float)) * spec.h))


def _green_probe_error(n: int, probes: np.ndarray, sources=(0j, 0.3 + 0.2j)) -> float:
    spec = _grid(n)
    D = make_disk(0j, 1.0, spec)
    worst = 0.0
    for w in sources:
        gs = green(OperatorDesc.laplace(), D, w)
        for z in probes:
            worst = max(worst, abs(gs.value_at(z) - disk_green_closed_form(z, w)))
    return worst


def green_rows(n: int) -> List[GoldenRow]:
    coarse = (n + 1) // 2
    h_fine, h_coarse = _grid(n).h, _grid(coarse).h
    clearance = 5 * h_coarse
    rings = [r * np.exp(2j * np.pi * k / 12) for r in (0.15, 0.35, 0.55, 0.75) for k in range(12)]
    sources = (0j, 0.3 + 0.2j)
    probes = np.array([z for z in rings
                       if abs(z) <= 1 - clearance and min(abs(z - w) for w in sources) >= clearance])
    fine = _green_probe_error(n, probes, sources)
    rough = _green_probe_error(coarse, probes, sources)
    order = math.log(rough / fine) / math.log(h_coarse / h_fine) if fine > 0 else float('inf')
    return [
        at_most(f'green disk max error n={n}', fine, 1e-3),
        at_least(f'green refinement order n={coarse}->{n}', order, 1.8),
    ]


def dirichlet_rows(n: int) -> List[GoldenRow]:
    return dirichlet_golden_rows(_grid(n), eps=0.1)


def defect_rows(n: int) -> List[GoldenRow]:
    spec = _grid(n)
    D = make_disk(0j, 1.0, spec)
    w, z = 0.2 + 0.1j, -0.3 + 0.25j
    lo, hi = DEFECT_RATIO_RANGE
    u = ScalarField.from_function(spec, lambda x, y: 10.0 + 5.0 * x)
    p_field = ScalarField.radial(spec, lambda r: 5.0 * r * r)
    displacement = BoundaryProfile.from_angle(D, lambda t: 5.0 + 1.5 * np.cos(t))
    zeta = D.n_boundary // 3
    reports = [
        hadamard_report(D, w, z, displacement),
        schrodinger_series_report(D, u, w),
        beltrami_report(D, p_field, w, z, 'gradient'),
        beltrami_report(D, p_field, w, z, 'laplacian'),
        normal_variation_report(D, u, w, zeta, 'schrodinger'),
        normal_variation_report(D, u, w, zeta, 'beltrami'),
    ]
    return [within(f'{r.name} defect ratio', r.ratio, lo, hi) for r in reports]


def conversion_rows(n: int) -> List[GoldenRow]:
    spec = _grid(n)
    D = make_disk(0j, 1.0, spec)
    lams = {
        'exp(2r^2)': ScalarField.radial(spec, lambda r: np.exp(2 * r * r)),
        'I0(r)^2': ScalarField.radial(spec, lambda r: besseli0(r) ** 2),
    }
    rows = []
    for label, lam in lams.items():
        result = convert_beltrami_to_schrodinger(lam, D, 0.1 + 0.05j)
        rows.append(at_most(f'conversion lambda={label} relative gap', result.discrepancy / result.scale, 1e-3))
    return rows


def richardson_rows(n: int) -> List[GoldenRow]:
    spec = _grid(n)
    rows = []

    D0 = make_star(0.15 + 0j, 0.6, 0.1, 3, spec)
    run = growth_run(GrowthState(0.0, D0, OperatorDesc.laplace(), 0j), 0.5 * area(D0))
    trace = moment_trace(run.states)
    for k, drift in enumerate(trace.moment_drift, start=1):
        rows.append(at_most(f'laplace growth t{k} drift', drift, 0.01))
    rows.append(GoldenRow('laplace growth area rate', 1.0, trace.area_rate, 0.02, CheckMode.RELATIVE))

    lam = ScalarField.from_function(spec, lambda x, y: 1.0 + 0.3 * x * x)
    run = growth_run(GrowthState(0.0, make_disk(0j, 0.5, spec), OperatorDesc.beltrami(lam), 0.1 + 0.05j), 0.3)
    trace = moment_trace(run.states, elliptic_richardson_functions(run.states))
    rows.append(GoldenRow('beltrami growth area rate', 1.0, trace.area_rate, 0.02, CheckMode.RELATIVE))
    for k, err in enumerate(trace.test_errors):
        rows.append(at_most(f'beltrami growth L-harmonic phi{k} rate error', float(err), RICHARDSON_TOLERANCE))

    u = ScalarField.constant(spec, 1.0)
    run = growth_run(GrowthState(0.0, make_disk(0j, 0.5, spec), OperatorDesc.schrodinger(u), 0j), 0.2)
    rates = np.array([r.rate for r in run.records])
    rows.append(at_least('schrodinger growth min rate', float(rates.min()), 1e-12))
    rows.append(GoldenRow('schrodinger growth max rate', 1.0, float(rates.max()), 2e-3, CheckMode.UPPER))
    return rows


def radial_rate_rows(n: int) -> List[GoldenRow]:
    spec = _grid(n)
    rows = []
    one = ScalarField.constant(spec, 1.0)
    gaussian = ScalarField.radial(spec, lambda r: 4.0 * (r * r + 1.0))
    for R in (0.5, 1.0):
        D = make_disk(0j, R, spec)
        rows.append(GoldenRow(f'schrodinger rate u=1 R={R}', bessel_disk_rate(R),
                              schrodinger_area_rate(one, D), 0.02, CheckMode.RELATIVE))
        rows.append(GoldenRow(f'schrodinger rate u=4(r^2+1) R={R}', math.exp(-R * R),
                              schrodinger_area_rate(gaussian, D), 0.02, CheckMode.RELATIVE))
    probe = initial_rate_probe(lambda x, y: np.ones_like(x), radii=(0.4, 0.2, 0.1), n=n)
    rows.append(at_least('initial rate increases as R shrinks', float(np.min(np.diff(probe))), 0.0))
    rows.append(GoldenRow('initial rate at smallest R', 1.0, float(probe[-1]), 2e-3, CheckMode.UPPER))
    return rows


def balayage_rows(n: int) -> List[GoldenRow]:
    rows = []
    t = math.pi / 4
    template = Measure.point(_grid(16), 0j, t)
    box = balayage_box(template, n)
    mu = Measure.point(box, 0j, t)
    result = partial_balayage(mu, None, box)
    disk = np.abs(box.complex_nodes()) < math.sqrt(t / math.pi)
    ring = 2 * math.pi * math.sqrt(t / math.pi)
    rows.append(at_most('balayage point mass disk symmetric difference',
                        symmetric_difference_area(result.saturated_mask, disk, box), 3 * box.h * ring))
    rows.append(at_most('balayage complementarity', result.complementarity, 1e-6))
    rows.append(at_most('balayage mass drift', abs(result.mass - t) / t, 0.005))
    scale = float(np.max(np.abs(result.potential.field.values)))
    rows.append(at_most('balayage exterior potential gap', quadrature_domain_check(mu, result) / scale, 1e-3))

    a, b = (-0.3 + 0j, 0.5), (0.3 + 0j, 0.5)
    template = Measure.point(_grid(16), a[0], a[1]).with_atom(*b)
    # the merged saturated set reaches past the default margin
    box = balayage_box(template, n, inflation=3.5)
    joint = partial_balayage(Measure.point(box, *a).with_atom(*b), None, box)
    first = partial_balayage(Measure.point(box, *a), None, box)
    staged = partial_balayage(first.as_measure().with_atom(*b), None, box)
    rows.append(at_most('balayage superposition symmetric difference',
                        symmetric_difference_area(joint.saturated_mask, staged.saturated_mask, box),
                        5 * box.h * mask_perimeter(joint.saturated_mask, box)))
    return rows


def strong_weak_rows(n: int) -> List[GoldenRow]:
    spec = _grid(n)
    D0 = make_star(0j, 0.5, 0.15, 4, spec)
    t_end = 0.4
    start = GrowthState(0.0, D0, OperatorDesc.laplace(), 0j)
    strong = growth_run(start, t_end, keep_states=False).final
    weak = weak_step(start, t_end)
    gap = symmetric_difference_area(strong.D.mask, weak.D.mask, spec)
    return [at_most('strong vs weak growth symmetric difference', gap, 5 * spec.h * perimeter(strong.D))]


def inverse_rows(n: int) -> List[GoldenRow]:
    spec = _grid(n)
    D = make_disk(0j, 1.0, spec)
    rows = []
    for k in (1, 2, 3):
        f = BoundaryProfile.from_angle(D, lambda t, k=k: np.cos(k * t))
        expected = k * f.values
        direct = dtn_direct(None, D, f).values
        rows.append(at_most(f'dtn_direct cos{k} relative error',
                            float(np.max(np.abs(direct - expected)) / k), 0.03))
        response = dtn_from_response(None, D, f).values
        rows.append(at_most(f'dtn_from_response cos{k} relative gap',
                            float(np.max(np.abs(response - direct)) / np.max(np.abs(direct))), 0.03))
    rows.append(at_most('dtn matrix symmetry defect', dtn_matrix(None, D, order=3).symmetry_defect(), 0.02))
    for label, lam in (('1+r^2', ScalarField.radial(spec, lambda r: 1.0 + r * r)),
                       ('exp(r^2)', ScalarField.radial(spec, lambda r: np.exp(r * r)))):
        response = pumping_response(lam, D, 0j).values
        target = 1.0 / (2.0 * math.pi)
        rows.append(at_most(f'pumping response lambda={label} uniformity',
                            float(np.max(np.abs(response - target)) / target), 0.02))
    return rows


def negative_gate_rows(n: int) -> List[GoldenRow]:
    spec = _grid(n)
    times = (0.0, 0.02, 0.04, 0.06)
    verdict = reject_zero_rate_families(ellipse_family(times, 1.0, 0.5, spec), times)
    logger.debug(f"ellipse family: {verdict.reason}")
    return [GoldenRow('ellipse foci family rejected', 1.0, 1.0 if verdict.rejected else 0.0, 0.0)]


def zero_curvature_rows(n: int) -> List[GoldenRow]:
    D = make_disk(0j, 1.0, _grid(n))
    report = zero_curvature_check(D, 0.2 + 0.1j, -0.3 + 0.25j, 0.1 - 0.4j)
    return [at_most('zero curvature relative gap', report.relative_gap, 1e-10)]


CRITERIA: Dict[str, Callable[[int], List[GoldenRow]]] = {
    'green': green_rows,
    'dirichlet': dirichlet_rows,
    'defect_laws': defect_rows,
    'conversion': conversion_rows,
    'richardson': richardson_rows,
    'radial_rates': radial_rate_rows,
    'balayage': balayage_rows,
    'strong_weak': strong_weak_rows,
    'inverse': inverse_rows,
    'negative_gate': negative_gate_rows,
    'zero_curvature': zero_curvature_rows,
}


def golden_table(n: int, only: Optional[Iterable[str]] = None) -> List[GoldenRow]:
    """Run the named criteria (all by default) at n x n nodes on [-2, 2]^2."""
    names = list(CRITERIA) if only is None else list(only)
    unknown = [name for name in names if name not in CRITERIA]
    if unknown:
        raise KeyError(f"unknown criteria: {', '.join(unknown)}")
    rows: List[GoldenRow] = []
    for name in names:
        start = time.perf_counter()
        block = CRITERIA[name](n)
        failed = sum(not r.passed for r in block)
        logger.info(f"{name}: {len(block) - failed}/{len(block)} checks passed "
                    f"({time.perf_counter() - start:.1f}s)")
        rows.extend(block)
    return rows
