"""
Subcommand handlers. Each takes a validated scenario and an output directory
and returns the checks it ran, the files it wrote and a short summary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List

import numpy as np

from growthlab.balayage import partial_balayage, quadrature_domain_check
from growthlab.checks import GOLDEN_HEADER, CheckMode, GoldenRow, at_least, at_most, within
from growthlab.dirichlet_perturb import (
    default_probes,
    dirichlet_beltrami_first_order,
    dirichlet_schrodinger_first_order,
    linearization_bound_check,
)
from growthlab.errors import ConfigError, DomainError
from growthlab.goldens import disk_green_closed_form, golden_table
from growthlab.grid_core import BoundaryProfile, Measure, ScalarField, make_disk
from growthlab.growth_sim import (
    RICHARDSON_TOLERANCE,
    GrowthState,
    bessel_disk_rate,
    elliptic_richardson_functions,
    growth_run,
    initial_rate_probe,
    moment_trace,
    schrodinger_area_rate,
)
from growthlab.inverse_probe import dtn_matrix, pumping_response
from growthlab.io_formats import write_field_csv, write_pgm, write_rows
from growthlab.logger import Logger
from growthlab.operators_green import (
    OperatorDesc,
    OperatorKind,
    convert_beltrami_to_schrodinger,
    dirichlet_solve,
    green,
    normal_derivative,
)
from growthlab.perturbation import (
    DEFECT_RATIO_RANGE,
    beltrami_report,
    hadamard_report,
    normal_variation_report,
    schrodinger_series_report,
    zero_curvature_check,
)
from growthlab.scenario import ScenarioConfig

logger = Logger()


@dataclass
class CommandResult:
    checks: List[GoldenRow] = field(default_factory=list)
    artifacts: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


def _is_disk(scenario: ScenarioConfig) -> bool:
    return scenario.domain is not None and scenario.domain.shape == 'disk'


def _perturbation_field(scenario: ScenarioConfig, key: str) -> ScalarField:
    """A perturbation direction: the named param, else the operator coefficient, else 1."""
    expr = scenario.param(key) or scenario.operator.coefficient
    if expr is None:
        return ScalarField.constant(scenario.grid, 1.0)
    return expr.field(scenario.grid)


def run_green(scenario: ScenarioConfig, out: Path) -> CommandResult:
    D = scenario.build_domain()
    op = scenario.build_operator()
    w, Q = scenario.w, scenario.Q
    gs = green(op, D, w, Q)
    dn = normal_derivative(gs)
    lam_b = (op.coefficient.sample(D.boundary_positions) if op.kind is OperatorKind.BELTRAMI
             else np.ones(D.n_boundary))
    flux = float(np.dot(lam_b * dn.values, D.boundary_ds))
    result = CommandResult(summary={'residual': gs.report.residual, 'flux': flux, 'boundary_nodes': D.n_boundary})
    result.artifacts += [
        write_field_csv(out / 'green_field.csv', gs.total, D.mask),
        write_pgm(out / 'green_field.pgm', gs.total.values),
        write_rows(out / 'green_normal_derivative.csv', ['index', 'x', 'y', 'dn', 'ds'],
                   ([k, z.real, z.imag, v, ds] for k, (z, v, ds)
                    in enumerate(zip(D.boundary_positions, dn.values, D.boundary_ds)))),
    ]

    if op.kind is not OperatorKind.SCHRODINGER:
        result.checks.append(GoldenRow('green boundary flux', Q, flux, 0.02, CheckMode.RELATIVE))
    if op.kind is OperatorKind.LAPLACE and _is_disk(scenario):
        radius = scenario.domain.params['radius']
        centre = scenario.domain.center
        probes = scenario.param('probes') or default_probes(D)
        probes = [z for z in probes if abs(z - w) >= 5 * D.spec.h]
        worst = max(abs(gs.value_at(z) - Q * disk_green_closed_form(z, w, radius, centre)) for z in probes)
        result.checks.append(at_most('green disk closed form max error', worst, 1e-3))
    if op.kind is OperatorKind.BELTRAMI:
        conv = convert_beltrami_to_schrodinger(op.coefficient, D, w)
        result.summary['conversion_clamped_nodes'] = conv.clamped_nodes
        result.checks.append(at_most('conversion relative gap', conv.discrepancy / conv.scale, 1e-3))
    return result


def run_dirichlet(scenario: ScenarioConfig, out: Path) -> CommandResult:
    D = scenario.build_domain()
    kind = scenario.operator.kind
    if kind is OperatorKind.LAPLACE:
        raise ConfigError("dirichlet perturbs a schrodinger or beltrami operator", field='operator.kind')
    u = _perturbation_field(scenario, 'potential')
    boundary = scenario.param('boundary')
    f = BoundaryProfile.from_function(D, boundary) if boundary else BoundaryProfile.constant(D, 1.0)
    eps = scenario.param('eps', 0.1)

    if kind is OperatorKind.SCHRODINGER:
        first = dirichlet_schrodinger_first_order(D, u, f, eps)
        op = OperatorDesc.schrodinger(u * eps)
    else:
        first = dirichlet_beltrami_first_order(D, u, f, eps)
        op = OperatorDesc.beltrami(ScalarField.constant(D.spec, 1.0) + u * eps)
    direct = dirichlet_solve(op, D, f)
    gap = float(np.max(np.abs(first.values - direct.values)[D.mask]))
    result = CommandResult(summary={'eps': eps, 'first_order_vs_direct': gap})
    result.artifacts += [
        write_field_csv(out / 'dirichlet_first_order.csv', first, D.mask),
        write_field_csv(out / 'dirichlet_direct.csv', direct, D.mask),
    ]
    if kind is OperatorKind.SCHRODINGER:
        bound = linearization_bound_check(D, u, f)
        result.summary['linearization_worst_ratio'] = bound.worst_ratio
        result.artifacts.append(write_rows(out / 'linearization_bound.csv', ['x', 'y', 'variation', 'bound'],
                                           ([z.real, z.imag, v, b] for z, v, b
                                            in zip(bound.probes, bound.variations, bound.bounds))))
        result.checks.append(at_most('linearization bound worst ratio', bound.worst_ratio, 1.0))
    return result


def run_perturb(scenario: ScenarioConfig, out: Path) -> CommandResult:
    D = scenario.build_domain()
    formula = scenario.param('formula', 'hadamard')
    epsilons = tuple(scenario.param('epsilons', (0.02, 0.01)))
    w = scenario.w
    centre = D.centroid()
    z = scenario.param('z', centre + 0.5 * (centre - w) + 0.15j)

    if formula == 'zero_curvature':
        c = centre - 0.2
        lam = scenario.build_operator().coefficient if scenario.operator.kind is OperatorKind.BELTRAMI else None
        report = zero_curvature_check(D, w, z, c, lam)
        path = out / 'zero_curvature.json'
        path.write_text(json.dumps({'derivatives': list(report.derivatives), 'max_gap': report.max_gap,
                                    'relative_gap': report.relative_gap}, indent=2))
        return CommandResult([at_most('zero curvature relative gap', report.relative_gap, 1e-10)], [path],
                             {'relative_gap': report.relative_gap})

    if formula == 'hadamard':
        expr = scenario.param('displacement')
        p = BoundaryProfile.from_function(D, expr) if expr else BoundaryProfile.constant(D, 1.0)
        report = hadamard_report(D, w, z, p, epsilons)
    elif formula == 'schrodinger_series':
        report = schrodinger_series_report(D, _perturbation_field(scenario, 'perturbation'), w, epsilons)
    elif formula in ('beltrami_gradient', 'beltrami_laplacian'):
        report = beltrami_report(D, _perturbation_field(scenario, 'perturbation'), w, z,
                                 formula.split('_', 1)[1], epsilons)
    else:
        zeta = scenario.param('zeta_index', D.n_boundary // 3)
        report = normal_variation_report(D, _perturbation_field(scenario, 'perturbation'), w, zeta,
                                         formula.split('_', 1)[1], epsilons)
    path = out / 'variation_report.json'
    path.write_text(report.to_json(indent=2))
    lo, hi = DEFECT_RATIO_RANGE
    return CommandResult([within(f'{report.name} defect ratio', report.ratio, lo, hi)], [path],
                         {'ratio': report.ratio, 'defects': list(report.defects)})


def run_balayage(scenario: ScenarioConfig, out: Path) -> CommandResult:
    box = scenario.grid
    atoms = scenario.param('atoms', [])
    include_domain = scenario.param('include_domain', scenario.domain is not None)
    if include_domain:
        mu = Measure.indicator(scenario.build_domain(), atoms)
    else:
        if not atoms:
            raise ConfigError("balayage needs atoms or a domain", field='params.atoms')
        mu = Measure(ScalarField.constant(box, 0.0), tuple(atoms))
    lam = scenario.build_operator().coefficient if scenario.operator.kind is OperatorKind.BELTRAMI else None
    if scenario.operator.kind is OperatorKind.SCHRODINGER:
        raise ConfigError("balayage is defined for laplace and beltrami operators", field='operator.kind')

    result = partial_balayage(mu, lam, box)
    mass_in = mu.total_mass
    scale = float(np.max(np.abs(result.potential.field.values)))
    gap = quadrature_domain_check(mu, result)
    out_result = CommandResult(summary={
        'mass_in': mass_in, 'mass_out': result.mass, 'iterations': result.iterations,
        'saturated_area': float(result.saturated_mask.sum() * box.h ** 2),
    })
    out_result.artifacts += [
        write_field_csv(out / 'balayage_density.csv', result.result_density),
        write_pgm(out / 'balayage_density.pgm', result.result_density.values),
        write_pgm(out / 'saturated_mask.pgm', result.saturated_mask.astype(float)),
        write_rows(out / 'balayage_trace.csv', ['iteration', 'residual'], result.trace),
    ]
    out_result.checks += [
        at_most('balayage complementarity', result.complementarity, 1e-6),
        at_most('balayage mass drift', abs(result.mass - mass_in) / mass_in, 0.005),
        at_most('balayage exterior potential gap', gap / scale, 1e-3),
    ]
    return out_result


def run_grow(scenario: ScenarioConfig, out: Path) -> CommandResult:
    D = scenario.build_domain()
    op = scenario.build_operator()
    run_cfg = scenario.run
    if not run_cfg.t_end > 0:
        raise ConfigError("grow needs a positive end time", field='run.t_end')
    state = GrowthState(0.0, D, op, scenario.w, scenario.Q)
    run = growth_run(state, run_cfg.t_end, run_cfg.mode, run_cfg.dt, out, run_cfg.snapshot_stride)
    result = CommandResult(artifacts=[out / 'run_log.csv', out / 'boundary_snapshots.csv'])
    result.artifacts += sorted(out.glob('mask_*.pgm'))
    rates = np.array([r.rate for r in run.records])
    result.summary.update(steps=run.final.step, final_area=run.final.area)

    if len(run.states) >= 3:
        test_functions = []
        if op.kind is OperatorKind.BELTRAMI and scenario.Q > 0:
            try:
                test_functions = elliptic_richardson_functions(run.states)
            except DomainError as e:
                logger.warning(f"skipping the L-harmonic rate checks: {e}")
        trace = moment_trace(run.states, test_functions)
        report = {
            'times': trace.times.tolist(),
            'areas': trace.areas.tolist(),
            'area_rate': trace.area_rate,
            'moment_drift': trace.moment_drift.tolist(),
            'test_rates': trace.test_rates.tolist(),
            'test_targets': trace.test_targets.tolist(),
        }
        path = out / 'moment_report.json'
        path.write_text(json.dumps(report, indent=2))
        result.artifacts.append(path)
        result.summary['area_rate'] = trace.area_rate
        if op.kind is not OperatorKind.SCHRODINGER and scenario.Q > 0:
            result.checks.append(GoldenRow('area rate', scenario.Q, trace.area_rate, 0.02, CheckMode.RELATIVE))
        for k, err in enumerate(trace.test_errors):
            result.checks.append(at_most(f'L-harmonic phi{k} rate error', float(err), RICHARDSON_TOLERANCE))
        # t_n, n >= 1, is conserved only for a source at the origin
        if op.kind is OperatorKind.LAPLACE and scenario.w == 0:
            for k, drift in enumerate(trace.moment_drift, start=1):
                result.checks.append(at_most(f't{k} drift', drift, 0.01))
    if op.kind is OperatorKind.SCHRODINGER and scenario.Q > 0:
        result.checks.append(at_least('schrodinger min rate', float(rates.min()), 1e-12))
        result.checks.append(GoldenRow('schrodinger max rate', scenario.Q, float(rates.max()),
                                       2e-3 * scenario.Q, CheckMode.UPPER))
    return result


_RATE_LAWS: Dict[str, Callable[[float], float]] = {
    'bessel': bessel_disk_rate,
    'gaussian': lambda R: math.exp(-R * R),
}


def run_rates(scenario: ScenarioConfig, out: Path) -> CommandResult:
    if scenario.operator.kind is not OperatorKind.SCHRODINGER:
        raise ConfigError("rates needs a schrodinger operator", field='operator.kind')
    expr = scenario.operator.coefficient
    u = expr.field(scenario.grid)
    w = scenario.w
    law = _RATE_LAWS.get(scenario.param('expected', 'none'))
    rows, checks = [], []
    for R in scenario.param('radii', [0.5, 1.0]):
        rate = schrodinger_area_rate(u, make_disk(w, R, scenario.grid), w)
        expected = law(R) if law else float('nan')
        rows.append([R, rate, expected])
        if law:
            checks.append(GoldenRow(f'schrodinger rate R={R}', expected, rate, 0.02, CheckMode.RELATIVE))
    probe = initial_rate_probe(expr, w, n=scenario.grid.nx)
    checks.append(at_least('initial rate increases as R shrinks', float(np.min(np.diff(probe))), 0.0))
    artifacts = [
        write_rows(out / 'rates.csv', ['radius', 'rate', 'expected'], rows),
        write_rows(out / 'initial_rate_probe.csv', ['radius', 'rate'], zip((0.4, 0.2, 0.1), probe.tolist())),
    ]
    return CommandResult(checks, artifacts, {'initial_rates': probe.tolist()})


def run_dtn(scenario: ScenarioConfig, out: Path) -> CommandResult:
    D = scenario.build_domain()
    kind = scenario.operator.kind
    if kind is OperatorKind.SCHRODINGER:
        raise ConfigError("the DtN map is built for laplace and beltrami operators", field='operator.kind')
    lam = scenario.build_operator().coefficient if kind is OperatorKind.BELTRAMI else None
    matrix = dtn_matrix(lam, D, scenario.param('order', 3), scenario.param('method', 'direct'))
    response = pumping_response(lam, D, scenario.w)
    artifacts = [
        matrix.to_csv(out / 'dtn_matrix.csv'),
        write_rows(out / 'pumping_response.csv', ['index', 'x', 'y', 'response'],
                   ([k, z.real, z.imag, v] for k, (z, v) in enumerate(zip(D.boundary_positions, response.values)))),
    ]
    defect = matrix.symmetry_defect()
    return CommandResult([at_most('dtn matrix symmetry defect', defect, 0.02)], artifacts,
                         {'labels': list(matrix.labels), 'symmetry_defect': defect})


def run_reproduce(scenario: ScenarioConfig, out: Path) -> CommandResult:
    try:
        rows = golden_table(scenario.grid.nx, scenario.param('only'))
    except KeyError as e:
        raise ConfigError(str(e.args[0]), field='params.only')
    path = write_rows(out / 'golden_table.csv', GOLDEN_HEADER, (r.as_row() for r in rows))
    return CommandResult(rows, [path], {'checks': len(rows)})


HANDLERS: Dict[str, Callable[[ScenarioConfig, Path], CommandResult]] = {
    'green': run_green,
    'dirichlet': run_dirichlet,
    'perturb': run_perturb,
    'balayage': run_balayage,
    'grow': run_grow,
    'rates': run_rates,
    'dtn': run_dtn,
    'reproduce-paper': run_reproduce,
}


def run_command(scenario: ScenarioConfig, out: Path) -> CommandResult:
    out.mkdir(parents=True, exist_ok=True)
    logger.info(f"running {scenario.command} into {out}")
    return HANDLERS[scenario.command](scenario, out)
