import numpy as np
import pytest

from growthlab.dirichlet_perturb import (
    MIN_PROBES,
    default_probes,
    dirichlet_beltrami_first_order,
    dirichlet_schrodinger_first_order,
    green_area_closed_form,
    green_area_moment,
    linearization_bound_check,
)
from growthlab.errors import DomainError, HypothesisError
from growthlab.grid_core import BoundaryProfile, ScalarField, make_disk
from growthlab.operators_green import OperatorDesc, dirichlet_solve

POINTS = (0j, 0.3 + 0j, 0.2 + 0.4j, 0.6j)


def test_helmholtz_first_order_correction(unit_disk, spec):
    eps = 0.1
    one = BoundaryProfile.constant(unit_disk, 1.0)
    phi = dirichlet_schrodinger_first_order(unit_disk, ScalarField.constant(spec, 1.0), one, eps)
    for z in POINTS:
        assert phi.at(z) == pytest.approx(1 - eps / 4 * (1 - abs(z) ** 2), abs=1e-3)


def test_first_order_at_zero_eps_is_the_harmonic_solution(unit_disk, spec):
    f = BoundaryProfile.from_function(unit_disk, lambda x, y: x)
    phi = dirichlet_schrodinger_first_order(unit_disk, ScalarField.constant(spec, 3.0), f, 0.0)
    assert phi.at(0.4 + 0.1j) == pytest.approx(0.4, abs=1e-8)


def test_beltrami_first_variation_on_saddle_data(unit_disk, spec):
    u = ScalarField.radial(spec, lambda r: r * r)
    saddle = BoundaryProfile.from_function(unit_disk, lambda x, y: x * x - y * y)
    first = dirichlet_beltrami_first_order(unit_disk, u, saddle, 1.0)
    phi0 = dirichlet_solve(OperatorDesc.laplace(), unit_disk, saddle)
    for z in POINTS:
        r2 = abs(z) ** 2
        expected = (r2 - r2 * r2) * np.cos(2 * np.angle(z)) / 3
        assert first.at(z) - phi0.at(z) == pytest.approx(expected, abs=1e-3)


def test_beltrami_first_order_checks_the_lambda_floor(unit_disk, spec):
    one = BoundaryProfile.constant(unit_disk, 1.0)
    with pytest.raises(HypothesisError):
        dirichlet_beltrami_first_order(unit_disk, ScalarField.constant(spec, -2.0), one, 1.0)


def test_first_order_tracks_the_direct_solve(unit_disk, spec):
    """The first-order gap shrinks like eps squared."""
    u = ScalarField.from_function(spec, lambda x, y: 2.0 + x)
    f = BoundaryProfile.from_function(unit_disk, lambda x, y: 1.0 + y)
    gaps = []
    for eps in (0.2, 0.1):
        first = dirichlet_schrodinger_first_order(unit_disk, u, f, eps)
        direct = dirichlet_solve(OperatorDesc.schrodinger(u * eps), unit_disk, f)
        gaps.append(np.max(np.abs(first.values - direct.values)[unit_disk.mask]))
    assert 3.0 <= gaps[0] / gaps[1] <= 5.5


@pytest.mark.parametrize('n', [0, 1, 2])
def test_green_area_moments(unit_disk, n):
    for z in (0j, 0.3 + 0j):
        quad, closed = green_area_moment(unit_disk, z, n)
        assert closed == pytest.approx(green_area_closed_form(z, n))
        assert quad == pytest.approx(closed, rel=2e-2)


def test_green_area_closed_form_at_centre():
    assert green_area_closed_form(0j, 0) == pytest.approx(-0.25)


def test_green_area_moment_requires_unit_disk(spec):
    with pytest.raises(DomainError):
        green_area_moment(make_disk(0j, 0.7, spec), 0j, 0)
    with pytest.raises(DomainError):
        green_area_moment(make_disk(0j, 1.0, spec), 0j, 5)


def test_default_probes(unit_disk, spec):
    probes = default_probes(unit_disk)
    assert len(probes) == MIN_PROBES
    assert all(unit_disk.clearance(z) >= 5 * spec.h - 1e-12 for z in probes)
    with pytest.raises(DomainError):
        default_probes(make_disk(0j, 0.1, spec))


def test_linearization_bound_holds(unit_disk, spec):
    u = ScalarField.from_function(spec, lambda x, y: 10.0 + 5.0 * x)
    f = BoundaryProfile.from_angle(unit_disk, np.cos)
    bound = linearization_bound_check(unit_disk, u, f)
    assert len(bound.probes) == MIN_PROBES
    assert np.all(bound.bounds > 0)
    assert 0.0 < bound.worst_ratio <= 1.0


def test_linearization_bound_needs_enough_probes(unit_disk, spec):
    f = BoundaryProfile.constant(unit_disk, 1.0)
    with pytest.raises(DomainError):
        linearization_bound_check(unit_disk, ScalarField.constant(spec, 1.0), f, probes=[0j, 0.1])
