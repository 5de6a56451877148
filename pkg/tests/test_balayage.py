import math

import numpy as np
import pytest
from scipy import ndimage

from growthlab.balayage import (
    balayage_box,
    box_domain,
    elliptic_potential,
    newtonian_potential,
    partial_balayage,
    quadrature_domain_check,
)
from growthlab.errors import DomainError, GridError
from growthlab.goldens import mask_perimeter
from growthlab.grid_core import GridSpec, Measure, ScalarField, make_disk, symmetric_difference_area

MASS = math.pi / 4
RADIUS = math.sqrt(MASS / math.pi)


@pytest.fixture(scope='module')
def box():
    template = Measure.point(GridSpec.square(16, 2.0), 0j, MASS)
    return balayage_box(template, 129)


@pytest.fixture(scope='module')
def point_mass(box):
    return Measure.point(box, 0j, MASS)


@pytest.fixture(scope='module')
def swept(point_mass, box):
    return partial_balayage(point_mass, None, box)


def test_box_fits_a_disk_of_the_same_mass(box):
    x0, x1, y0, y1 = box.extent
    assert x1 - x0 == pytest.approx(2 * 2.5 * RADIUS)
    assert 0.5 * (x0 + x1) == pytest.approx(0.0, abs=1e-12)
    assert not box_domain(box).mask[1, :].any()


def test_newtonian_potential_of_a_centred_atom(point_mass, box):
    pot = newtonian_potential(point_mass, box)
    for z in (0.3 + 0.1j, -0.7 + 0.5j, 0.05j):
        assert pot.value_at(z) == pytest.approx(MASS / (2 * math.pi) * math.log(abs(z)), rel=1e-10)
    assert pot.kind == 'newtonian'


def test_constant_lambda_halves_the_potential(point_mass, box):
    newton = newtonian_potential(point_mass, box)
    elliptic = elliptic_potential(point_mass, ScalarField.constant(box, 2.0), box)
    assert elliptic.kind == 'elliptic'
    assert np.allclose(elliptic.field.values, 0.5 * newton.field.values, atol=1e-10)


def test_potential_requires_matching_box(box):
    with pytest.raises(GridError):
        newtonian_potential(Measure.point(GridSpec.square(16, 2.0), 0j, MASS), box)


def test_atom_near_the_box_edge_is_refused(box):
    with pytest.raises(DomainError):
        newtonian_potential(Measure.point(box, 1.1 + 0j, 0.1), box)


def test_point_mass_sweeps_to_a_disk(swept, box):
    disk = np.abs(box.complex_nodes()) < RADIUS
    ring = 2 * math.pi * RADIUS
    assert symmetric_difference_area(swept.saturated_mask, disk, box) <= 3 * box.h * ring


def test_balayage_solves_the_complementarity_problem(swept):
    assert swept.complementarity <= 1e-6
    assert swept.mass == pytest.approx(MASS, rel=5e-3)
    assert np.all(swept.result_density.values <= 1.0)
    assert np.all(swept.result_density.values >= 0.0)
    assert swept.trace


def test_swept_measure_has_the_same_exterior_potential(point_mass, swept):
    scale = float(np.max(np.abs(swept.potential.field.values)))
    assert quadrature_domain_check(point_mass, swept) / scale <= 1e-3


@pytest.mark.slow
def test_constant_lambda_sweeps_to_the_same_disk(point_mass, swept, box):
    elliptic = partial_balayage(point_mass, ScalarField.constant(box, 2.0), box)
    assert elliptic.mass == pytest.approx(MASS, rel=5e-3)
    ring = 2 * math.pi * RADIUS
    assert symmetric_difference_area(elliptic.saturated_mask, swept.saturated_mask, box) <= 3 * box.h * ring


def test_balayage_sits_above_the_potential(swept):
    lam_mu = swept.potential.field.values
    scale = float(np.max(np.abs(lam_mu)))
    assert np.all(swept.V.values - lam_mu >= -1e-10 * scale)


def test_admissible_measure_is_left_alone():
    box = GridSpec.square(65, 1.25)
    mu = Measure.indicator(make_disk(0j, 0.5, box)).scaled(0.9)
    result = partial_balayage(mu, None, box)
    assert not result.saturated_mask.any()
    assert np.allclose(result.result_density.values, mu.density.values, atol=1e-12)


def test_saturated_set_grows_with_the_mass(point_mass, swept, box):
    smaller = partial_balayage(point_mass.scaled(0.5), None, box)
    assert smaller.saturated_mask.any()
    assert not np.any(smaller.saturated_mask & ~ndimage.binary_dilation(swept.saturated_mask))
    assert smaller.saturated_mask.sum() < swept.saturated_mask.sum()


@pytest.mark.slow
def test_balayage_can_be_taken_in_stages():
    a, b = (-0.3 + 0j, 0.5), (0.3 + 0j, 0.5)
    template = Measure.point(GridSpec.square(16, 2.0), *a).with_atom(*b)
    box = balayage_box(template, 129, inflation=3.5)
    joint = partial_balayage(Measure.point(box, *a).with_atom(*b), None, box)
    first = partial_balayage(Measure.point(box, *a), None, box)
    staged = partial_balayage(first.as_measure().with_atom(*b), None, box)
    gap = symmetric_difference_area(joint.saturated_mask, staged.saturated_mask, box)
    assert gap <= 5 * box.h * mask_perimeter(joint.saturated_mask, box)
