import math

import numpy as np
import pytest

from growthlab.errors import HypothesisError, SingularityError
from growthlab.goldens import disk_green_closed_form
from growthlab.grid_core import BoundaryProfile, GridSpec, ScalarField, make_disk
from growthlab.operators_green import (
    OperatorDesc,
    OperatorKind,
    clamp_sign,
    convert_beltrami_to_schrodinger,
    dirichlet_solve,
    field_normal_derivative,
    green,
    grid_laplacian,
    interior_gradient,
    interior_of,
    kernel_pairing,
    normal_derivative,
    poisson_kernel,
    positive_solution,
    solve_zero_dirichlet,
)
from growthlab.special import besseli0

LAPLACE = OperatorDesc.laplace()
PROBES = [0.5 * np.exp(2j * np.pi * k / 8) for k in range(8)] + [-0.2 + 0.1j, 0.1 - 0.6j]


def test_operator_desc_enforces_coefficients(spec):
    with pytest.raises(HypothesisError):
        OperatorDesc(OperatorKind.LAPLACE, ScalarField.constant(spec, 1.0))
    with pytest.raises(HypothesisError):
        OperatorDesc(OperatorKind.SCHRODINGER)
    with pytest.raises(HypothesisError):
        OperatorDesc.beltrami(ScalarField.constant(spec, 0.0))
    assert OperatorDesc('beltrami', ScalarField.constant(spec, 2.0)).kind is OperatorKind.BELTRAMI
    assert LAPLACE.lambda_at(0.3) == 1.0


def test_disk_green_matches_closed_form(unit_disk):
    w = 0.3 + 0.2j
    gs = green(LAPLACE, unit_disk, w)
    worst = max(abs(gs.value_at(z) - disk_green_closed_form(z, w)) for z in PROBES)
    assert worst < 5e-3


def test_green_refines_at_second_order():
    w = 0.3 + 0.2j
    coarse_spec = GridSpec.square(65, 2.0)
    clearance = 5 * coarse_spec.h
    nodes = coarse_spec.complex_nodes().ravel()
    probes = nodes[(np.abs(nodes) <= 1 - clearance) & (np.abs(nodes - w) >= clearance)]

    def worst(n):
        gs = green(LAPLACE, make_disk(0j, 1.0, GridSpec.square(n, 2.0)), w)
        return max(abs(gs.value_at(z) - disk_green_closed_form(z, w)) for z in probes)

    order = math.log2(worst(65) / worst(129))
    assert order >= 1.8


def test_clamp_sign_only_absorbs_small_misses():
    values = np.array([-1.0, 1e-12, 0.5])
    fixed, worst = clamp_sign(values, 1.0, 1e-6)
    assert fixed.tolist() == [-1.0, 0.0, 0.5]
    assert worst == 0.5
    fixed, worst = clamp_sign(-values, -2.0, 1e-6)
    assert fixed.tolist() == [1.0, 0.0, -0.5]
    assert worst == 0.5
    assert clamp_sign(np.array([-1.0, -2.0]), 1.0, 1e-6)[1] == 0.0


def test_green_is_nonpositive_and_symmetric(unit_disk):
    a, b = 0.3 + 0.2j, -0.4 + 0.1j
    ga = green(LAPLACE, unit_disk, a)
    gb = green(LAPLACE, unit_disk, b)
    assert ga.total.values[unit_disk.mask].max() <= 0.0
    assert ga.value_at(b) == pytest.approx(gb.value_at(a), abs=2e-3)


def test_green_flux_equals_strength(unit_disk):
    gs = green(LAPLACE, unit_disk, 0.2 - 0.1j, Q=2.0)
    flux = float(np.dot(normal_derivative(gs).values, unit_disk.boundary_ds))
    assert flux == pytest.approx(2.0, rel=3e-2)


def test_centred_green_has_uniform_normal_derivative(unit_disk):
    dn = normal_derivative(green(LAPLACE, unit_disk, 0j)).values
    target = 1.0 / (2.0 * math.pi)
    assert np.max(np.abs(dn - target)) / target < 3e-2


def test_source_near_boundary_is_refused(unit_disk):
    with pytest.raises(SingularityError):
        green(LAPLACE, unit_disk, 0.99 + 0j)


def test_schrodinger_with_zero_potential_is_laplace(unit_disk, spec):
    zero = OperatorDesc.schrodinger(ScalarField.constant(spec, 0.0))
    w = 0.1 + 0.1j
    assert np.allclose(green(zero, unit_disk, w).total.values, green(LAPLACE, unit_disk, w).total.values,
                       atol=1e-10)


def test_negative_potential_is_refused(unit_disk, spec):
    with pytest.raises(HypothesisError):
        green(OperatorDesc.schrodinger(ScalarField.constant(spec, -1.0)), unit_disk, 0j)


def test_constant_beltrami_scales_laplace_green(unit_disk, spec):
    two = OperatorDesc.beltrami(ScalarField.constant(spec, 2.0))
    w = -0.25 + 0.3j
    assert np.allclose(green(two, unit_disk, w).total.values, 0.5 * green(LAPLACE, unit_disk, w).total.values,
                       atol=1e-10)


def test_dirichlet_solve_is_exact_for_quadratic_harmonics(unit_disk, spec):
    f = BoundaryProfile.from_function(unit_disk, lambda x, y: x * x - y * y)
    phi = dirichlet_solve(LAPLACE, unit_disk, f)
    X, Y = spec.nodes()
    assert np.max(np.abs(phi.values - (X * X - Y * Y))[unit_disk.mask]) < 1e-8


def test_positive_solution_for_unit_potential(unit_disk, spec):
    phi, low = positive_solution(ScalarField.constant(spec, 1.0), unit_disk)
    assert low > 0
    assert phi.at(0j) == pytest.approx(1.0 / besseli0(1.0), abs=1e-3)


def test_grid_laplacian_and_interior_gradient(unit_disk, spec):
    X, Y = spec.nodes()
    assert np.allclose(grid_laplacian(X * X + Y * Y, spec.h)[1:-1, 1:-1], 4.0)
    linear = ScalarField.from_function(spec, lambda x, y: 3.0 * x - 2.0 * y)
    boundary = 3.0 * unit_disk.boundary_positions.real - 2.0 * unit_disk.boundary_positions.imag
    gx, gy = interior_gradient(interior_of(linear, unit_disk), unit_disk, boundary)
    assert np.allclose(gx, 3.0, atol=1e-7)
    assert np.allclose(gy, -2.0, atol=1e-7)


def test_poisson_kernel_pairing_is_the_adjoint_solve(unit_disk, spec):
    f = ScalarField.from_function(spec, lambda x, y: 1.0 + x)
    zeta = unit_disk.n_boundary // 5
    P = poisson_kernel(LAPLACE, unit_disk, zeta)
    paired = kernel_pairing(f, P, unit_disk)
    direct = field_normal_derivative(solve_zero_dirichlet(LAPLACE, unit_disk, f), unit_disk).values[zeta]
    assert paired == pytest.approx(direct, rel=1e-8)


def test_beltrami_conversion(unit_disk, spec):
    lam = ScalarField.radial(spec, lambda r: np.exp(2 * r * r))
    result = convert_beltrami_to_schrodinger(lam, unit_disk, 0.1 + 0.05j)
    assert result.clamped_nodes == 0
    # u = lambda^-1/2 Lap lambda^1/2 = 4 (1 + r^2)
    assert result.u.at(0.5) == pytest.approx(4.0 * 1.25, rel=1e-2)
    assert result.discrepancy / result.scale < 1e-2
