import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harmonic_cwy.sphere import (
    GridMismatchError,
    SphereGrid,
    SphereOneForm,
    degree_projection,
    divergence,
    gradient,
    integrate,
    laplacian,
    second_partials,
    solve_laplacian_polynomial,
    solve_shifted_laplacian,
)


def _double_factorial(n):
    return 1 if n <= 0 else n * _double_factorial(n - 2)


def monomial_moment(a, b, c):
    """Exact integral of x^a y^b z^c over the unit sphere."""
    if a % 2 or b % 2 or c % 2:
        return 0.0
    num = _double_factorial(a - 1) * _double_factorial(b - 1) * _double_factorial(c - 1)
    return 4 * math.pi * num / _double_factorial(a + b + c + 1)


def _random_field(grid, rng, l_cut=None):
    coeffs = rng.standard_normal(grid.n_coeffs)
    if l_cut is not None:
        coeffs[grid.degrees > l_cut] = 0.0
    return grid.from_coeffs(coeffs)


def test_grid_defaults_and_validation():
    g = SphereGrid(8)
    assert (g.n_theta, g.n_phi) == (9, 17)
    assert g.n_coeffs == 81
    with pytest.raises(ValueError):
        SphereGrid(8, n_theta=5)
    with pytest.raises(ValueError):
        SphereGrid(8, n_phi=10)


def test_weights_sum_to_area(grid12):
    assert np.isclose(grid12.weights.sum(), 4 * np.pi, rtol=0, atol=1e-13)


@pytest.mark.parametrize("a,b,c", [(0, 0, 0), (2, 0, 0), (2, 2, 2), (4, 2, 0), (6, 0, 4), (1, 1, 0), (3, 2, 1), (0, 0, 8)])
def test_monomial_moments(grid12, a, b, c):
    x, y, z = grid12.unit_vectors
    got = integrate(grid12.scalar(x**a * y**b * z**c))
    assert abs(got - monomial_moment(a, b, c)) < 1e-13


def test_basis_orthonormal(grid12):
    Y = grid12.basis
    gram = Y.T @ (grid12.weights[:, None] * Y)
    assert np.abs(gram - np.eye(grid12.n_coeffs)).max() < 1e-12


def test_round_trip(grid12, rng):
    f = _random_field(grid12, rng)
    assert np.abs(grid12.analysis(f.values) - f.coeffs).max() < 1e-12
    assert np.abs(grid12.synthesis(grid12.analysis(f.values)) - f.values).max() < 1e-12


def test_laplacian_eigenvalues(grid12):
    for l in range(grid12.l_max + 1):
        for k in np.flatnonzero(grid12.degrees == l):
            e = np.zeros(grid12.n_coeffs)
            e[k] = 1.0
            f = grid12.from_coeffs(e)
            assert np.abs(laplacian(f).values + l * (l + 1) * f.values).max() < 1e-9 * max(1, l * l)


def test_coordinate_functions_are_l1(grid12):
    for Xi in grid12.coordinates():
        assert np.abs(laplacian(Xi).values + 2 * Xi.values).max() < 1e-12


def test_laplacian_matches_coordinate_formula(grid12, rng):
    # Lap f = f_tt + cot f_t + f_pp / sin^2
    f = _random_field(grid12, rng, l_cut=10)
    ftt, _, fpp = second_partials(f)
    ft = gradient(f).theta
    st_ = grid12.sin_theta
    direct = ftt + np.cos(grid12.theta) / st_ * ft + fpp / st_**2
    assert np.abs(direct - laplacian(f).values).max() < 1e-9


def test_gradient_of_product_rule(grid12):
    x, y, z = grid12.coordinates()
    lhs = gradient(x * y)
    rhs = gradient(x) * y + gradient(y) * x
    assert (lhs - rhs).sup() < 1e-11


def test_divergence_adjoint_to_gradient(grid12, rng):
    f = _random_field(grid12, rng)
    w = SphereOneForm(grid12, rng.standard_normal(grid12.size), rng.standard_normal(grid12.size))
    lhs = integrate(gradient(f).dot(w))
    rhs = -integrate(f * divergence(w))
    assert abs(lhs - rhs) < 1e-9 * (1 + abs(lhs))


def test_divergence_of_gradient_is_laplacian(grid12, rng):
    f = _random_field(grid12, rng)
    assert (divergence(gradient(f)) - laplacian(f)).sup() < 1e-9 * f.sup() * 200


def test_rotated_gradient_divergence_free(grid12, rng):
    f = _random_field(grid12, rng, l_cut=10)
    assert divergence(gradient(f).rotated()).sup() < 1e-9


def test_degree_projection(grid12):
    x, y, z = grid12.coordinates()
    f = x * y + z + 3.0
    assert (degree_projection(f, 1) - z).sup() < 1e-13
    assert (degree_projection(f, [0, 2]) - (x * y + 3.0)).sup() < 1e-13


def test_shifted_solver_returns_obstruction(grid12):
    x, y, z = grid12.coordinates()
    sol, obs = solve_shifted_laplacian(2.0, x * y + z)
    # (Lap + 2)(xy) = -4 xy; z lies in the kernel
    assert (sol + x * y / 4).sup() < 1e-13
    assert (obs - z).sup() < 1e-13


def test_polynomial_solver_biharmonic(grid12, rng):
    f = _random_field(grid12, rng, l_cut=10)
    f = f - degree_projection(f, [0, 1])
    rhs = laplacian(laplacian(f) + f * 2)
    sol, obs = solve_laplacian_polynomial([0.0, 2.0, 1.0], rhs)
    assert obs.sup() < 1e-9
    assert (sol - f).sup() < 1e-9


def test_grid_mismatch_rejected():
    a, b = SphereGrid(8), SphereGrid(8)
    with pytest.raises(GridMismatchError):
        a.constant(1.0) + b.constant(1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 6))
def test_monomial_moment_property(a, b, c):
    # degree a+b+c <= 18 is integrated exactly by the l_max=12 rule (2 l_max + 1 >= 18)
    g = _GRID
    x, y, z = g.unit_vectors
    got = integrate(g.scalar(x**a * y**b * z**c))
    assert abs(got - monomial_moment(a, b, c)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adjointness_property(seed):
    g = _GRID
    r = np.random.default_rng(seed)
    f = g.from_coeffs(r.standard_normal(g.n_coeffs))
    w = SphereOneForm(g, r.standard_normal(g.size), r.standard_normal(g.size))
    lhs = integrate(gradient(f).dot(w))
    assert abs(lhs + integrate(f * divergence(w))) < 1e-9 * (1 + abs(lhs))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    g = _GRID
    c = np.random.default_rng(seed).standard_normal(g.n_coeffs)
    assert np.abs(g.analysis(g.synthesis(c)) - c).max() < 1e-12


_GRID = SphereGrid(12)
