import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harmonic_cwy.conserved import prepare_embedding
from harmonic_cwy.initial_data import HarmonicAsymptotics, complete_expansion, u2_profile
from harmonic_cwy.reference import (
    NoTimelikeObserver,
    Observer,
    alpha_H0_m2,
    j_m2_closed_form,
    linearized_optimal_obstruction,
    optimal_residual,
    quasi_local_energy,
    reference_geometry,
    rho_j,
    rho_j_at,
    rho_m3_closed_form,
    second_order_closed,
    second_order_numeric,
    solve_leading_embedding,
    _flat_surface,
)
from harmonic_cwy.series import extract_series, extrapolate, geometric_radii
from harmonic_cwy.sphere import SphereGrid, divergence
from harmonic_cwy.surface import surface_data


@pytest.fixture(scope="module")
def leading(generic_case):
    data, comp, grid = generic_case
    return solve_leading_embedding(data, comp, grid)


def test_observer_helpers():
    obs = Observer.from_velocity([0.6, 0.0, 0.0])
    assert np.isclose(obs.a0, 1.25) and obs.norm_defect < 1e-15
    T = Observer(obs.a0, obs.a, a_m1=np.array([0.0, 1.0, 0.0])).at(10.0)
    assert abs(-T[0] ** 2 + T[1:] @ T[1:] + 1) < 1e-14
    with pytest.raises(NoTimelikeObserver):
        Observer.from_velocity([1.0, 0.0, 0.0])


def test_leading_embedding_closed_forms(generic_case, leading):
    data, _, grid = generic_case
    X = grid.unit_vectors
    assert np.abs(leading.observer.a / leading.observer.a0 - data.B / (4 * data.A)).max() < 1e-12
    assert leading.X0_0.sup() < 1e-12
    psi = 2 * u2_profile(data, X) + data.A**2
    for i in range(3):
        assert np.abs(leading.Xi_0[i].values - 2 * data.A * X[i]).max() < 1e-14
        assert np.abs(leading.Xi_m1[i].values - psi * X[i]).max() < 1e-13


def test_flat_embedding_is_round_sphere(grid12):
    emb = solve_leading_embedding(HarmonicAsymptotics.flat(), None, grid12)
    assert emb.observer.a0 == 1.0 and not emb.observer.a.any()
    ref = reference_geometry(emb, 30.0)
    assert np.abs(ref.H0_norm.values - 2 / 30.0).max() < 1e-15
    rho, j, _ = rho_j_at(_flat_surface(30.0, grid12), ref, emb)
    assert rho.sup() < 1e-15 and j.sup() < 1e-14


def test_obstruction_vanishes_only_at_B_over_4A(generic_case):
    data, _, grid = generic_case
    v0 = data.B / (4 * data.A)
    assert linearized_optimal_obstruction(data, v0, grid).sup() < 1e-9
    coords = grid.coordinates()
    for dv in (np.array([0.05, 0, 0]), np.array([0, -0.1, 0.02])):
        v = v0 + dv
        got = linearized_optimal_obstruction(data, v, grid)
        expect = coords.dot(3 * (4 * data.A * v - data.B))
        assert (got - expect).sup() < 1e-8
        assert got.sup() > 1e-3


def test_reference_mean_curvature_and_connection(generic_case, leading):
    data, _, grid = generic_case
    x, y, z = grid.coordinates()
    f = x * y * 0.3 + z * z * x * 0.2
    emb = leading.with_second_order(X0_m1=f)
    radii = geometric_radii(50, 6)
    refs = [reference_geometry(emb, r) for r in radii]
    H = extract_series([q.H0_norm for q in refs], radii, [-1, -2, -3, -4, -5])
    assert (H.coefficient(-1) - 2.0).sup() < 1e-9
    assert (H.coefficient(-2) + 4 * data.A).sup() < 1e-6
    alpha = extract_series([q.alpha_H0 for q in refs], radii, [-2, -3, -4, -5])
    assert (alpha.coefficient(-2) - alpha_H0_m2(f)).sup() < 1e-6


def test_rho_and_j_expansions(generic_case, leading, radii):
    data, comp, grid = generic_case
    rj = rho_j(data, comp, leading, radii)
    a0 = leading.observer.a0
    assert (rj.rho_m2 - 4 * data.A / a0).sup() < 1e-8
    assert rj.j_m1.sup() < 1e-8
    assert (rj.rho_m3 - rho_m3_closed_form(data, leading.observer, grid)).sup() < 1e-6
    assert (rj.j_m2 - j_m2_closed_form(data, leading)).sup() < 1e-6


def test_zero_second_order_is_not_optimal(generic_case, leading):
    data, _, _ = generic_case
    assert divergence(j_m2_closed_form(data, leading)).sup() > 1e-2


def test_second_order_solve(generic_case, leading, radii):
    data, comp, grid = generic_case
    closed, j2 = second_order_closed(data, leading)
    assert divergence(j2).sup() < 1e-10
    numeric, j2n = second_order_numeric(data, comp, leading, radii)
    assert divergence(j2n).sup() < 1e-10
    assert (closed.X0_m1 - numeric.X0_m1).sup() < 1e-6
    assert np.abs(closed.observer.a_m1 - numeric.observer.a_m1).max() < 1e-6
    # the fitted j^(-2) of the solved embedding is divergence free as well
    assert divergence(rho_j(data, comp, numeric, radii).j_m2).sup() < 1e-5
    obs = numeric.observer
    assert abs(obs.a0_m1 - obs.a @ obs.a_m1 / obs.a0) < 1e-15


def test_optimal_residual_decay(generic_case, leading, radii):
    data, comp, grid = generic_case
    solved = prepare_embedding(data, comp, grid, radii)

    def exponent(emb):
        s1 = optimal_residual(surface_data(data, comp, 100.0, grid), emb).sup()
        s2 = optimal_residual(surface_data(data, comp, 200.0, grid), emb).sup()
        return np.log2(s1 / s2)

    assert 3.8 < exponent(leading) < 4.3
    assert exponent(solved) > 4.8


def test_quasi_local_energy_limit(generic_case, leading, radii):
    data, comp, grid = generic_case
    vals = [quasi_local_energy(surface_data(data, comp, r, grid), leading) / (8 * np.pi) for r in radii]
    ex = extrapolate(radii, np.array(vals))
    assert abs(ex.value - 2 * data.A / leading.observer.a0) < 1e-6


def test_quasi_local_energy_vanishes_in_minkowski(grid12):
    emb = solve_leading_embedding(HarmonicAsymptotics.flat(), None, grid12)
    assert abs(quasi_local_energy(_flat_surface(40.0, grid12), emb)) < 1e-11


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_observer_solves_obstruction_property(seed):
    data = HarmonicAsymptotics.random(np.random.default_rng(seed))
    emb = solve_leading_embedding(data, None, _GRID)
    assert np.abs(emb.observer.a / emb.observer.a0 - data.B / (4 * data.A)).max() < 1e-12
    assert emb.observer.norm_defect < 1e-12


_GRID = SphereGrid(10)
