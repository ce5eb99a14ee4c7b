import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdmforge import pct, vonroos
from pdmforge.errors import BoundaryLeakError, ConstructionError, DomainError
from pdmforge.field import MassProfile, constant, make_exp_map, polynomial, reciprocal
from pdmforge.vonroos import TridiagonalOperator, VonRoosParams


def unit_mass(grid):
    return MassProfile(constant(1.0).restrict(grid.x_lo, grid.x_hi))


# -- ordering parameters -----------------------------------------------------


def test_params_sum_rule():
    VonRoosParams(-0.5, -0.25, -0.25)
    assert VonRoosParams.ben_daniel_duke() == VonRoosParams(0.0, -1.0, 0.0)
    with pytest.raises(DomainError):
        VonRoosParams(0.0, 0.0, 0.0)


MASSES = {
    "exponential": make_exp_map(-1.0).restrict(-3, 3),
    "constant": constant(2.5).restrict(-3, 3),
    "rational": reciprocal(polynomial([1.0, 0.0, 0.7])).restrict(-3, 3),
}


@pytest.mark.parametrize("name", sorted(MASSES))
def test_ben_daniel_duke_leaves_potential_alone(name):
    M = MassProfile(MASSES[name])
    x = np.linspace(-2.5, 2.5, 51)
    V = polynomial([0.3, 0.0, 1.0])
    np.testing.assert_array_equal(vonroos.veff_from_vonroos(V, M, VonRoosParams.ben_daniel_duke(), x), V(x))


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_constant_mass_ignores_ordering(a, b):
    p = VonRoosParams(a, b, -1.0 - a - b)
    M = MassProfile(MASSES["constant"])
    x = np.linspace(-2, 2, 9)
    np.testing.assert_array_equal(vonroos.veff_from_vonroos(lambda t: t * t, M, p, x), x * x)


def test_exponential_mass_correction():
    M = MassProfile(MASSES["exponential"])
    veff = vonroos.veff_from_vonroos(constant(0.0), M, VonRoosParams(-1.0, 0.0, 0.0), 0.0)
    assert veff == pytest.approx(-0.5, abs=1e-15)


def test_veff_domain():
    with pytest.raises(DomainError):
        vonroos.veff_from_vonroos(constant(0.0), MassProfile(MASSES["constant"]), VonRoosParams.ben_daniel_duke(), 5.0)


# -- discretization ----------------------------------------------------------


def test_unit_mass_stencil():
    grid = pct.Grid1D(0.0, 17.0, 18)
    T = vonroos.discretize(unit_mass(grid), np.zeros(18), grid)
    np.testing.assert_array_equal(T.diag, 2.0)
    np.testing.assert_array_equal(T.off, -1.0)


def test_heavy_mass_stencil():
    grid = pct.Grid1D(0.0, 17.0, 18)
    T = vonroos.discretize(MassProfile(constant(2.0).restrict(0, 17)), np.zeros(18), grid)
    np.testing.assert_array_equal(T.diag, 1.0)
    np.testing.assert_array_equal(T.off, -0.5)


def test_exponential_mass_row():
    grid = pct.Grid1D(-1.0, 1.0, 21)
    veff = np.linspace(0, 1, 21)
    T = vonroos.discretize(MassProfile(make_exp_map(-1.0).restrict(-1, 1)), veff, grid)
    dx = 0.1
    i = 7  # full-grid index; row i - 1 of T
    xi = grid.x[i]
    a_minus, a_plus = math.exp(xi - dx / 2), math.exp(xi + dx / 2)
    assert T.diag[i - 1] == pytest.approx((a_minus + a_plus) / dx**2 + veff[i], rel=1e-14)
    assert T.off[i - 1] == pytest.approx(-a_plus / dx**2, rel=1e-14)


def test_unit_mass_matches_textbook_stencil_bitwise():
    grid = pct.Grid1D(-8.0, 8.0, 400)
    x = grid.x
    T = vonroos.discretize(unit_mass(grid), x * x, grid)
    dx2 = grid.dx**2
    ones = np.ones(grid.n_points - 1)
    np.testing.assert_array_equal(T.diag, (ones[:-1] + ones[1:]) / dx2 + (x * x)[1:-1])
    np.testing.assert_array_equal(T.off, -ones[1:-1] / dx2)


def test_operator_is_symmetric_and_finite(exp_system):
    T = vonroos.discretize(exp_system.inputs.M, exp_system.V, exp_system.grid)
    assert np.all(np.isfinite(T.diag)) and np.all(np.isfinite(T.off))
    small = TridiagonalOperator(T.diag[:50], T.off[:49])
    np.testing.assert_array_equal(small.dense(), small.dense().T)


def test_discretize_rejects_bad_input():
    grid = pct.Grid1D(0.0, 1.0, 20)
    with pytest.raises(DomainError):
        vonroos.discretize(unit_mass(grid), np.zeros(19), grid)
    with pytest.raises(ConstructionError):
        TridiagonalOperator(np.array([1.0, np.nan]), np.array([0.0]))


# -- eigensolver -------------------------------------------------------------


def test_two_by_two():
    sol = vonroos.eigs_lowest(TridiagonalOperator(np.array([2.0, 2.0]), np.array([-1.0])), 2)
    np.testing.assert_allclose(sol.values, [1.0, 3.0], atol=1e-10)
    np.testing.assert_allclose(np.abs(sol.vectors), 1 / math.sqrt(2), atol=1e-12)


@pytest.mark.parametrize("n_points", [64, 501])
def test_particle_in_box(n_points):
    grid = pct.Grid1D(0.0, 1.0, n_points)
    T = vonroos.discretize(unit_mass(grid), np.zeros(n_points), grid)
    k = 6
    sol = vonroos.eigs_lowest(T, k)
    j = np.arange(1, k + 1)
    exact = 2 / grid.dx**2 * (1 - np.cos(j * math.pi * grid.dx))
    np.testing.assert_allclose(sol.values, exact, rtol=2e-10)
    assert np.all(np.diff(sol.values) > 0)


def test_harmonic_oscillator_spectrum():
    grid = pct.Grid1D(-8.0, 8.0, 2000)
    x = grid.x
    sol = vonroos.eigs_lowest(vonroos.discretize(unit_mass(grid), x * x, grid), 4)
    np.testing.assert_allclose(sol.values, [1, 3, 5, 7], rtol=1e-3)


def test_eigs_rejects_unresolvable_k():
    grid = pct.Grid1D(0.0, 1.0, 40)
    T = vonroos.discretize(unit_mass(grid), np.zeros(40), grid)
    with pytest.raises(DomainError):
        vonroos.eigs_lowest(T, 11)
    with pytest.raises(DomainError):
        vonroos.eigs_lowest(T, 0)


def test_eigenvectors_orthonormal_and_small_residuals(exp_system):
    T = vonroos.discretize(exp_system.inputs.M, exp_system.V, exp_system.grid)
    sol = vonroos.eigs_lowest(T, 4)
    np.testing.assert_allclose(sol.gram(), np.eye(4), atol=1e-8)
    assert np.all(sol.residuals <= vonroos.SOLVER_TOL * T.norm_inf())


def test_values_match_dense_solver():
    rng = np.random.default_rng(3)
    d = rng.normal(size=120)
    e = rng.uniform(0.1, 1.0, 119)
    T = TridiagonalOperator(d, e)
    sol = vonroos.eigs_lowest(T, 10)
    np.testing.assert_allclose(sol.values, np.linalg.eigvalsh(T.dense())[:10], atol=1e-9)
    np.testing.assert_allclose(sol.gram(), np.eye(10), atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**31 - 1), st.floats(-5, 5))
def test_sturm_counts_agree(n, seed, sigma):
    rng = np.random.default_rng(seed)
    T = TridiagonalOperator(rng.normal(size=n), rng.uniform(0.05, 2.0, n - 1))
    count = vonroos.sturm_count(T, sigma)
    assert count == vonroos.sturm_count_signs(T, sigma)
    assert count == int(np.sum(np.linalg.eigvalsh(T.dense()) < sigma))


# -- verification ------------------------------------------------------------


def test_verify_exponential_system(exp_system):
    report = vonroos.verify_system(exp_system, 4)
    assert report.passed
    for lv in report.levels:
        assert abs(lv.numeric - (lv.n + 1.5)) / (lv.n + 1.5) <= 1e-3
        assert lv.overlap >= 0.9999


def test_verify_harmonic_system(harmonic_system):
    report = vonroos.verify_system(harmonic_system, 3)
    assert report.passed and report.max_rel_gap <= 1e-3
    d = report.to_dict()
    assert d["passed"] and len(d["levels"]) == 3


def test_verify_two_over_g_extension(exp_system):
    pert = pct.deltaQ_2_over_g(exp_system, 0)
    report = vonroos.verify_perturbation(exp_system, pert)
    assert report.passed
    assert abs(report.levels[0].numeric - 2.5) / 2.5 <= 1e-3


def test_verify_small_window_leaks():
    sys = pct.construct_laguerre_exponential(1.0, 2.0, 0, pct.Grid1D(-2.0, 2.0, 400))
    with pytest.raises(BoundaryLeakError):
        vonroos.verify_system(sys)


def test_count_nodes(exp_system):
    assert [vonroos.count_nodes(p) for p in exp_system.psi] == [0, 1, 2, 3]


def test_convergence_is_second_order():
    beta, nu = 1.0, 2.0
    coarse = pct.construct_laguerre_exponential(beta, nu, 0, pct.Grid1D(-10.0, 25.0, 2000))
    fine = pct.construct_laguerre_exponential(beta, nu, 0, coarse.grid.refined())
    errs = [abs(vonroos.verify_system(s, 1).levels[0].numeric - 1.5) for s in (coarse, fine)]
    assert 3.0 <= errs[0] / errs[1] <= 5.0


def test_solve_direct_bdd_matches_other_orderings_for_constant_mass():
    grid = pct.Grid1D(-8.0, 8.0, 1200)
    M = MassProfile(constant(1.0).restrict(-8, 8))
    V = polynomial([0.0, 0.0, 1.0])
    _, ref = vonroos.solve_direct(M, V, VonRoosParams.ben_daniel_duke(), grid, 3)
    _, other = vonroos.solve_direct(M, V, VonRoosParams(-0.3, 0.1, -0.8), grid, 3)
    np.testing.assert_array_equal(ref.values, other.values)
    np.testing.assert_allclose(ref.values, [1, 3, 5], rtol=1e-3)
