import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from geopriv.errors import SolverError
from geopriv.simplex import revised_simplex


def highs(c, A_ub, b_ub, A_eq=None, b_eq=None):
    return optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")


def test_textbook():
    # max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> optimum 36 at (2, 6)
    res = revised_simplex([-3.0, -5.0], [[1, 0], [0, 2], [3, 2]], [4, 12, 18])
    assert res.objective == pytest.approx(-36.0)
    np.testing.assert_allclose(res.x, [2.0, 6.0], atol=1e-12)


def test_equality_and_duals():
    c = np.array([1.0, 2.0, 3.0])
    res = revised_simplex(c, A_eq=[[1, 1, 1]], b_eq=[1.0])
    assert res.objective == pytest.approx(1.0)
    assert res.duals_eq[0] == pytest.approx(1.0)


def test_infeasible():
    with pytest.raises(SolverError):
        revised_simplex([1.0], A_ub=[[1.0]], b_ub=[-1.0])


def test_unbounded():
    with pytest.raises(SolverError):
        revised_simplex([-1.0, 0.0], A_ub=[[0.0, 1.0]], b_ub=[1.0])


def test_iteration_cap_keeps_incumbent():
    g = np.random.default_rng(0)
    A = g.uniform(0, 1, size=(20, 20))
    with pytest.raises(SolverError) as info:
        revised_simplex(-np.ones(20), A, np.ones(20), max_iter=1)
    assert info.value.incumbent is not None


def test_degenerate_cycling_example():
    # Beale's classic cycling instance under plain Dantzig pricing
    c = np.array([-0.75, 150.0, -0.02, 6.0])
    A = np.array([[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]])
    b = np.array([0.0, 0.0, 1.0])
    res = revised_simplex(c, A, b)
    assert res.objective == pytest.approx(highs(c, A, b).fun, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 8))
def test_matches_highs_on_random_bounded_programs(seed, n, m):
    g = np.random.default_rng(seed)
    c = g.normal(size=n)
    A = g.uniform(-1, 1, size=(m, n))
    b = g.uniform(0, 2, size=m)
    A_eq, b_eq = np.ones((1, n)), np.array([1.0])   # simplex keeps it bounded
    ref = highs(c, A, b, A_eq, b_eq)
    if ref.status != 0:
        with pytest.raises(SolverError):
            revised_simplex(c, A, b, A_eq, b_eq)
        return
    res = revised_simplex(c, A, b, A_eq, b_eq)
    assert res.objective == pytest.approx(ref.fun, abs=1e-9)
    assert np.all(A @ res.x <= b + 1e-9)
