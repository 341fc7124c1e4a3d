import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog as highs

from robustprice.lp import InfeasibleError, UnboundedError, linprog


def test_textbook_instance():
    # max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  ->  x = 2, y = 6, value 36
    res = linprog([-3, -5], [[1, 0], [0, 2], [3, 2]], [4, 12, 18])
    assert res.fun == pytest.approx(-36, abs=1e-12)
    np.testing.assert_allclose(res.x, [2, 6], atol=1e-12)


def test_equalities_and_free_variables():
    res = linprog([1, 1], A_eq=[[1, -1]], b_eq=[3], A_ub=[[-1, 0], [0, -1]], b_ub=[0, 5], free=[True, True])
    # x - y = 3, x >= 0, y >= -5: min x + y at y = -3, x = 0
    assert res.fun == pytest.approx(-3, abs=1e-12)


def test_infeasible():
    with pytest.raises(InfeasibleError):
        linprog([1], [[1], [-1]], [1, -2])


def test_unbounded():
    with pytest.raises(UnboundedError):
        linprog([-1, 0], [[-1, 1]], [1])


@given(seed=st.integers(0, 10_000), m=st.integers(1, 6), n=st.integers(1, 5))
def test_matches_highs_on_random_feasible_programs(seed, m, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0, 1, size=n)
    b = A @ x0 + rng.uniform(0.1, 1, size=m)
    c = rng.normal(size=n)
    # box keeps the program bounded
    A_full = np.vstack([A, np.eye(n)])
    b_full = np.r_[b, np.full(n, 3.0)]
    ours = linprog(c, A_full, b_full)
    ref = highs(c, A_ub=A_full, b_ub=b_full, bounds=[(0, None)] * n, method="highs")
    assert ours.fun == pytest.approx(ref.fun, abs=1e-8 * (1 + abs(ref.fun)))
    assert np.all(A_full @ ours.x <= b_full + 1e-9)
    assert np.all(ours.x >= -1e-12)
