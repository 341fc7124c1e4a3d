import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from robustprice.minimax import LSEPieces, minimize_max, minimize_max_1d


def _bounded_instance(rng, K, m, d):
    # rows +-e_i make every piece coercive
    W = np.vstack([rng.normal(size=(m, d)), np.eye(d), -np.eye(d)])
    a = 3 * rng.normal(size=(K, m + 2 * d))
    return LSEPieces(a, W)


def _reference(P, y0):
    d = P.dim
    cons = [{"type": "ineq", "fun": lambda z: z[-1] - P.value(z[:-1])}]
    res = minimize(lambda z: z[-1], np.r_[y0, P.value(y0).max() + 1], constraints=cons, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 500})
    return res.fun


def test_single_piece_closed_form():
    # log(e^{-y} + e^{y}) is minimised at 0 with value log 2
    P = LSEPieces([[0.0, 0.0]], [[1.0], [-1.0]])
    assert minimize_max_1d(P).value == pytest.approx(np.log(2), abs=1e-13)
    assert minimize_max(P).value == pytest.approx(np.log(2), abs=1e-10)


def test_derivatives_match_finite_differences(rng):
    P = _bounded_instance(rng, 3, 4, 2)
    y = rng.normal(size=2)
    vals, grads, hess = P.derivatives(y)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (P.value(y + e) - P.value(y - e)) / (2 * h)
        np.testing.assert_allclose(grads[:, i], fd, atol=1e-7)
        gp = P.derivatives(y + e)[1]
        gm = P.derivatives(y - e)[1]
        np.testing.assert_allclose(hess[:, :, i], (gp - gm) / (2 * h), atol=1e-6)


@given(seed=st.integers(0, 10_000), K=st.integers(1, 4), m=st.integers(1, 5), d=st.integers(1, 3))
def test_barrier_matches_reference(seed, K, m, d):
    rng = np.random.default_rng(seed)
    P = _bounded_instance(rng, K, m, d)
    ours = minimize_max(P)
    ref = min(_reference(P, np.zeros(d)), _reference(P, ours.y))
    assert ours.value <= ref + 1e-9 * (1 + abs(ref))
    assert ours.value >= ref - 1e-6 * (1 + abs(ref))   # the reference is the less accurate one


@given(seed=st.integers(0, 10_000), K=st.integers(1, 4), m=st.integers(1, 5))
def test_bisection_and_barrier_agree_in_one_dimension(seed, K, m):
    rng = np.random.default_rng(seed)
    P = _bounded_instance(rng, K, m, 1)
    assert minimize_max_1d(P).value == pytest.approx(minimize_max(P).value, abs=1e-9)


def test_linear_constraints_are_respected(rng):
    P = _bounded_instance(rng, 2, 3, 2)
    free = minimize_max(P)
    # cut the free optimum off with a half-plane through a point strictly inside
    A = free.y[None, :] / np.linalg.norm(free.y)
    b = 0.5 * (A @ free.y)
    res = minimize_max(P, y0=np.zeros(2), A_ub=A, b_ub=b)
    assert (A @ res.y)[0] <= b[0] + 1e-12
    assert res.value >= free.value - 1e-12


def test_infeasible_start_is_rejected():
    P = LSEPieces([[0.0, 0.0]], [[1.0], [-1.0]])
    with pytest.raises(ValueError, match="strictly feasible"):
        minimize_max(P, y0=np.array([1.0]), A_ub=[[1.0]], b_ub=[1.0])
