import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from robustprice.arbitrage import check_na, compute_alpha, compute_D, one_step_arbitrage, sphere_directions
from robustprice.experiments import random_na_market

from conftest import one_period


def test_binomial_has_no_arbitrage(binomial):
    report = check_na(binomial)
    assert report.holds and binomial.na_holds
    np.testing.assert_allclose(np.abs(report.nodes[0].D_basis), [[1.0]])


def test_all_gains_is_an_arbitrage():
    m = one_period([2.0, 1.5], [[0.5, 0.5]])
    report = check_na(m)
    assert not report.holds
    np.testing.assert_allclose(report.failing()[0].arbitrage_direction, [1.0])


def test_zero_increments_are_not_an_arbitrage():
    m = one_period([1.0, 1.0], [[0.5, 0.5]])
    assert check_na(m).holds
    assert compute_D(m, 0).basis.shape == (1, 0)
    alpha, note = compute_alpha(m, 0)
    assert math.isinf(alpha) and "not applicable" in note


def test_rank_one_span_in_two_dimensions():
    m = one_period([[2.0, 1.0], [0.0, 1.0]], [[0.5, 0.5]], s0=[1.0, 1.0])
    basis = compute_D(m, 0).basis
    assert basis.shape == (2, 1)
    np.testing.assert_allclose(np.abs(basis[:, 0]), [1.0, 0.0], atol=1e-15)


def test_uncharged_child_is_ignored():
    # the only losing outcome is polar, so buying is an arbitrage quasi-surely
    m = one_period([2.0, 1.5, 0.5], [[0.5, 0.5, 0.0]])
    assert not check_na(m).holds


@pytest.mark.parametrize("up, down", [(2.0, 0.5), (2.0, 0.0)])
def test_alpha_binomial(up, down):
    # P(h dS < -alpha) > alpha with prob 1/2 on the losing side; sup is 1/2 when
    # the smaller loss exceeds 1/2, otherwise the loss size binds
    m = one_period([up, down], [[0.5, 0.5]])
    alpha, _ = compute_alpha(m, 0, grid_resolution=20)
    assert alpha == pytest.approx(0.5, abs=2 ** -19)
    assert alpha < 0.5


def test_alpha_loss_size_binds():
    m = one_period([1.25, 0.8], [[0.5, 0.5]])
    alpha, _ = compute_alpha(m, 0, grid_resolution=20)
    assert alpha == pytest.approx(0.2, abs=2 ** -19)


@pytest.mark.parametrize("n", [8, 64, 256])
def test_sphere_covering_radius(n):
    dirs, radius = sphere_directions(2, n)
    probe = np.random.default_rng(0).normal(size=(500, 2))
    probe /= np.linalg.norm(probe, axis=1, keepdims=True)
    dist = np.min(np.linalg.norm(probe[:, None] - dirs[None], axis=2), axis=1)
    assert dist.max() <= radius + 1e-12


@given(seed=st.integers(0, 5000))
def test_generated_markets_pass_and_alpha_is_certified(seed):
    rng = np.random.default_rng(seed)
    m = random_na_market(rng, T=1, d=2, max_children=4)
    assert check_na(m).holds
    alpha, _ = compute_alpha(m, 0, grid_resolution=12)
    _, dS, ext = m.kernel(0)
    basis = m.d_spaces[0].basis
    # check the quantitative condition on fresh directions inside D
    for _ in range(50):
        h = basis @ rng.normal(size=basis.shape[1])
        h /= np.linalg.norm(h)
        loss = (dS @ h < -alpha).astype(float)
        assert (ext @ loss).max() > alpha


@given(seed=st.integers(0, 5000), d=st.integers(1, 3))
def test_arbitrage_direction_is_genuine(seed, d):
    rng = np.random.default_rng(seed)
    dS = rng.normal(size=(3, d)) + 0.3
    h = one_step_arbitrage(dS)
    if h is not None:
        gains = dS @ h
        assert gains.min() >= -1e-10 and gains.max() > 0
