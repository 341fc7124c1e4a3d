import numpy as np
import pytest
from hypothesis import given, strategies as st

from robustprice.experiments import random_na_market
from robustprice.lp import UnboundedError
from robustprice.superhedge import (dominates, dual_price, miss_probability, separation_certificate,
                                    subreplication_price, superreplication_price, whole_tree_price)

from conftest import one_period


def test_binomial_call(binomial):
    res = superreplication_price(binomial)
    assert res.price == pytest.approx(1 / 3, abs=1e-12)
    assert res.strategy[0, 0] == pytest.approx(2 / 3, abs=1e-12)
    assert subreplication_price(binomial).price == pytest.approx(1 / 3, abs=1e-12)
    dual = dual_price(binomial)
    assert dual.price == pytest.approx(1 / 3, abs=1e-12)
    np.testing.assert_allclose(dual.leaf_probabilities, [1 / 3, 2 / 3], atol=1e-12)


def test_trinomial_call(trinomial):
    res = superreplication_price(trinomial)
    assert res.price == pytest.approx(1 / 3, abs=1e-12)
    assert res.strategy[0, 0] == pytest.approx(2 / 3, abs=1e-12)
    assert subreplication_price(trinomial).price == pytest.approx(0.0, abs=1e-12)
    dual = dual_price(trinomial)
    assert dual.price == pytest.approx(1 / 3, abs=1e-12)
    # mass on the middle state carries no payoff and no drift, so it is not needed
    np.testing.assert_allclose(dual.leaf_probabilities, [1 / 3, 0.0, 2 / 3], atol=1e-12)


def test_trinomial2_price(trinomial2):
    # one-step martingale extremes are (4/9, 0, 5/9) and (0, 1, 0); node values
    # u: max(4/9 * 0.5625, 0.25) = 1/4, m: max(4/9 * 0.25, 0) = 1/9, d: 0, root: 1/9
    res = superreplication_price(trinomial2)
    assert res.price == pytest.approx(1 / 9, abs=1e-12)
    assert whole_tree_price(trinomial2) == pytest.approx(1 / 9, abs=1e-10)
    assert subreplication_price(trinomial2).price == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("c", [-1.5, 0.0, 2.0])
def test_constant_claim(binomial, c):
    G = np.full(2, c)
    res = superreplication_price(binomial, G)
    assert res.price == pytest.approx(c, abs=1e-12)
    np.testing.assert_allclose(res.strategy, 0.0, atol=1e-12)
    assert subreplication_price(binomial, G).price == pytest.approx(c, abs=1e-12)
    assert dual_price(binomial, G).price == pytest.approx(c, abs=1e-12)


def test_arbitrage_makes_the_primal_unbounded():
    m = one_period([2.0, 1.5], [[0.5, 0.5]], claim=[1.0, 0.5])
    with pytest.raises(UnboundedError):
        superreplication_price(m)


def test_uncharged_leaf_does_not_constrain():
    m = one_period([2.0, 1.0, 0.5], [[0.5, 0.0, 0.5]], claim=[1.0, 100.0, 0.0])
    assert superreplication_price(m).price == pytest.approx(1 / 3, abs=1e-12)


@given(seed=st.integers(0, 100_000), T=st.integers(1, 3), d=st.integers(1, 2), kids=st.integers(2, 4))
def test_duality_on_random_markets(seed, T, d, kids):
    rng = np.random.default_rng(seed)
    m = random_na_market(rng, T=T, d=d, max_children=kids)
    res = superreplication_price(m)
    assert abs(res.price - dual_price(m).price) <= 1e-9 * (1 + abs(res.price))
    assert dominates(m, m.claim, res.price, res.strategy)
    assert res.price >= subreplication_price(m).price - 1e-10


@given(seed=st.integers(0, 100_000))
def test_recursion_matches_whole_tree_lp(seed):
    rng = np.random.default_rng(seed)
    m = random_na_market(rng, T=2, d=2, max_children=3)
    assert superreplication_price(m).price == pytest.approx(whole_tree_price(m), abs=1e-8)


@given(seed=st.integers(0, 100_000), shift=st.floats(-3, 3), scale=st.floats(0.1, 5))
def test_price_is_cash_invariant_and_positively_homogeneous(seed, shift, scale):
    rng = np.random.default_rng(seed)
    m = random_na_market(rng, T=2, d=1, max_children=3)
    G = m.claim.values
    pi = superreplication_price(m, G).price
    assert superreplication_price(m, G + shift).price == pytest.approx(pi + shift, abs=1e-9)
    assert superreplication_price(m, scale * G).price == pytest.approx(scale * pi, abs=1e-9)


def test_separation_binomial(binomial):
    # both misses avoidable iff 0.8 - eps <= 0.4 + 2 eps, i.e. eps >= 2/15
    eps = separation_certificate(binomial, binomial.claim, 0.2)
    assert eps == pytest.approx(2 / 15, abs=2 ** -19)
    assert eps <= 2 / 15
    assert miss_probability(binomial, binomial.claim, 0.2, 0.1) == pytest.approx(0.5)
    assert miss_probability(binomial, binomial.claim, 0.2, 0.14) == 0.0


def test_separation_members(binomial):
    assert separation_certificate(binomial, binomial.claim, 1 / 3 + 1e-9) == "member"
    assert separation_certificate(binomial, np.zeros(2), 0.0) == "member"


def test_separation_scope(trinomial2):
    m = random_na_market(np.random.default_rng(0), T=1, d=1, max_children=3)
    assert separation_certificate(m, m.claim, -10.0) > 0
    big = random_na_market(np.random.default_rng(1), T=4, d=1, max_children=2)
    with pytest.raises(ValueError, match="limited"):
        separation_certificate(big, big.claim, 0.0)
