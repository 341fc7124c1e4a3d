import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from robustprice.arbitrage import alphas
from robustprice.experiments import random_na_market
from robustprice.market import robust_expectation, wealth
from robustprice.robust import (BruteOracle, CaraExactSolver, GridUnderresolved, WealthGridSolver,
                                buyer_price, indifference_price, project_strategy, random_admissible_strategy,
                                risk_measure_harness, robust_utility, wealth_bound_certificate, wealth_multipliers)
from robustprice.superhedge import superreplication_price
from robustprice.utility import CARA, CRRA, RandomCARA, uniform_coefficients, audit_assumption_u1, UtilityFamily


def test_value_below_superhedge_price_is_minus_infinity(trinomial):
    G = trinomial.claim.values
    for solver in ("cara", "oracle"):
        assert robust_utility(trinomial, CARA(1.0), G, 0.3, solver=solver).value == -math.inf
    assert robust_utility(trinomial, CRRA(0.5), G, 0.3, solver="grid").value == -math.inf


def test_zero_claim_beats_doing_nothing(trinomial2):
    U = CARA(2.0, anchor=1.0)
    res = robust_utility(trinomial2, U, np.zeros(9), 1.0, solver="cara")
    assert res.value >= robust_expectation(trinomial2, U.u(np.full(9, 1.0)), "min") - 1e-15


@pytest.mark.parametrize("gamma", [0.5, 1.0, 4.0])
def test_complete_binomial_prices_equal_replication_cost(binomial, gamma):
    res = indifference_price(binomial, CARA(gamma), binomial.claim, 1.0, tol=1e-12)
    assert res.p == pytest.approx(1 / 3, abs=1e-9)
    assert res.pB == pytest.approx(1 / 3, abs=1e-9)
    u0 = robust_utility(binomial, CARA(gamma), np.zeros(2), 1.0)
    uG = robust_utility(binomial, CARA(gamma), binomial.claim, 1.0 + 1 / 3)
    assert uG.value == pytest.approx(u0.value, rel=1e-12)


def test_incomplete_trinomial_price_is_strictly_below(trinomial):
    res = indifference_price(trinomial, CARA(1.0), trinomial.claim, 1.0, tol=1e-12)
    oracle = indifference_price(trinomial, CARA(1.0), trinomial.claim, 1.0, solver="oracle", tol=1e-9)
    assert res.p < 1 / 3 - 1e-3
    assert res.p == pytest.approx(oracle.p, abs=1e-6)
    assert all(res.checks.values())


def test_zero_claim_has_zero_price(trinomial2):
    res = indifference_price(trinomial2, CARA(1.0, anchor=1.0), np.zeros(9), 1.0, tol=1e-12)
    assert res.p == pytest.approx(0.0, abs=1e-10)
    assert res.pB == pytest.approx(0.0, abs=1e-10)


def test_constant_claim_buyer_price(binomial):
    assert buyer_price(binomial, CARA(1.0), np.full(2, 0.7), 1.0, tol=1e-12) == pytest.approx(0.7, abs=1e-9)


SHIPPED = ["binomial", "trinomial", "trinomial2", "two_asset"]


@pytest.mark.parametrize("name", SHIPPED)
@pytest.mark.parametrize("U", [CARA(1.0), CARA(3.0, anchor=1.0)])
def test_cara_solvers_agree(request, name, U):
    m = request.getfixturevalue(name)
    G = m.claim.values
    pi = superreplication_price(m, G).price
    for x in (pi, pi + 0.05, pi + 1.0):
        a = CaraExactSolver(m, U).solve(G, x).value
        b = BruteOracle(m, U).solve(G, x).value
        assert a == pytest.approx(b, abs=1e-6)
        if m.tree.d == 1:
            c = WealthGridSolver(m, U).solve(G, x).value
            assert c == pytest.approx(b, abs=1e-6)


@pytest.mark.parametrize("name", ["binomial", "trinomial", "trinomial2"])
def test_crra_grid_agrees_with_oracle(request, name):
    m = request.getfixturevalue(name)
    G = m.claim.values
    U = CRRA(0.5)
    x = superreplication_price(m, G).price + 0.3
    a = WealthGridSolver(m, U).solve(G, x).value
    b = BruteOracle(m, U).solve(G, x).value
    assert a == pytest.approx(b, abs=1e-6)


def test_random_coefficients_constrained_path(trinomial2):
    U = RandomCARA(uniform_coefficients(1.0, 2.0, 9), anchor=1.0)
    G = trinomial2.claim.values
    for x in (0.2, 1.0):
        a = CaraExactSolver(trinomial2, U).solve(G, x)
        b = BruteOracle(trinomial2, U).solve(G, x)
        assert a.value == pytest.approx(b.value, abs=1e-6)
        assert a.diagnostics["path"] == "floor-constrained"


def test_grid_refinement_cap(trinomial):
    solver = WealthGridSolver(trinomial, CRRA(0.5), n_grid=64, max_grid=64)
    with pytest.raises(GridUnderresolved):
        solver.solve(trinomial.claim.values, 1.0)


def test_grid_needs_finite_utility_at_zero(trinomial):
    class Log(CRRA):
        def _u(self, y, leaf):
            with np.errstate(divide="ignore"):
                return np.log(y)
    with pytest.raises(ValueError, match="finite U"):
        WealthGridSolver(trinomial, Log(0.5))


@given(seed=st.integers(0, 10_000), x=st.floats(0.05, 5.0))
def test_sandwich_bounds(seed, x):
    rng = np.random.default_rng(seed)
    m = random_na_market(rng, T=2, d=1 + seed % 2, max_children=3)
    res = indifference_price(m, CARA(1.0), m.claim, x, tol=1e-12)
    assert res.pi - x - 1e-8 <= res.p <= res.pi + 1e-8
    assert res.pB <= res.pi_sub + x + 1e-8


def test_risk_measures_on_binomial(binomial):
    G = binomial.claim.values
    rep = risk_measure_harness(binomial, CARA(1.0), 5.0, [G, np.array([0.3, -0.2])], solver="cara")
    assert rep.ok, rep.violations
    rho = lambda H: superreplication_price(binomial, -H).price
    assert rho(G + 2) == pytest.approx(rho(G) - 2, abs=1e-12)
    assert rho(np.zeros(2)) == 0.0


@given(seed=st.integers(0, 10_000))
def test_risk_axioms_random(seed):
    rng = np.random.default_rng(seed)
    m = random_na_market(rng, T=2, d=1, max_children=3)
    claims = [m.claim.values, rng.uniform(-0.5, 1.0, size=len(m.tree.leaves))]
    rep = risk_measure_harness(m, CARA(1.0), 5.0, claims, solver="cara", rng=rng)
    assert rep.ok, rep.violations


def test_wealth_bound_zero_strategy(binomial):
    cert = wealth_bound_certificate(binomial, np.zeros((3, 1)), 2.0)
    assert cert.ok
    np.testing.assert_allclose(cert.wealth, 2.0)


def test_multiplier_product_on_binomial(binomial):
    a = alphas(binomial)
    M = wealth_multipliers(binomial, a)
    assert M[0] == 1.0
    assert M[1] == pytest.approx(1 + 1 / a[0])
    assert M[2] == pytest.approx(1 + 0.5 / a[0])


def test_wealth_bound_with_constant_k(trinomial2):
    fam = UtilityFamily("cara", {"base": 2.0}, x0=1.0, n_range=(1, 10))
    u1 = audit_assumption_u1(fam, trinomial2, normalize=True)
    h = random_admissible_strategy(trinomial2, 1.0, np.random.default_rng(3))
    cert = wealth_bound_certificate(trinomial2, h, 1.0, u1_report=u1)
    assert cert.ok and cert.K_x > 0


@given(seed=st.integers(0, 10_000), x=st.floats(0.0, 10.0))
def test_wealth_bound_random_strategies(seed, x):
    rng = np.random.default_rng(seed)
    m = random_na_market(rng, T=2, d=2, max_children=3)
    h = random_admissible_strategy(m, x, rng, orthogonal_noise=1.0)
    cert = wealth_bound_certificate(m, h, x)
    assert cert.ok
    # projection removes only directions that do not move wealth on charged nodes
    v_raw = wealth(m.tree, h, x)
    charged = m.charged.node
    np.testing.assert_allclose(cert.wealth[charged], v_raw[charged], atol=1e-10 * (1 + x))
    p = project_strategy(m, h)
    np.testing.assert_allclose(project_strategy(m, p), p, atol=1e-12)
