import numpy as np
import pytest
from hypothesis import settings

from robustprice.experiments import resolve
from robustprice.market import build_market, read_market

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def binomial():
    return read_market(resolve("binomial.json"))


@pytest.fixture(scope="session")
def trinomial():
    return read_market(resolve("trinomial1.json"))


@pytest.fixture(scope="session")
def trinomial2():
    return read_market(resolve("trinomial2.json"))


@pytest.fixture(scope="session")
def two_asset():
    return read_market(resolve("two_asset.json"))


def one_period(prices, priors, claim=None, s0=1.0):
    """One-period market from child prices and a list of extreme priors."""
    paths = {(): s0}
    for j, p in enumerate(prices):
        paths[(j,)] = p
    G = None if claim is None else {(j,): float(c) for j, c in enumerate(claim)}
    return build_market(paths, {(): priors}, claim=G)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
