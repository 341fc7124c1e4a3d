"""Robust superhedging and utility indifference pricing on finite multiple-priors trees."""
from .market import (Claim, Market, PriorSet, ScenarioTree, build_market, load_market, read_market,
                     dump_market, robust_expectation)
from .arbitrage import check_na, compute_D, compute_alpha
from .superhedge import (dual_price, separation_certificate, subreplication_price, superreplication_price,
                         whole_tree_price)
from .utility import (CARA, CRRA, CustomTable, RandomCARA, Shifted, UtilityFamily,
                      certainty_equivalent_mono, certainty_equivalent_robust, read_utility)
from .robust import (BruteOracle, CaraExactSolver, WealthGridSolver, buyer_price, indifference_price,
                     risk_measure_harness, robust_utility, wealth_bound_certificate)
from .experiments import ExperimentConfig, run_convergence, run_property_suite

__version__ = "0.1.0"
