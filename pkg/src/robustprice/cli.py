"""Command-line front end: ``robustprice <subcommand> ...``.

Exit codes: 0 success, 1 precondition failure, 2 property violation,
3 I/O or parse error.
"""
import argparse
import json
import math
import sys

import numpy as np

from .arbitrage import check_na
from .experiments import (CSV_VERSION, ExperimentConfig, PreconditionError, resolve, run_convergence,
                          run_property_suite, MUTATIONS)
from .market import MarketFormatError, iter_pastings, read_market
from .robust import InadmissibleError, GridUnderresolved, indifference_price, make_solver
from .superhedge import dual_price, subreplication_price, superreplication_price
from .utility import UtilityError, certainty_equivalent_mono, certainty_equivalent_robust, read_utility

EXIT_OK, EXIT_PRECONDITION, EXIT_PROPERTY, EXIT_IO = 0, 1, 2, 3
SOLVER_NAMES = {"cara": "cara", "grid": "grid", "oracle": "oracle", "auto": "auto"}


class InputError(Exception):
    """Unreadable or malformed input file."""


def _fmt(v):
    return repr(float(v))


def _load_market(path):
    try:
        return read_market(resolve(path))
    except (OSError, MarketFormatError, json.JSONDecodeError) as exc:
        raise InputError(f"market {path}: {exc}") from exc


def _load_family(path):
    try:
        return read_utility(resolve(path))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"utility {path}: {exc}") from exc
    except UtilityError as exc:
        raise InputError(f"utility {path}: {exc}") from exc


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def _claim(market):
    if market.claim is None:
        raise PreconditionError("market file carries no claim")
    return market.claim.values


# ---------------------------------------------------------------------------
# subcommands

def cmd_na_check(args):
    market = _load_market(args.market)
    report = check_na(market, alpha_grid=args.alpha_grid)
    for r in report.nodes:
        line = f"node {r.node_id}: NA {'holds' if r.na_holds else 'FAILS'} dim(D)={r.D_basis.shape[1]}"
        if r.arbitrage_direction is not None:
            line += f" arbitrage={np.round(r.arbitrage_direction, 12).tolist()}"
        if r.alpha is not None:
            line += f" alpha={r.alpha:.6g}"
        print(line)
    print(f"verdict: {'NA holds' if report.holds else 'NA fails'}")
    return EXIT_OK if report.holds else EXIT_PRECONDITION


def superhedge_csv_text(market, res):
    tree = market.tree
    cols = ["node_id", "t", "pi_t"] + [f"h{i + 1}" for i in range(tree.d)]
    lines = [f"# {CSV_VERSION} superhedge", ",".join(cols)]
    G = market.claim.values
    for n in range(tree.n_nodes):
        v = res.node_values[n]
        if not tree.children[n] and market.charged.node[n]:
            v = G[tree.leaf_position[n]]
        lines.append(",".join([str(tree.ids[n]), str(int(tree.time[n])), _fmt(v)]
                              + [_fmt(h) for h in res.strategy[n]]))
    return "\n".join(lines) + "\n"


def cmd_superhedge(args):
    market = _load_market(args.market)
    G = _claim(market)
    if not market.na_holds:
        print("no-arbitrage fails; run na-check for a certificate", file=sys.stderr)
        return EXIT_PRECONDITION
    res = superreplication_price(market, G)
    sub = subreplication_price(market, G)
    print(f"pi = {_fmt(res.price)}")
    print(f"pi_sub = {_fmt(sub.price)}")
    print(f"root strategy = {[float(h) for h in res.strategy[0]]}")
    if args.dual:
        dual = dual_price(market, G)
        print(f"dual = {_fmt(dual.price)}")
        probs = {str(market.tree.ids[leaf]): float(q) for leaf, q in
                 zip(market.tree.leaves, dual.leaf_probabilities)}
        print(f"martingale measure = {json.dumps(probs)}")
    if args.csv:
        _write(args.csv, superhedge_csv_text(market, res))
    return EXIT_OK


def cmd_ce(args):
    market = _load_market(args.market)
    family = _load_family(args.utility)
    G = _claim(market)
    n = family.n_range[0] if args.n is None else args.n
    U = family.member(n, market)
    if args.prior_index is not None:
        pastings = list(iter_pastings(market))
        if not 0 <= args.prior_index < len(pastings):
            raise PreconditionError(f"prior index must lie in [0, {len(pastings) - 1}]")
        P = pastings[args.prior_index]
        e = certainty_equivalent_mono(U, P, G)
        print(f"e(G, P_{args.prior_index}) = {_fmt(e)}")
        print(f"premium = {_fmt(float(P @ np.where(P > 0, G, 0.0)) - e)}")
        return EXIT_OK
    rep = certainty_equivalent_robust(U, market, G)
    print(f"e(G) = {_fmt(rep.e)}")
    print(f"premium = {_fmt(rep.premium)}")
    if rep.cross_check is not None:
        print(f"|e - min_P e(G, P)| = {rep.cross_check:.3g}")
    for note in rep.notes:
        print(f"note: {note}")
    return EXIT_OK


INDIFF_COLUMNS = ("n", "gamma_or_param", "u0", "uG", "p", "pB", "pi", "pi_sub", "gap")


def cmd_indiff(args):
    market = _load_market(args.market)
    family = _load_family(args.utility)
    G = _claim(market)
    if args.x <= 0:
        raise PreconditionError("initial capital x must be positive")
    indices = family.indices if args.n is None else [args.n]
    tol = 1e-10 if args.tol is None else args.tol
    lines = [f"# {CSV_VERSION} indiff x={_fmt(args.x)}", ",".join(INDIFF_COLUMNS)]
    for n in indices:
        U = family.member(n, market)
        res = indifference_price(market, U, G, args.x, solver=args.solver, tol=tol)
        solver = make_solver(market, U, args.solver)
        u0 = solver.solve(np.zeros_like(G), args.x).value
        uG = solver.solve(G, args.x + res.p).value if math.isfinite(res.p) else -math.inf
        param = family.gamma(n) if family.kind == "cara" else n
        row = [str(n), _fmt(param), _fmt(u0), _fmt(uG), _fmt(res.p), _fmt(res.pB), _fmt(res.pi),
               _fmt(res.pi_sub), _fmt(res.pi - res.p)]
        lines.append(",".join(row))
        print(f"n={n} p={res.p:.12g} pB={res.pB:.12g} pi={res.pi:.12g} gap={res.pi - res.p:.3e}")
    if args.csv:
        _write(args.csv, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_converge(args):
    config = ExperimentConfig(market=args.market, utility=args.utility, x0=args.x0,
                              n_range=tuple(args.n_range) if args.n_range else None,
                              solver=args.solver, tol=1e-2 if args.tol is None else args.tol,
                              csv=args.csv, svg=args.svg, waive_audits=args.waive_audits)
    market = _load_market(config.market)
    family = _load_family(config.utility)
    try:
        report = run_convergence(config, market, family)
    except OSError as exc:
        raise InputError(str(exc)) from exc
    print(f"pi = {_fmt(report.pi)}  pi_sub = {_fmt(report.pi_sub)}")
    for r in report.rows:
        print(f"n={r['n']:>3} p={r['p']:.12g} gap={r['gap_p']:.3e} buyer gap={r['gap_pB']:.3e}")
    for w in report.warnings:
        print(f"warning: {w}")
    print(f"audits: {report.audits}")
    print(f"verdict: {report.verdict}")
    return EXIT_OK if report.verdict == "converged" else EXIT_PROPERTY


def cmd_prop_suite(args):
    config = ExperimentConfig(seed=args.seed, n_markets=args.n_markets, periods=args.periods,
                              mutation=args.mutation, counterexample_dir=args.counterexample_dir)
    text, bad = run_property_suite(config)
    sys.stdout.write(text)
    if args.csv:
        _write(args.csv, text)
    return EXIT_OK if bad == 0 else EXIT_PROPERTY


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="robustprice",
                                     description="Robust superhedging and indifference pricing on scenario trees.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, market=True, utility=False):
        if market:
            p.add_argument("--market", required=True, help="market JSON file or bundled name")
        if utility:
            p.add_argument("--utility", required=True, help="utility JSON file or bundled name")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--csv", default=None, help="CSV output path")
        p.add_argument("--svg", default=None, help="SVG output path")

    p = sub.add_parser("na-check", help="per-node no-arbitrage report")
    common(p)
    p.add_argument("--alpha-grid", type=int, default=None, help="sphere grid resolution for alpha")
    p.set_defaults(func=cmd_na_check)

    p = sub.add_parser("superhedge", help="superhedging price and strategy")
    common(p)
    p.add_argument("--dual", action="store_true", help="also solve the martingale-measure LP")
    p.set_defaults(func=cmd_superhedge)

    p = sub.add_parser("ce", help="certainty equivalent of the market's claim")
    common(p, utility=True)
    p.add_argument("--n", type=int, default=None, help="utility index (default: first)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--prior-index", type=int, default=None, help="single extreme pasting")
    group.add_argument("--robust", action="store_true", help="multiple-priors certainty equivalent (default)")
    p.set_defaults(func=cmd_ce)

    p = sub.add_parser("indiff", help="utility indifference prices")
    common(p, utility=True)
    p.add_argument("--x", type=float, required=True, help="initial capital")
    p.add_argument("--n", type=int, default=None, help="utility index (default: whole range)")
    p.add_argument("--solver", choices=sorted(SOLVER_NAMES), default="auto")
    p.set_defaults(func=cmd_indiff)

    p = sub.add_parser("converge", help="convergence of p_n to the superhedging price")
    common(p, market=False)
    p.add_argument("--market", default="trinomial2.json")
    p.add_argument("--utility", default="cara_geometric.json")
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--n-range", type=int, nargs=2, default=None, metavar=("LO", "HI"))
    p.add_argument("--solver", choices=sorted(SOLVER_NAMES), default="cara")
    p.add_argument("--waive-audits", action="store_true")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("prop-suite", help="seeded randomized property checks")
    common(p, market=False)
    p.add_argument("--n-markets", type=int, default=200)
    p.add_argument("--periods", type=int, default=2)
    p.add_argument("--mutation", choices=sorted(MUTATIONS), default=None)
    p.add_argument("--counterexample-dir", default=None)
    p.set_defaults(func=cmd_prop_suite)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PreconditionError, InadmissibleError, GridUnderresolved, UtilityError, ValueError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
