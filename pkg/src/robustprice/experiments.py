"""Convergence study, random market generator and the seeded property suite."""
from dataclasses import dataclass, field
import json
import math
import os

import numpy as np

from .arbitrage import check_na
from .market import Claim, Market, PriorSet, ScenarioTree, build_market, market_to_dict, read_market
from .robust import (CaraExactSolver, BruteOracle, indifference_price, risk_measure_harness,
                     _seller_price)
from .superhedge import UnboundedError, dual_price, superreplication_price
from .utility import (CARA, audit_assumption_u1, audit_assumption_un, certainty_equivalent_robust,
                      read_utility)

CSV_VERSION = "robustprice-csv v1"


class PreconditionError(ValueError):
    pass


def data_path(name):
    """Path of a bundled data file (``binomial.json`` ...)."""
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", name)


def resolve(path):
    """Accept a filesystem path or the name of a bundled data file."""
    if os.path.exists(path):
        return path
    for cand in (path, path + ".json"):
        p = data_path(cand)
        if os.path.exists(p):
            return p
    return path


@dataclass
class ExperimentConfig:
    market: str = "trinomial2.json"
    utility: str = "cara_geometric.json"
    x0: float = 1.0
    n_range: tuple | None = None          # defaults to the utility file's range
    solver: str = "cara"
    tol: float = 1e-2
    price_tol: float = 1e-12
    csv: str | None = None
    svg: str | None = None
    seed: int = 42
    n_markets: int = 200
    periods: int = 2
    waive_audits: bool = False
    counterexample_dir: str | None = None
    mutation: str | None = None

    def __post_init__(self):
        if self.x0 <= 0:
            raise ValueError("x0 must be positive")
        if self.n_range is not None and self.n_range[0] > self.n_range[1]:
            raise ValueError("empty index range")


@dataclass
class ConvergenceReport:
    rows: list                    # dicts: n, param, p, pB, rho, gap_p, gap_pB, gap_rho
    pi: float
    pi_sub: float
    rho: float
    final_gap: float
    audits: dict
    verdict: str
    warnings: list = field(default_factory=list)


def _fmt(v):
    return repr(float(v))


def run_convergence(config, market=None, family=None):
    market = read_market(resolve(config.market)) if market is None else market
    family = read_utility(resolve(config.utility)) if family is None else family
    if config.n_range is not None:
        family.n_range = tuple(config.n_range)
    na = check_na(market)
    if not na.holds:
        bad = na.failing()[0]
        raise PreconditionError(f"no-arbitrage fails at node {bad.node_id}: "
                                f"arbitrage direction {bad.arbitrage_direction.tolist()}")
    if market.claim is None:
        raise PreconditionError("market file carries no claim")
    G = market.claim.values
    k = market.charged_leaves
    if np.any(G[k] < 0):
        raise PreconditionError("claim must be nonnegative quasi-surely")
    if np.all(G[k] == 0):
        raise PreconditionError("claim is zero quasi-surely; convergence to the superhedging price "
                                "is only asserted for claims that are not q.s. zero")
    x0 = config.x0
    u1 = audit_assumption_u1(family, market, x0, normalize=not family.random)
    un = audit_assumption_un(family, market, M_list=[10.0, 100.0], x_list=[0.0, x0 / 2], x0=x0)
    audits = {"u1": u1.passes, "un": un.passes, "un_route3": un.route3}
    if not (u1.passes and un.passes) and not config.waive_audits:
        raise PreconditionError(f"utility audits failed (u1={u1.passes}, un={un.passes}); pass --waive-audits to override")
    pi = superreplication_price(market, G).price
    pi_sub = -superreplication_price(market, -G).price
    rho = -pi_sub
    rows, warnings = [], []
    for n in family.indices:
        U = family.member(n, market)
        res = indifference_price(market, U, G, x0, solver=config.solver, tol=config.price_tol)
        param = family.gamma(n) if family.kind == "cara" else n
        rho_n = -res.pB
        rows.append({"n": n, "param": param, "p": res.p, "pB": res.pB, "rho": rho_n,
                     "gap_p": pi - res.p, "gap_pB": res.pB - pi_sub, "gap_rho": rho_n - rho})
        if len(rows) > 1 and rows[-1]["p"] < rows[-2]["p"] - 10 * config.price_tol:
            warnings.append(f"p_n decreased at n={n}")
    final = rows[-1]["gap_p"]
    verdict = "converged" if abs(final) < config.tol else "not converged"
    report = ConvergenceReport(rows=rows, pi=pi, pi_sub=pi_sub, rho=rho, final_gap=final,
                               audits=audits, verdict=verdict, warnings=warnings)
    if config.csv:
        write_convergence_csv(report, config.csv)
    if config.svg:
        write_convergence_svg(report, config.svg)
    return report


CONVERGENCE_COLUMNS = ("n", "param", "p", "pB", "rho", "gap_p", "gap_pB", "gap_rho")


def convergence_csv_text(report):
    lines = [f"# {CSV_VERSION} convergence; pi={_fmt(report.pi)} pi_sub={_fmt(report.pi_sub)} rho={_fmt(report.rho)}",
             ",".join(CONVERGENCE_COLUMNS)]
    for r in report.rows:
        lines.append(",".join(str(r["n"]) if c == "n" else _fmt(r[c]) for c in CONVERGENCE_COLUMNS))
    return "\n".join(lines) + "\n"


def write_convergence_csv(report, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(convergence_csv_text(report))


def convergence_svg_text(report, width=640, height=400):
    """Log-scale line chart of the seller and buyer gaps against n."""
    pad = 50
    ns = [r["n"] for r in report.rows]
    series = {"pi - p_n": [abs(r["gap_p"]) for r in report.rows],
              "p^B_n - pi_sub": [abs(r["gap_pB"]) for r in report.rows]}
    pos = [v for s in series.values() for v in s if v > 0]
    lo = math.floor(math.log10(min(pos))) if pos else -12
    hi = math.ceil(math.log10(max(pos))) if pos else 0
    hi = max(hi, lo + 1)
    n0, n1 = min(ns), max(max(ns), min(ns) + 1)

    def px(n):
        return pad + (width - 2 * pad) * (n - n0) / (n1 - n0)

    def py(v):
        lv = math.log10(v) if v > 0 else lo
        return height - pad - (height - 2 * pad) * (lv - lo) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    for e in range(lo, hi + 1):
        y = py(10.0 ** e)
        out.append(f'<text x="{pad - 6}" y="{y:.2f}" font-size="10" text-anchor="end">1e{e}</text>')
        out.append(f'<line x1="{pad}" y1="{y:.2f}" x2="{width - pad}" y2="{y:.2f}" stroke="#ddd"/>')
    for n in ns:
        out.append(f'<text x="{px(n):.2f}" y="{height - pad + 14}" font-size="10" text-anchor="middle">{n}</text>')
    colours = ["#1f77b4", "#d62728"]
    for (label, vals), col, k in zip(series.items(), colours, range(2)):
        pts = " ".join(f"{px(n):.2f},{py(v):.2f}" for n, v in zip(ns, vals))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * k}" font-size="11" fill="{col}" '
                   f'text-anchor="end">{label}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 10}" font-size="11" text-anchor="middle">n</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_convergence_svg(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(convergence_svg_text(report))


# ---------------------------------------------------------------------------
# random markets

def random_na_market(rng, T=2, d=1, max_children=3, max_extremes=2, zero_prob=0.15, claim="random"):
    """A random market satisfying NA on its charged set.

    Increments at each node have 0 in the relative interior of their convex
    hull (the last one balances a positive combination of the others), so
    every child with positive mass keeps NA.
    """
    for _ in range(100):
        prices, priors = {(): 1.0 + 0.2 * rng.random(d)}, {}
        frontier = [()]
        for t in range(T):
            nxt = []
            for path in frontier:
                m = int(rng.integers(2, max_children + 1))
                S = prices[path]
                inc = rng.normal(scale=0.25, size=(m - 1, d))
                lam = rng.uniform(0.2, 1.0, size=m - 1)
                inc = np.vstack([inc, -(lam @ inc) / rng.uniform(0.2, 1.0)])
                for j in range(m):
                    prices[path + (j,)] = S + inc[j]
                    nxt.append(path + (j,))
                K = int(rng.integers(1, max_extremes + 1))
                vecs = rng.dirichlet(np.ones(m), size=K)
                if m > 2 and rng.random() < zero_prob:
                    vecs[:, int(rng.integers(m))] = 0.0   # an uncharged child
                    vecs /= vecs.sum(axis=1, keepdims=True)
                vecs = vecs / vecs.sum(axis=1, keepdims=True)
                priors[path] = [v.tolist() for v in vecs]
            frontier = nxt
        leaves = frontier
        if claim == "random":
            G = {p: float(rng.uniform(0, 1)) for p in leaves}
        else:
            G = {p: float(max(np.asarray(prices[p])[0] - prices[()][0], 0.0)) for p in leaves}
        try:
            market = build_market(prices, priors, claim=G, name="random")
        except ValueError:
            continue
        if check_na(market).holds:
            return market
    raise RuntimeError("could not draw an NA market")


def random_claims(rng, market, count=2, low=0.0, high=1.0):
    n = len(market.tree.leaves)
    return [rng.uniform(low, high, size=n) for _ in range(count)]


# ---------------------------------------------------------------------------
# property suite

def _drop_constraint(market):
    """Mutant: the root forgets its charged child with the largest claim-relevant price."""
    tree = market.tree
    kids = market.kernel(0)[0]
    if len(kids) <= 2:
        return market
    drop = int(kids[np.argmax(tree.prices[kids, 0])])
    ext = dict(market.priors.extremes)
    pos = list(tree.children[0]).index(drop)
    e = ext[0].copy()
    e[:, pos] = 0.0
    e = e / e.sum(axis=1, keepdims=True)
    ext[0] = e
    return Market(tree, PriorSet(ext), market.claim, market.name)


MUTATIONS = {"drop-charged-constraint": _drop_constraint}


def minimize_claim(fails, G):
    """Greedy shrink of a failing claim: zero leaves, then round values, while ``fails`` holds."""
    G = np.asarray(G, float).copy()
    for k in range(len(G)):
        if G[k] != 0.0:
            trial = G.copy()
            trial[k] = 0.0
            if fails(trial):
                G = trial
    for digits in (0, 1, 2, 3):
        trial = np.round(G, digits)
        if fails(trial):
            return trial
    return G


def _write_counterexample(directory, prop, idx, market, extra):
    if directory is None:
        return None
    os.makedirs(directory, exist_ok=True)
    data = market_to_dict(market)
    path = os.path.join(directory, f"{prop}-{idx:04d}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"property": prop, "market": data, "details": extra}, fh, indent=1, sort_keys=True)
    return path


def run_property_suite(config):
    """Seeded random checks; returns (report_text, n_violations)."""
    rng = np.random.default_rng(config.seed)
    mutate = MUTATIONS.get(config.mutation) if config.mutation else None
    counts = {name: [0, 0] for name in ("duality-gap", "risk-axioms", "sandwich", "pratt", "solver-agreement")}
    failures = []

    def record(name, ok, idx, market, detail):
        counts[name][0] += 1
        if not ok:
            counts[name][1] += 1
            path = _write_counterexample(config.counterexample_dir, name, idx, market, detail)
            failures.append(f"{name} market={idx} {detail}" + (f" file={os.path.basename(path)}" if path else ""))

    U1 = CARA(1.0)
    for idx in range(config.n_markets):
        market = random_na_market(rng, T=config.periods, d=1 + int(rng.integers(2)), max_children=3)
        G = market.claim.values
        primal_market = mutate(market) if mutate else market
        try:
            primal = superreplication_price(primal_market, G).price
        except UnboundedError:
            primal = -math.inf
        dual = dual_price(market, G).price
        gap = abs(primal - dual)
        ok = gap <= 1e-9 * (1 + abs(primal))
        if not ok and config.counterexample_dir is not None:
            def fails(g):
                try:
                    prim = superreplication_price(primal_market, g).price
                except UnboundedError:
                    return True
                return abs(prim - dual_price(market, g).price) > 1e-9 * (1 + abs(prim))
            small = minimize_claim(fails, G)
            bad_market = Market(market.tree, market.priors, Claim(small), market.name)
        else:
            bad_market = market
        record("duality-gap", ok, idx, bad_market, f"primal={_fmt(primal)} dual={_fmt(dual)}")
        pi = superreplication_price(market, G).price

        claims = [G, rng.uniform(-0.5, 1.0, size=len(G))]
        ax = risk_measure_harness(market, U1, 5.0, claims, solver="cara", tol=1e-8, rng=rng)
        record("risk-axioms", ax.ok, idx, market, f"violations={len(ax.violations)}")

        solver = CaraExactSolver(market, U1)
        for x in (0.5, 5.0):
            p, _, _, _ = _seller_price(solver, G, x, 1e-12, pi)
            record("sandwich", pi - x - 1e-8 <= p <= pi + 1e-8, idx, market, f"x={x} p={_fmt(p)} pi={_fmt(pi)}")

        gA, gB = sorted(rng.uniform(0.2, 3.0, size=2))[::-1]
        eA = certainty_equivalent_robust(CARA(gA), market, G).e
        eB = certainty_equivalent_robust(CARA(gB), market, G).e
        record("pratt", eA <= eB + 1e-9, idx, market, f"eA={_fmt(eA)} eB={_fmt(eB)}")

        if idx % 10 == 0 and market.tree.T <= 2:
            x = pi + 0.5
            a = CaraExactSolver(market, U1).solve(G, x).value
            b = BruteOracle(market, U1).solve(G, x).value
            record("solver-agreement", abs(a - b) <= 1e-6, idx, market, f"cara={_fmt(a)} oracle={_fmt(b)}")

    lines = [f"property suite seed={config.seed} markets={config.n_markets} periods={config.periods}"
             + (f" mutation={config.mutation}" if config.mutation else "")]
    for name, (n, bad) in counts.items():
        lines.append(f"{name}: {'PASS' if bad == 0 else 'FAIL'} {n - bad}/{n}")
    lines.extend(failures)
    total = sum(b for _, b in counts.values())
    lines.append(f"verdict: {'PASS' if total == 0 else 'FAIL'}")
    return "\n".join(lines) + "\n", total
