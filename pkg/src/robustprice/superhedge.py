"""Quasi-sure super- and subreplication on finite multiple-priors trees.

The superhedging price is computed node by node: quasi-sure domination only
involves charged children, and pasting makes the constraint set decompose
over nodes. The martingale-measure LP gives an independent dual value.
"""
from dataclasses import dataclass
import itertools
import math

import numpy as np

from .lp import linprog, InfeasibleError, UnboundedError
from .market import Claim, wealth

__all__ = [
    "SuperhedgeResult", "SubhedgeResult", "DualResult",
    "superreplication_price", "subreplication_price", "dual_price",
    "whole_tree_price", "separation_certificate", "min_norm_point",
    "UnboundedError", "InfeasibleError",
]


@dataclass(frozen=True, eq=False)
class SuperhedgeResult:
    price: float
    strategy: np.ndarray      # (n_nodes, d); rows of leaves / uncharged nodes are zero
    node_values: np.ndarray   # -inf at uncharged nodes
    na_holds: bool = True
    dual_price: float | None = None
    dual_measure: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SubhedgeResult:
    price: float
    strategy: np.ndarray


@dataclass(frozen=True, eq=False)
class DualResult:
    price: float
    leaf_probabilities: np.ndarray   # per leaf, tree.leaves order
    node_probabilities: np.ndarray   # per node


def _claim_values(market, claim):
    if claim is None:
        claim = market.claim
    if claim is None:
        raise ValueError("no claim given and the market carries none")
    return claim.values if isinstance(claim, Claim) else np.asarray(claim, float)


def min_norm_point(w, b, tol=1e-9):
    """Minimum Euclidean-norm c with ``w @ c >= b`` (small dense problems).

    The projection of 0 onto a polyhedron is the least-norm solution of at
    most k linearly independent active constraints, so enumerating those
    subsets is exact.
    """
    w = np.atleast_2d(w)
    m, k = w.shape
    scale = tol * max(1.0, np.abs(b).max(), np.abs(w).max())
    best = None
    for size in range(0, k + 1):
        for rows in itertools.combinations(range(m), size):
            if size:
                ws = w[list(rows)]
                if np.linalg.matrix_rank(ws) < size:
                    continue
                c = np.linalg.lstsq(ws, b[list(rows)], rcond=None)[0]
            else:
                c = np.zeros(k)
            if np.all(w @ c >= b - scale):
                nrm = float(c @ c)
                if best is None or nrm < best[0] - 1e-300:
                    best = (nrm, c)
        if best is not None and size == 0:
            break
    if best is None:
        raise InfeasibleError("no feasible point for min-norm problem")
    return best[1]


def _node_constraints(market, node, values):
    """Charged children, their increments and continuation values."""
    kids, dS, _ = market.kernel(node)
    return kids, dS, values[kids]


def _node_superhedge(dS, targets, basis):
    """min v s.t. v + h.dS_j >= targets_j, h in span(basis); min-norm h."""
    w = dS @ basis
    k = w.shape[1]
    if k == 0:
        return float(targets.max()), np.zeros(dS.shape[1])
    m = len(targets)
    A_ub = -np.hstack([np.ones((m, 1)), w])
    res = linprog(np.r_[1.0, np.zeros(k)], A_ub, -targets, free=np.ones(k + 1, bool))
    v_star = res.x[0]
    c = min_norm_point(w, targets - v_star)
    v = float(np.max(targets - w @ c))
    return v, basis @ c


def superreplication_price(market, claim=None):
    """Minimal superhedging capital and strategy by backward induction.

    Raises:
        UnboundedError: when some node LP is unbounded (NA fails there).
    """
    G = _claim_values(market, claim)
    tree = market.tree
    values = np.full(tree.n_nodes, -np.inf)
    leaves = tree.leaves[market.charged_leaves]
    values[leaves] = G[market.charged_leaves]
    strategy = np.zeros((tree.n_nodes, tree.d))
    for node in market.charged_internal[::-1]:
        kids, dS, targets = _node_constraints(market, node, values)
        v, h = _node_superhedge(dS, targets, market.d_spaces[int(node)].basis)
        values[node] = v
        strategy[node] = h
    return SuperhedgeResult(price=float(values[0]), strategy=strategy, node_values=values,
                            na_holds=market.na_holds)


def subreplication_price(market, claim=None):
    """pi_sub(G) = -pi(-G), with the negated strategy (which stays below G)."""
    G = _claim_values(market, claim)
    res = superreplication_price(market, -G)
    return SubhedgeResult(price=-res.price, strategy=-res.strategy)


def whole_tree_price(market, claim=None):
    """Superhedging price as one LP over (x, all node holdings); a cross-check of the recursion."""
    G = _claim_values(market, claim)
    tree = market.tree
    nodes = [int(n) for n in market.charged_internal]
    col = {n: 1 + i * tree.d for i, n in enumerate(nodes)}
    nv = 1 + len(nodes) * tree.d
    rows, rhs = [], []
    for k in market.charged_leaves:
        leaf = tree.leaves[k]
        row = np.zeros(nv)
        row[0] = -1.0
        path = tree.path(leaf)
        for a, b in zip(path[:-1], path[1:]):
            row[col[a]:col[a] + tree.d] = -(tree.prices[b] - tree.prices[a])
        rows.append(row)
        rhs.append(-G[k])
    c = np.zeros(nv)
    c[0] = 1.0
    res = linprog(c, np.array(rows), np.array(rhs), free=np.ones(nv, bool))
    return float(res.x[0])


def dual_price(market, claim=None):
    """sup of E_P[G] over martingale measures supported on the charged set.

    Variables are the unconditional masses of charged non-root nodes:
    flow conservation plus sum_children m_c (S_c - S_n) = 0 at each charged
    internal node.

    Raises:
        InfeasibleError: no martingale measure lives on the charged support.
    """
    G = _claim_values(market, claim)
    tree = market.tree
    charged = [i for i in range(1, tree.n_nodes) if market.charged.node[i]]
    col = {n: j for j, n in enumerate(charged)}
    nv = len(charged)
    A_eq, b_eq = [], []
    for node in market.charged_internal:
        kids, dS, _ = market.kernel(node)
        row = np.zeros(nv)
        for c in kids:
            row[col[c]] = 1.0
        if node == 0:
            A_eq.append(row)
            b_eq.append(1.0)
        else:
            row[col[node]] = -1.0
            A_eq.append(row)
            b_eq.append(0.0)
        # martingale condition in D-coordinates; components orthogonal to D are rounding noise
        w = dS @ market.d_spaces[int(node)].basis
        for i in range(w.shape[1]):
            mrow = np.zeros(nv)
            for c, wc in zip(kids, w[:, i]):
                mrow[col[c]] = wc
            A_eq.append(mrow)
            b_eq.append(0.0)
    obj = np.zeros(nv)
    for k in market.charged_leaves:
        obj[col[tree.leaves[k]]] = -G[k]
    res = linprog(obj, A_eq=np.array(A_eq), b_eq=np.array(b_eq))
    mass = np.zeros(tree.n_nodes)
    mass[0] = 1.0
    for n, j in col.items():
        mass[n] = res.x[j]
    return DualResult(price=-res.fun, leaf_probabilities=mass[tree.leaves], node_probabilities=mass)


def superhedge_with_dual(market, claim=None):
    res = superreplication_price(market, claim)
    dual = dual_price(market, claim)
    return SuperhedgeResult(price=res.price, strategy=res.strategy, node_values=res.node_values,
                            na_holds=res.na_holds, dual_price=dual.price,
                            dual_measure=dual.leaf_probabilities)


# ---------------------------------------------------------------------------
# separation certificate for claims outside C_z

MAX_SEP_PERIODS = 3
MAX_SEP_CHILDREN = 4


def _one_step_threshold(dS, b):
    """Least v with some h making v + h.dS_j >= b_j for all j (-inf if unbounded)."""
    keep = np.isfinite(b)
    if not keep.any():
        return -math.inf
    w, t = dS[keep], b[keep]
    m, d = w.shape
    A_ub = -np.hstack([np.ones((m, 1)), w])
    try:
        res = linprog(np.r_[1.0, np.zeros(d)], A_ub, -t, free=np.ones(d + 1, bool))
    except UnboundedError:
        return -math.inf
    return float(res.x[0])


def _compress(pieces):
    """Sort (threshold, value) pairs and keep the running minimum as a step function."""
    pieces.sort(key=lambda p: (p[0], p[1]))
    out = []
    for thr, val in pieces:
        if not out or val < out[-1][1] - 1e-15:
            out.append((thr, val))
    return out


def _miss_functions(market, G, eps):
    """Per node, v -> inf_phi sup_P P(V_T < G - eps | wealth v at node) as a step function.

    Each function is nonincreasing in wealth; it is stored as a list of
    (threshold, value) with value(v) taken from the last threshold <= v.
    """
    tree = market.tree
    f = {}
    for k, leaf in enumerate(tree.leaves):
        f[int(leaf)] = [(-math.inf, 1.0), (float(G[k] - eps), 0.0)]
    for node in market.charged_internal[::-1]:
        kids, dS, ext = market.kernel(node)
        funcs = [f[int(c)] for c in kids]
        pieces = []
        for combo in itertools.product(*[range(len(fn)) for fn in funcs]):
            b = np.array([funcs[j][i][0] for j, i in enumerate(combo)])
            vals = np.array([funcs[j][i][1] for j, i in enumerate(combo)])
            pieces.append((_one_step_threshold(dS, b), float((ext @ vals).max())))
        f[int(node)] = _compress(pieces)
    return f


def _evaluate_step(fn, v):
    out = math.inf
    for thr, val in fn:
        if thr <= v:
            out = val
        else:
            break
    return out


def miss_probability(market, claim, z, eps):
    """inf over all strategies of sup over priors of P(V_T^{z,phi} < G - eps), exactly."""
    G = _claim_values(market, claim)
    return _evaluate_step(_miss_functions(market, G, eps)[0], z)


def separation_certificate(market, claim, z, eps_resolution=20):
    """Either ``"member"`` (G in C_z) or the largest dyadic eps with
    inf_phi sup_P P(V_T^{z,phi} < G - eps) > eps.

    The inner infimum is exact over all strategies (value functions are step
    functions whose breakpoints are one-step superhedging thresholds), so the
    dyadic eps is a lower bound of the supremal separating eps.
    """
    tree = market.tree
    if tree.T > MAX_SEP_PERIODS or max(len(c) for c in tree.children) > MAX_SEP_CHILDREN:
        raise ValueError(f"separation_certificate is limited to <= {MAX_SEP_PERIODS} periods "
                         f"and <= {MAX_SEP_CHILDREN} children per node")
    G = _claim_values(market, claim)
    pi = superreplication_price(market, G).price
    if pi <= z + 1e-12 * (1 + abs(z)):
        return "member"
    steps = 2 ** eps_resolution
    lo, hi = 0, steps
    while hi - lo > 1:
        mid = (lo + hi) // 2
        eps = mid / steps
        if miss_probability(market, G, z, eps) > eps:
            lo = mid
        else:
            hi = mid
    return lo / steps


def dominates(market, claim, x, strategy, tol=1e-9):
    """True when V_T^{x, strategy} >= G on every charged leaf."""
    G = _claim_values(market, claim)
    v = wealth(market.tree, strategy, x)[market.tree.leaves]
    k = market.charged_leaves
    return bool(np.all(v[k] >= G[k] - tol * (1 + np.abs(G[k]))))
