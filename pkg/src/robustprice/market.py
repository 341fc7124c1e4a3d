"""Finite scenario-tree markets with non-dominated sets of one-step priors.

A market is an event tree carrying a d-dimensional price at every node, a
finite list of extreme one-step probability vectors at every non-leaf node
and (optionally) a payoff at every leaf. The full prior set is every pasting
of per-node kernels taken from the convex hulls of those extremes.

Node-indexed arrays use the *internal* order: nodes sorted by (time, id), so
the root is index 0 and parents always precede children. Leaf-indexed arrays
follow ``tree.leaves``.
"""
from dataclasses import dataclass, field
from functools import cached_property
import itertools
import json
import math

import numpy as np

PROB_TOL = 1e-12


class MarketFormatError(ValueError):
    """Malformed market file or violated model invariant."""


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    ids: tuple
    parent: np.ndarray
    time: np.ndarray
    children: tuple
    prices: np.ndarray

    @property
    def d(self):
        return self.prices.shape[1]

    @property
    def T(self):
        return int(self.time.max())

    @property
    def n_nodes(self):
        return len(self.ids)

    @cached_property
    def leaves(self):
        return np.array([i for i in range(self.n_nodes) if not self.children[i]], dtype=int)

    @cached_property
    def internal(self):
        return np.array([i for i in range(self.n_nodes) if self.children[i]], dtype=int)

    @cached_property
    def leaf_position(self):
        pos = np.full(self.n_nodes, -1)
        pos[self.leaves] = np.arange(len(self.leaves))
        return pos

    @cached_property
    def _index(self):
        return {nid: i for i, nid in enumerate(self.ids)}

    def index(self, node_id):
        return self._index[node_id]

    def delta(self, node):
        """Price increments to each child, shape (n_children, d)."""
        kids = list(self.children[node])
        return self.prices[kids] - self.prices[node]

    def path(self, node):
        out = [node]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def nodes_at(self, t):
        return np.flatnonzero(self.time == t)


@dataclass(frozen=True, eq=False)
class PriorSet:
    """Extreme one-step priors: node -> array (n_extremes, n_children)."""
    extremes: dict

    def at(self, node):
        return self.extremes[node]


@dataclass(frozen=True, eq=False)
class ChargedSet:
    node: np.ndarray   # bool per node
    edge: np.ndarray   # bool per node: is the edge (parent -> node) charged

    def children(self, tree, node):
        """Positions (within the child list) of charged children of ``node``."""
        kids = tree.children[node]
        return np.array([k for k, c in enumerate(kids) if self.edge[c]], dtype=int)


@dataclass(frozen=True, eq=False)
class Claim:
    values: np.ndarray  # per leaf, in tree.leaves order

    def __neg__(self):
        return Claim(-self.values)

    def __add__(self, other):
        if isinstance(other, Claim):
            return Claim(self.values + other.values)
        return Claim(self.values + float(other))

    def scale(self, a):
        return Claim(a * self.values)

    def nonnegative(self, charged_leaves):
        return bool(np.all(self.values[charged_leaves] >= 0))

    @classmethod
    def from_payoff(cls, tree, payoff):
        """Claim from a function of the terminal price vector."""
        return cls(np.array([float(payoff(tree.prices[leaf])) for leaf in tree.leaves]))

    @classmethod
    def constant(cls, tree, c):
        return cls(np.full(len(tree.leaves), float(c)))


def charged_set(tree, priors):
    edge = np.zeros(tree.n_nodes, bool)
    edge[0] = True
    for node in tree.internal:
        support = (priors.at(node) > 0).any(axis=0)
        for k, child in enumerate(tree.children[node]):
            edge[child] = bool(support[k])
    node = np.zeros(tree.n_nodes, bool)
    node[0] = True
    for i in range(1, tree.n_nodes):  # parents precede children
        node[i] = node[tree.parent[i]] and edge[i]
    return ChargedSet(node=node, edge=edge)


@dataclass(frozen=True, eq=False)
class Market:
    tree: ScenarioTree
    priors: PriorSet
    claim: Claim | None = None
    name: str = field(default="")

    @cached_property
    def charged(self):
        return charged_set(self.tree, self.priors)

    @cached_property
    def charged_leaves(self):
        """Leaf positions (into tree.leaves) that are charged."""
        return np.flatnonzero(self.charged.node[self.tree.leaves])

    @cached_property
    def charged_internal(self):
        return np.array([n for n in self.tree.internal if self.charged.node[n]], dtype=int)

    def kernel(self, node):
        """Charged child indices, their increments and the restricted extremes."""
        pos = self.charged.children(self.tree, node)
        kids = np.array(self.tree.children[node])[pos]
        return kids, self.tree.delta(node)[pos], self.priors.at(node)[:, pos]

    def with_claim(self, claim):
        return Market(self.tree, self.priors, claim, self.name)

    @cached_property
    def d_spaces(self):
        from .arbitrage import compute_D
        return {int(n): compute_D(self, n) for n in self.charged_internal}

    @property
    def d_bases(self):
        return {n: sp.basis for n, sp in self.d_spaces.items()}

    @property
    def na_holds(self):
        return all(sp.linear for sp in self.d_spaces.values())


# ---------------------------------------------------------------------------
# wealth and expectations

def wealth(tree, holdings, x):
    """Wealth at every node for holdings ``(n_nodes, d)`` (row = node the position is set at)."""
    holdings = np.asarray(holdings, float)
    v = np.empty(tree.n_nodes)
    v[0] = x
    for i in range(1, tree.n_nodes):
        p = tree.parent[i]
        v[i] = v[p] + holdings[p] @ (tree.prices[i] - tree.prices[p])
    return v


def terminal_wealth(tree, holdings, x):
    return wealth(tree, holdings, x)[tree.leaves]


def robust_expectation(market, leaf_values, sense="min", return_kernels=False):
    """inf (or sup) over all pasted priors of E_P[leaf_values], by backward recursion.

    Node-wise optimisation over extremes is exact: the set is rectangular and
    each one-step problem is linear in the kernel.
    """
    tree = market.tree
    pick = np.min if sense == "min" else np.max
    arg = np.argmin if sense == "min" else np.argmax
    val = np.full(tree.n_nodes, np.nan)
    val[tree.leaves] = np.asarray(leaf_values, float)
    choice = {}
    for node in tree.internal[::-1]:
        if not market.charged.node[node]:
            continue
        kids, _, ext = market.kernel(node)
        child_vals = val[kids]
        with np.errstate(invalid="ignore"):
            prod = np.where(ext > 0, ext * child_vals, 0.0)
            # -inf * p with p > 0 stays -inf
            prod = np.where((ext > 0) & np.isinf(child_vals), np.sign(child_vals) * np.inf, prod)
        sums = prod.sum(axis=1)
        k = int(arg(sums))
        val[node] = pick(sums)
        choice[int(node)] = k
    if return_kernels:
        return val, choice
    return val[0]


def pasting_measure(market, choice):
    """Leaf probabilities of the pasting that uses extreme ``choice[node]`` at each node."""
    tree = market.tree
    mass = np.zeros(tree.n_nodes)
    mass[0] = 1.0
    for node in tree.internal:
        if mass[node] == 0.0 or not market.charged.node[node]:
            continue
        q = market.priors.at(node)[choice[int(node)]]
        for k, child in enumerate(tree.children[node]):
            mass[child] = mass[node] * q[k]
    return mass[tree.leaves]


def n_pastings(market):
    return math.prod(len(market.priors.at(n)) for n in market.charged_internal)


def iter_pastings(market, limit=4096):
    """Yield leaf-probability vectors of every extreme pasting."""
    nodes = [int(n) for n in market.charged_internal]
    total = n_pastings(market)
    if total > limit:
        raise ValueError(f"{total} extreme pastings exceeds limit {limit}")
    ranges = [range(len(market.priors.at(n))) for n in nodes]
    for combo in itertools.product(*ranges):
        yield pasting_measure(market, dict(zip(nodes, combo)))


def robust_probability(market, leaf_mask, sense="max"):
    """sup (or inf) over pasted priors of P(leaf in mask)."""
    return robust_expectation(market, np.asarray(leaf_mask, float), sense=sense)


# ---------------------------------------------------------------------------
# file format

_TOP_FIELDS = {"d", "T", "nodes", "priors", "default_priors", "claim", "name"}
_NODE_FIELDS = {"id", "parent", "price"}


def _fail(msg):
    raise MarketFormatError(msg)


def _normalise(vec, node_id):
    arr = np.asarray(vec, float)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        _fail(f"prior at node {node_id} is not a finite vector")
    if np.any(arr < 0):
        _fail(f"prior has negative entry at node {node_id}")
    s = arr.sum()
    if abs(s - 1.0) > PROB_TOL:
        _fail(f"prior not normalized at node {node_id} (sums to {s!r})")
    return arr / s


def parse_market(data):
    """Build and validate a Market from a decoded JSON object."""
    if not isinstance(data, dict):
        _fail("market file must contain a JSON object")
    unknown = set(data) - _TOP_FIELDS
    if unknown:
        _fail(f"unknown field(s): {sorted(unknown)}")
    for key in ("d", "T", "nodes", "priors"):
        if key not in data:
            _fail(f"missing field '{key}'")
    d, T = data["d"], data["T"]
    if not isinstance(d, int) or d < 1:
        _fail("field 'd' must be an integer >= 1")
    if not isinstance(T, int) or T < 1:
        _fail("field 'T' must be an integer >= 1")

    raw = {}
    for k, rec in enumerate(data["nodes"]):
        if not isinstance(rec, dict):
            _fail(f"nodes[{k}] must be an object")
        extra = set(rec) - _NODE_FIELDS
        if extra:
            _fail(f"nodes[{k}]: unknown field(s) {sorted(extra)}")
        if "id" not in rec or "price" not in rec:
            _fail(f"nodes[{k}]: 'id' and 'price' are required")
        nid = rec["id"]
        if not isinstance(nid, int):
            _fail(f"nodes[{k}]: id must be an integer")
        if nid in raw:
            _fail(f"duplicate node id {nid}")
        price = np.asarray(rec["price"], float).ravel()
        if price.shape != (d,) or not np.all(np.isfinite(price)):
            _fail(f"node {nid}: price must be a finite array of length {d}")
        raw[nid] = (rec.get("parent"), price)

    roots = [nid for nid, (par, _) in raw.items() if par is None]
    if len(roots) != 1:
        _fail(f"expected exactly one root, found {len(roots)}")
    kids = {nid: [] for nid in raw}
    for nid, (par, _) in raw.items():
        if par is None:
            continue
        if par not in raw:
            _fail(f"node {nid}: unknown parent {par}")
        kids[par].append(nid)
    depth = {roots[0]: 0}
    order = [roots[0]]
    for nid in order:
        for c in sorted(kids[nid]):
            depth[c] = depth[nid] + 1
            order.append(c)
    if len(order) != len(raw):
        _fail("node graph is not a tree rooted at the root")
    for nid in raw:
        if not kids[nid] and depth[nid] != T:
            _fail(f"leaf {nid} at depth {depth[nid]}, expected T={T}")
        if depth[nid] > T:
            _fail(f"node {nid} deeper than T={T}")

    ids = tuple(sorted(raw, key=lambda n: (depth[n], n)))
    index = {nid: i for i, nid in enumerate(ids)}
    parent = np.array([-1 if raw[n][0] is None else index[raw[n][0]] for n in ids])
    time = np.array([depth[n] for n in ids])
    children = tuple(tuple(index[c] for c in sorted(kids[n])) for n in ids)
    prices = np.array([raw[n][1] for n in ids])
    tree = ScenarioTree(ids=ids, parent=parent, time=time, children=children, prices=prices)

    priors_raw = data["priors"]
    if not isinstance(priors_raw, dict):
        _fail("field 'priors' must map node id -> list of probability arrays")
    default = data.get("default_priors")
    extremes = {}
    for key, vecs in priors_raw.items():
        try:
            nid = int(key)
        except ValueError:
            _fail(f"priors: bad node id {key!r}")
        if nid not in index:
            _fail(f"priors: unknown node {nid}")
        if not kids[nid]:
            _fail(f"priors given for leaf {nid}")
        extremes[index[nid]] = vecs
    for nid in ids:
        i = index[nid]
        if not kids[nid]:
            continue
        vecs = extremes.get(i, default)
        if vecs is None:
            _fail(f"no prior for node {nid}")
        if not isinstance(vecs, list) or not vecs:
            _fail(f"priors for node {nid} must be a nonempty list")
        arrs = [_normalise(v, nid) for v in vecs]
        for a in arrs:
            if a.shape != (len(kids[nid]),):
                _fail(f"prior at node {nid} has {a.shape[0]} entries, node has {len(kids[nid])} children")
        extremes[i] = np.array(arrs)
    priors = PriorSet(extremes=extremes)

    claim = None
    if data.get("claim") is not None:
        cl = data["claim"]
        if not isinstance(cl, dict):
            _fail("field 'claim' must map leaf id -> number")
        vals = np.full(len(tree.leaves), np.nan)
        for key, v in cl.items():
            try:
                nid = int(key)
            except ValueError:
                _fail(f"claim: bad leaf id {key!r}")
            if nid not in index or kids[nid]:
                _fail(f"claim: {nid} is not a leaf")
            vals[tree.leaf_position[index[nid]]] = float(v)
        claim = Claim(vals)

    market = Market(tree, priors, claim, name=str(data.get("name", "")))
    if claim is not None:
        bad = [ids[tree.leaves[k]] for k in market.charged_leaves if not np.isfinite(claim.values[k])]
        if bad:
            _fail(f"claim missing or non-finite at charged leaf {bad[0]}")
    return market


def load_market(text):
    """Parse market file contents (JSON text)."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MarketFormatError(f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_market(data)


def read_market(path):
    with open(path, encoding="utf-8") as fh:
        return load_market(fh.read())


def market_to_dict(market):
    tree = market.tree
    out = {"d": tree.d, "T": tree.T}
    if market.name:
        out["name"] = market.name
    out["nodes"] = [
        {"id": tree.ids[i],
         "parent": None if tree.parent[i] < 0 else tree.ids[tree.parent[i]],
         "price": [float(p) for p in tree.prices[i]]}
        for i in range(tree.n_nodes)
    ]
    out["priors"] = {str(tree.ids[n]): [[float(p) for p in row] for row in market.priors.at(n)]
                     for n in tree.internal}
    if market.claim is not None:
        out["claim"] = {str(tree.ids[leaf]): float(market.claim.values[k])
                        for k, leaf in enumerate(tree.leaves)}
    return out


def dump_market(market):
    return json.dumps(market_to_dict(market), indent=1)


def build_market(prices_by_path, priors_by_path, claim=None, name=""):
    """Convenience constructor from nested dicts keyed by path tuples.

    ``prices_by_path`` maps a path tuple (``()`` for the root, ``(0,)``, ``(0, 2)``...)
    to a price (scalar or vector); ``priors_by_path`` maps non-leaf paths to lists
    of probability vectors; ``claim`` is a callable on the terminal price or a
    dict path -> payoff.
    """
    paths = sorted(prices_by_path, key=lambda p: (len(p), p))
    ids = {p: i for i, p in enumerate(paths)}
    T = max(len(p) for p in paths)
    d = np.atleast_1d(np.asarray(prices_by_path[()], float)).size
    data = {"d": d, "T": T, "nodes": [], "priors": {}}
    for p in paths:
        data["nodes"].append({
            "id": ids[p],
            "parent": None if not p else ids[p[:-1]],
            "price": np.atleast_1d(np.asarray(prices_by_path[p], float)).tolist(),
        })
    for p, vecs in priors_by_path.items():
        data["priors"][str(ids[p])] = [list(map(float, v)) for v in vecs]
    if name:
        data["name"] = name
    if claim is not None:
        leaves = [p for p in paths if len(p) == T]
        if callable(claim):
            data["claim"] = {str(ids[p]): float(claim(np.atleast_1d(np.asarray(prices_by_path[p], float))))
                             for p in leaves}
        else:
            data["claim"] = {str(ids[p]): float(claim[p]) for p in leaves}
    return parse_market(data)
