"""Worst-case expected utility, indifference prices, risk measures and wealth bounds.

u(G, x) = sup over strategies with V_T >= G q.s. of inf_P E_P U(V_T - G).

Three solvers:

* ``CaraExactSolver``  - exponential utility. Without a binding floor the
  problem separates multiplicatively and a log-space recursion over nodes
  is exact; otherwise a whole-tree convex program over extreme pastings.
* ``WealthGridSolver`` - backward dynamic programming on per-node wealth
  grids with linear interpolation (any utility with finite U(0), d <= 2).
* ``BruteOracle``      - grid search plus SLSQP over the full strategy
  vector with the inner infimum taken over every extreme pasting.
"""
from dataclasses import dataclass, field
import itertools
import math

import numpy as np

from .lp import linprog, InfeasibleError, UnboundedError
from .market import Claim, iter_pastings, n_pastings, robust_expectation, wealth
from .minimax import LSEPieces, minimize_max, minimize_max_1d
from .superhedge import superreplication_price
from .utility import CARA, RandomCARA, Affine

PASTING_LIMIT = 4096


class InadmissibleError(ValueError):
    """No strategy satisfies the quasi-sure floor V_T >= G."""


class GridUnderresolved(RuntimeError):
    """Wealth-grid refinement did not settle within the grid cap."""


@dataclass
class RobustValue:
    value: float
    strategy: np.ndarray | None
    solver: str
    log_loss: float | None = None    # exponential utilities: value = b - a * exp(log_loss)
    diagnostics: dict = field(default_factory=dict)

    @property
    def admissible(self):
        return self.value > -math.inf or self.log_loss is not None

    def geq(self, other):
        """self >= other, comparing log-losses when both come from the same exponential utility."""
        if not self.admissible:
            return not other.admissible
        if not other.admissible:
            return True
        if self.log_loss is not None and other.log_loss is not None:
            return self.log_loss <= other.log_loss
        return self.value >= other.value


def _values(market, claim):
    if claim is None:
        claim = market.claim
    return claim.values if isinstance(claim, Claim) else np.asarray(claim, float)


def _key(G):
    return np.asarray(G, float).tobytes()


class _PriceCache:
    def __init__(self, market):
        self.market = market
        self._pi = {}

    def superhedge(self, G):
        k = _key(G)
        if k not in self._pi:
            self._pi[k] = superreplication_price(self.market, G)
        return self._pi[k]


def _d_coordinates(market):
    """Column layout of D-coordinate strategy vectors and the leaf gain matrix."""
    tree = market.tree
    layout, col = {}, 0
    for n in market.charged_internal:
        k = market.d_spaces[int(n)].basis.shape[1]
        layout[int(n)] = (col, k)
        col += k
    M = np.zeros((len(tree.leaves), col))
    for pos, leaf in enumerate(tree.leaves):
        path = tree.path(int(leaf))
        for a, b in zip(path[:-1], path[1:]):
            if a in layout:
                c0, k = layout[a]
                M[pos, c0:c0 + k] = market.d_spaces[a].basis.T @ (tree.prices[b] - tree.prices[a])
    return layout, M


def _strategy_from_coords(market, layout, c):
    h = np.zeros((market.tree.n_nodes, market.tree.d))
    for n, (c0, k) in layout.items():
        h[n] = market.d_spaces[n].basis @ c[c0:c0 + k]
    return h


def _coords_from_strategy(market, layout, h):
    c = np.zeros(sum(k for _, k in layout.values()))
    for n, (c0, k) in layout.items():
        c[c0:c0 + k] = market.d_spaces[n].basis.T @ h[n]
    return c


# ---------------------------------------------------------------------------
# exponential utility

def cara_parameters(U, n_leaves):
    """(gamma per leaf, anchor, a, b, deterministic) with U = b - a exp(-gamma (y - anchor)), else None."""
    a, b = 1.0, 0.0
    while isinstance(U, Affine):
        a, b = a * U.a, a * U.b + b
        U = U.base
    if isinstance(U, CARA):
        return np.full(n_leaves, U.gamma), U.anchor, a, b, True
    if isinstance(U, RandomCARA):
        return U.R.astype(float), U.anchor, a, b, False
    return None


class CaraExactSolver:
    name = "cara-exact"

    def __init__(self, market, U, tol=1e-10):
        params = cara_parameters(U, len(market.tree.leaves))
        if params is None:
            raise TypeError("cara-exact needs an exponential utility")
        self.market, self.U, self.tol = market, U, tol
        self.gamma, self.anchor, self.a, self.b, self.deterministic = params
        self.prices = _PriceCache(market)
        self._free = {}
        self._layout = None

    def _value(self, log_loss):
        with np.errstate(over="ignore"):
            return self.b - self.a * math.exp(log_loss) if log_loss < 700 else -math.inf

    def free_solution(self, G):
        """Unconstrained optimum: per-node log certificates and strategy (deterministic gamma)."""
        key = _key(G)
        if key in self._free:
            return self._free[key]
        market, tree = self.market, self.market.tree
        g = float(self.gamma[0])
        logC = np.full(tree.n_nodes, np.nan)
        logC[tree.leaves] = g * G
        h = np.zeros((tree.n_nodes, tree.d))
        iters = 0
        for node in market.charged_internal[::-1]:
            kids, dS, ext = market.kernel(node)
            basis = market.d_spaces[int(node)].basis
            with np.errstate(divide="ignore"):
                a = np.log(ext) + logC[kids]
            w = dS @ basis
            if w.shape[1] == 0:
                logC[node] = float(LSEPieces(a, np.zeros((len(kids), 1))).value(np.zeros(1)).max())
                continue
            pieces = LSEPieces(a, w)
            res = minimize_max_1d(pieces) if w.shape[1] == 1 else minimize_max(pieces, tol=self.tol)
            iters += res.iterations
            logC[node] = res.value
            h[node] = basis @ res.y / g
        gains = wealth(tree, h, 0.0)[tree.leaves]
        out = {"logC": logC, "strategy": h, "gains": gains, "iterations": iters}
        self._free[key] = out
        return out

    def solve(self, G, x):
        G = np.asarray(G, float)
        market = self.market
        k = market.charged_leaves
        pi = self.prices.superhedge(G).price
        if x < pi - 1e-12 * (1 + abs(pi)):
            return RobustValue(-math.inf, None, self.name, None, {"reason": "inadmissible", "pi": pi})
        if self.deterministic:
            free = self.free_solution(G)
            slack = x + free["gains"][k] - G[k]
            if slack.min() >= 0:
                g = float(self.gamma[0])
                ll = -g * (x - self.anchor) + free["logC"][0]
                return RobustValue(self._value(ll), free["strategy"], self.name, ll,
                                   {"path": "free", "iterations": free["iterations"],
                                    "floor_threshold": float((G[k] - free["gains"][k]).max())})
        return self._constrained(G, x, pi)

    def free_price(self, G, x):
        """Closed-form indifference price when neither problem touches the floor, else None.

        Off the floor log_loss is affine in capital with slope -gamma, so
        the indifference equation is linear in z.
        """
        if not self.deterministic:
            return None
        G = np.asarray(G, float)
        k = self.market.charged_leaves
        g = float(self.gamma[0])
        f0, fG = self.free_solution(np.zeros_like(G)), self.free_solution(G)
        z = (fG["logC"][0] - f0["logC"][0]) / g
        if (x + f0["gains"][k]).min() < 0 or (x + z + fG["gains"][k] - G[k]).min() < 0:
            return None
        return float(z)

    def _constrained(self, G, x, pi):
        market = self.market
        if n_pastings(market) > PASTING_LIMIT:
            raise RuntimeError("too many extreme pastings for the constrained exponential solver")
        if self._layout is None:
            self._layout = _d_coordinates(market)
            self._pastings = np.array(list(iter_pastings(market, PASTING_LIMIT)))
        layout, M = self._layout
        k = market.charged_leaves
        P = self._pastings[:, k]
        R = self.gamma[k]
        with np.errstate(divide="ignore"):
            a = np.log(P) + R * (G[k] - x + self.anchor)
        W = R[:, None] * M[k]
        pieces = LSEPieces(a, W)
        c0 = _coords_from_strategy(market, layout, self.prices.superhedge(G).strategy)
        A_ub, b_ub = -M[k], x - G[k]
        if x - pi <= 1e-12 * (1 + abs(pi)) or M.shape[1] == 0:
            ll = float(pieces.value(c0).max())
            return RobustValue(self._value(ll), _strategy_from_coords(market, layout, c0), self.name, ll,
                               {"path": "boundary"})
        # shrink toward the superhedge for a strictly interior start
        res = minimize_max(pieces, y0=c0, A_ub=A_ub, b_ub=b_ub, tol=self.tol)
        return RobustValue(self._value(res.value), _strategy_from_coords(market, layout, res.y), self.name,
                           res.value, {"path": "floor-constrained", "iterations": res.iterations, "gap": res.gap})


# ---------------------------------------------------------------------------
# wealth grid

def _golden_max(f, lo, hi, iters=90):
    """Vectorised golden-section maximisation of concave f on [lo, hi]; returns (arg, value)."""
    r = (math.sqrt(5) - 1) / 2
    a, b = lo.astype(float).copy(), hi.astype(float).copy()
    c = b - r * (b - a)
    d = a + r * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc >= fd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        new = np.where(left, b - r * (b - a), a + r * (b - a))
        fnew = f(new)
        c, d, fc, fd = (np.where(left, new, d), np.where(left, c, new),
                        np.where(left, fnew, fd), np.where(left, fc, fnew))
        if np.all(b - a <= 1e-15 * np.maximum(1.0, np.abs(a) + np.abs(b))):
            break
    cands = [lo, hi, c, d]
    stack = np.vstack([f(z) for z in cands])
    best = np.argmax(stack, axis=0)
    return np.choose(best, cands), stack[best, np.arange(stack.shape[1])]


class WealthGridSolver:
    name = "wealth-grid"

    def __init__(self, market, U, n_grid=2048, tol=1e-7, max_grid=2 ** 16):
        if market.tree.d > 2:
            raise NotImplementedError("wealth-grid supports d <= 2")
        if not math.isfinite(float(np.min(U.u(np.zeros(len(market.tree.leaves)),
                                                np.arange(len(market.tree.leaves)) if U.random else None)))):
            raise ValueError("wealth-grid needs a finite U(0)")
        self.market, self.U = market, U
        self.n_grid, self.tol, self.max_grid = n_grid, tol, max_grid
        self.prices = _PriceCache(market)

    # child value functions -------------------------------------------------
    def _leaf_fn(self, pos, g):
        U = self.U

        def f(u):
            y = np.maximum(u - g, 0.0)
            if U.random:
                return U.u(y, np.full(y.shape, pos))
            return U.u(y)
        return f

    @staticmethod
    def _grid_fn(xs, vs):
        def f(u):
            return np.interp(u, xs, vs)
        return f

    def _objective(self, v, c, w, ext, fns):
        """min_k sum_j p_kj f_j(v + w_j c) for arrays v (n,), c (n, k)."""
        vals = np.stack([fns[j](v + c @ w[j]) for j in range(len(fns))], axis=1)  # (n, m)
        with np.errstate(invalid="ignore"):
            prod = np.where(ext[None] > 0, ext[None] * vals[:, None, :], 0.0)
        return prod.sum(axis=2).min(axis=1)

    def _inner(self, v, b_node, w, ext, fns):
        """Maximise over c with v + w_j c >= b_j for every child; v is an array."""
        n, k = len(v), w.shape[1]
        if k == 0:
            return np.zeros((n, 0)), self._objective(v, np.zeros((n, 0)), w, ext, fns)
        rhs = b_node[None, :] - v[:, None]                     # w_j c >= rhs_j
        if k == 1:
            wj = w[:, 0]
            lo = np.full(n, -np.inf)
            hi = np.full(n, np.inf)
            pos, neg = wj > 0, wj < 0
            if pos.any():
                lo = (rhs[:, pos] / wj[pos]).max(axis=1)
            if neg.any():
                hi = (rhs[:, neg] / wj[neg]).min(axis=1)
            hi = np.maximum(hi, lo)
            f = lambda c: self._objective(v, c[:, None], w, ext, fns)
            arg, val = _golden_max(f, lo, hi)
            return arg[:, None], val
        # k == 2: nested golden section on the feasible polygon
        c1_lo, c1_hi = self._polygon_range(w, rhs)

        def inner(c1):
            lo2, hi2 = self._slice(w, rhs, c1)
            f2 = lambda c2: self._objective(v, np.column_stack([c1, c2]), w, ext, fns)
            return _golden_max(f2, lo2, hi2, iters=70)

        outer = lambda c1: inner(c1)[1]
        c1, val = _golden_max(outer, c1_lo, c1_hi, iters=70)
        c2, val = inner(c1)
        return np.column_stack([c1, c2]), val

    @staticmethod
    def _polygon_range(w, rhs):
        n, m = rhs.shape
        lo = np.full(n, np.inf)
        hi = np.full(n, -np.inf)
        for i, j in itertools.combinations(range(m), 2):
            A = w[[i, j]]
            if abs(np.linalg.det(A)) < 1e-14:
                continue
            pts = np.linalg.solve(A, rhs[:, [i, j]].T).T          # (n, 2)
            ok = np.all(pts @ w.T >= rhs - 1e-9 * (1 + np.abs(rhs)), axis=1)
            lo = np.where(ok, np.minimum(lo, pts[:, 0]), lo)
            hi = np.where(ok, np.maximum(hi, pts[:, 0]), hi)
        return lo, np.maximum(hi, lo)

    @staticmethod
    def _slice(w, rhs, c1):
        lo = np.full(len(c1), -np.inf)
        hi = np.full(len(c1), np.inf)
        for j in range(w.shape[0]):
            if abs(w[j, 1]) < 1e-14:
                continue
            bound = (rhs[:, j] - w[j, 0] * c1) / w[j, 1]
            if w[j, 1] > 0:
                lo = np.maximum(lo, bound)
            else:
                hi = np.minimum(hi, bound)
        mid = 0.5 * (lo + hi)
        bad = lo > hi
        return np.where(bad, mid, lo), np.where(bad, mid, hi)

    # grid bounds -------------------------------------------------------------
    def _upper_bounds(self, pi_nodes, x):
        market = self.market
        hi = {0: x}
        for node in market.charged_internal:
            kids, dS, _ = market.kernel(node)
            w = dS @ market.d_spaces[int(node)].basis
            k = w.shape[1]
            for j, child in enumerate(kids):
                if k == 0:
                    hi[int(child)] = hi[int(node)]
                    continue
                A_ub = np.vstack([np.r_[1.0, np.zeros(k)], -np.hstack([np.ones((len(kids), 1)), w])])
                b_ub = np.r_[hi[int(node)], -pi_nodes[kids]]
                res = linprog(-np.r_[1.0, w[j]], A_ub, b_ub, free=np.ones(k + 1, bool))
                hi[int(child)] = -res.fun
        return hi

    def _sweep(self, G, x, pi_nodes, hi, N):
        market, tree = self.market, self.market.tree
        fns_node = {}
        for pos, leaf in enumerate(tree.leaves):
            fns_node[int(leaf)] = self._leaf_fn(pos, G[pos])
        grids = {}
        root_val = None
        for node in market.charged_internal[::-1]:
            kids, dS, ext = market.kernel(node)
            w = dS @ market.d_spaces[int(node)].basis
            fns = [fns_node[int(c)] for c in kids]
            if node == 0:
                xs = np.array([x])
            else:
                lo_v, hi_v = pi_nodes[node], max(hi[int(node)], pi_nodes[node])
                xs = np.linspace(lo_v, hi_v, N) if hi_v > lo_v else np.array([lo_v])
            _, vs = self._inner(xs, pi_nodes[kids], w, ext, fns)
            if node == 0:
                root_val = float(vs[0])
            else:
                if len(xs) == 1:
                    xs, vs = np.array([xs[0], xs[0] + 1e-300]), np.array([vs[0], vs[0]])
                fns_node[int(node)] = self._grid_fn(xs, vs)
                grids[int(node)] = (xs, vs)
        return root_val, fns_node

    def solve(self, G, x):
        G = np.asarray(G, float)
        sh = self.prices.superhedge(G)
        pi_nodes = sh.node_values
        if x < sh.price - 1e-12 * (1 + abs(sh.price)):
            return RobustValue(-math.inf, None, self.name, None, {"reason": "inadmissible", "pi": sh.price})
        x = max(x, sh.price)
        hi = self._upper_bounds(pi_nodes, x)
        N = self.n_grid
        prev, fns = self._sweep(G, x, pi_nodes, hi, N)
        history = [(N, prev)]
        while True:
            if N * 2 > self.max_grid:
                raise GridUnderresolved(f"grid refinement stalled: history {history}")
            N *= 2
            val, fns = self._sweep(G, x, pi_nodes, hi, N)
            history.append((N, val))
            if abs(val - prev) <= self.tol:
                break
            prev = val
        strategy = self._forward(G, x, pi_nodes, fns)
        return RobustValue(val, strategy, self.name, None, {"grid": N, "history": history})

    def _forward(self, G, x, pi_nodes, fns):
        market, tree = self.market, self.market.tree
        h = np.zeros((tree.n_nodes, tree.d))
        v = np.zeros(tree.n_nodes)
        v[0] = x
        for node in market.charged_internal:
            kids, dS, ext = market.kernel(node)
            basis = market.d_spaces[int(node)].basis
            w = dS @ basis
            c, _ = self._inner(np.array([v[node]]), pi_nodes[kids], w, ext, [fns[int(k)] for k in kids])
            h[node] = basis @ c[0] if basis.shape[1] else 0.0
            for child, ds in zip(kids, tree.delta(node)[market.charged.children(tree, node)]):
                v[child] = v[node] + h[node] @ ds
        return h


# ---------------------------------------------------------------------------
# brute-force oracle (scipy)

class BruteOracle:
    name = "brute-oracle"

    def __init__(self, market, U, grid_budget=20000, starts=3):
        self.market, self.U = market, U
        self.grid_budget, self.starts = grid_budget, starts
        tree = market.tree
        self.nodes = [int(n) for n in market.charged_internal]
        d = tree.d
        self.nv = len(self.nodes) * d
        col = {n: i * d for i, n in enumerate(self.nodes)}
        M = np.zeros((len(tree.leaves), self.nv))
        for pos, leaf in enumerate(tree.leaves):
            path = tree.path(int(leaf))
            for a, b in zip(path[:-1], path[1:]):
                if a in col:
                    M[pos, col[a]:col[a] + d] = tree.prices[b] - tree.prices[a]
        self.col = col
        self.k = market.charged_leaves
        self.M = M[self.k]
        self.P = np.array(list(iter_pastings(market, PASTING_LIMIT)))[:, self.k]
        self.leaf_idx = self.k if U.random else None

    def _u(self, y):
        return self.U.u(np.maximum(y, 0.0), None if self.leaf_idx is None else np.broadcast_to(self.leaf_idx, y.shape))

    def _du(self, y):
        return self.U.du(np.maximum(y, 1e-12), None if self.leaf_idx is None else np.broadcast_to(self.leaf_idx, y.shape))

    def _objective(self, c, x, G):
        y = x - G + self.M @ c
        return float((self.P @ self._u(y)).min())

    def solve(self, G, x):
        from scipy.optimize import linprog as sp_linprog, minimize
        G = np.asarray(G, float)[self.k]
        nv = self.nv
        if nv == 0:
            y = x - G
            if np.any(y < 0):
                return RobustValue(-math.inf, None, self.name, None, {"reason": "inadmissible"})
            return RobustValue(float((self.P @ self._u(y)).min()), np.zeros((self.market.tree.n_nodes, self.market.tree.d)),
                               self.name)
        A_ub, b_ub = -self.M, x - G
        feas = sp_linprog(np.zeros(nv), A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * nv, method="highs")
        if feas.status == 2:
            return RobustValue(-math.inf, None, self.name, None, {"reason": "inadmissible"})
        box = []
        for i in range(nv):
            e = np.zeros(nv)
            e[i] = 1.0
            lo = sp_linprog(e, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * nv, method="highs")
            hi = sp_linprog(-e, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * nv, method="highs")
            lo_v = lo.fun if lo.status == 0 else -10.0
            hi_v = -hi.fun if hi.status == 0 else 10.0
            box.append((lo_v, hi_v))
        per = max(3, int(self.grid_budget ** (1.0 / nv)))
        axes = [np.linspace(a, b, per) for a, b in box]
        pts = np.array(list(itertools.product(*axes))) if per ** nv <= 4 * self.grid_budget else \
            np.random.default_rng(0).uniform([a for a, _ in box], [b for _, b in box], size=(self.grid_budget, nv))
        pts = np.vstack([pts, feas.x])
        Y = x - G[None, :] + pts @ self.M.T
        ok = np.all(Y >= -1e-12, axis=1)
        pts, Y = pts[ok], Y[ok]
        vals = (self._u(Y) @ self.P.T).min(axis=1)
        order = np.argsort(-vals)[: self.starts]
        best = (vals[order[0]], pts[order[0]])

        def cons_fun(z):
            y = x - G + self.M @ z[:-1]
            return np.concatenate([self.P @ self._u(y) - z[-1], y])

        def cons_jac(z):
            y = x - G + self.M @ z[:-1]
            du = self._du(y)
            top = np.hstack([self.P @ (du[:, None] * self.M), -np.ones((len(self.P), 1))])
            bottom = np.hstack([self.M, np.zeros((len(y), 1))])
            return np.vstack([top, bottom])

        for i in order:
            z0 = np.r_[pts[i], vals[i]]
            res = minimize(lambda z: -z[-1], z0, jac=lambda z: np.r_[np.zeros(nv), -1.0],
                           constraints=[{"type": "ineq", "fun": cons_fun, "jac": cons_jac}],
                           method="SLSQP", options={"ftol": 1e-15, "maxiter": 2000})
            c = res.x[:-1]
            y = x - G + self.M @ c
            if np.all(y >= -1e-9):
                val = self._objective(c, x, G)
                if val > best[0]:
                    best = (val, c)
        h = np.zeros((self.market.tree.n_nodes, self.market.tree.d))
        for n, c0 in self.col.items():
            h[n] = best[1][c0:c0 + self.market.tree.d]
        return RobustValue(float(best[0]), h, self.name, None, {"grid_points": int(len(pts))})


# ---------------------------------------------------------------------------
# public entry points

SOLVERS = {"cara": CaraExactSolver, "cara-exact": CaraExactSolver, "grid": WealthGridSolver,
           "wealth-grid": WealthGridSolver, "oracle": BruteOracle, "brute-oracle": BruteOracle}


def make_solver(market, U, solver="auto", **options):
    if not isinstance(solver, str):
        return solver
    if solver == "auto":
        if cara_parameters(U, len(market.tree.leaves)) is not None:
            solver = "cara"
        elif market.tree.d <= 2:
            solver = "grid"
        else:
            solver = "oracle"
    return SOLVERS[solver](market, U, **options)


def robust_utility(market, U, claim, x, solver="auto", **options):
    """u(G, x) with the chosen solver (a solver instance may be passed for caching)."""
    return make_solver(market, U, solver, **options).solve(_values(market, claim), x)


@dataclass
class IndifferenceResult:
    p: float
    pB: float | None
    bracket: tuple
    trace: list
    checks: dict
    pi: float
    pi_sub: float
    finite: bool = True


def _seller_price(solver, G, x, tol, pi, max_expand=60):
    """Root of z -> u(G, x + z) - u(0, x) by Brent's method on an admissible bracket.

    Below pi - x the value is -inf, so the bracket starts at the boundary
    capital; the upper end starts at pi + 1 and doubles until the
    indifference inequality holds.
    """
    from scipy.optimize import brentq
    u0 = solver.solve(np.zeros_like(G), x)
    if not u0.admissible:
        raise ValueError("u(0, x) is -inf; indifference price undefined")
    trace = []
    shortcut = getattr(solver, "free_price", None)
    z = shortcut(G, x) if shortcut is not None else None
    if z is not None:
        trace.append((z, 0.0))
        return z, (z, z), trace, u0

    def excess(z):
        r = solver.solve(G, x + z)
        if not r.admissible:
            out = -math.inf
        elif r.log_loss is not None and u0.log_loss is not None:
            out = u0.log_loss - r.log_loss
        else:
            out = r.value - u0.value
        trace.append((z, out))
        return out

    lo = pi - x
    f_lo = excess(lo)
    if f_lo >= 0:
        return lo, (lo, lo), trace, u0
    hi, step = pi + 1.0, 1.0
    while excess(hi) < 0:
        step *= 2
        hi = pi + step
        if step > 2.0 ** max_expand:
            return math.inf, (lo, hi), trace, u0
    bracket = (lo, hi)
    while not math.isfinite(f_lo) and hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = excess(mid)
        if f_mid >= 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    if hi - lo <= tol:
        return 0.5 * (lo + hi), bracket, trace, u0
    z = brentq(excess, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return z, bracket, trace, u0


def indifference_price(market, U, claim, x, solver="auto", tol=1e-8, buyer=True, **options):
    """Seller price p(G, x) = inf{z : u(G, x + z) >= u(0, x)} and buyer price -p(-G, x)."""
    G = _values(market, claim)
    solver = make_solver(market, U, solver, **options)
    sh = superreplication_price(market, G)
    sub = -superreplication_price(market, -G).price
    p, bracket, trace, _ = _seller_price(solver, G, x, tol, sh.price)
    pB = None
    if buyer:
        q, _, _, _ = _seller_price(solver, -G, x, tol, -sub)
        pB = -q
    checks = {}
    slack = 10 * tol
    if np.all(G[market.charged_leaves] >= 0):
        checks["lower_sandwich"] = p >= sh.price - x - slack
        checks["upper_sandwich"] = p <= sh.price + slack
    if pB is not None:
        checks["buyer_below_sub_plus_x"] = pB <= sub + x + slack
    return IndifferenceResult(p=p, pB=pB, bracket=bracket, trace=trace, checks=checks,
                              pi=sh.price, pi_sub=sub, finite=math.isfinite(p))


def buyer_price(market, U, claim, x, solver="auto", tol=1e-8, **options):
    G = _values(market, claim)
    solver = make_solver(market, U, solver, **options)
    sub = -superreplication_price(market, -G).price
    q, _, _, _ = _seller_price(solver, -G, x, tol, -sub)
    return -q


# ---------------------------------------------------------------------------
# risk measures

@dataclass
class AxiomReport:
    checks: int
    violations: list          # (axiom, measure, detail, excess)
    values: dict

    @property
    def ok(self):
        return not self.violations


CASH_SHIFTS = (-1.0, 0.5, 2.0)
LAMBDAS = (0.25, 0.5, 0.75)


def risk_measure_harness(market, U, x, claims, solver="auto", tol=1e-8, price_tol=1e-12, rng=None, **options):
    """Check monotonicity, cash invariance, convexity and normalisation of rho and rho_x.

    rho(G) = pi(-G) and rho_x(G) = p(-G, x).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    solver = make_solver(market, U, solver, **options)
    cache = {}

    def rho(G):
        return superreplication_price(market, -G).price

    def rho_x(G):
        key = _key(G)
        if key not in cache:
            pi = superreplication_price(market, -G).price
            cache[key] = _seller_price(solver, -G, x, price_tol, pi)[0]
        return cache[key]

    violations, values, count = [], {}, 0

    def check(axiom, name, ok_excess, detail):
        nonlocal count
        count += 1
        if ok_excess > tol:
            violations.append((axiom, name, detail, float(ok_excess)))

    n_leaves = len(market.tree.leaves)
    zero = np.zeros(n_leaves)
    for name, f in (("rho", rho), ("rho_x", rho_x)):
        r0 = f(zero)
        values[(name, "0")] = r0
        if name == "rho":
            check("normalization", name, abs(r0), "rho(0)")
        else:
            u_lo = solver.solve(zero, x)
            u_hi = solver.solve(zero, x + 1e-3)
            if u_hi.geq(u_lo) and not u_lo.geq(u_hi):
                check("normalization", name, abs(r0), "rho_x(0)")
        for i, G in enumerate(claims):
            G = np.asarray(G, float)
            H = claims[(i + 1) % len(claims)]
            rG = f(G)
            values[(name, i)] = rG
            lower = G - np.abs(rng.normal(size=n_leaves))
            check("monotonicity", name, rG - f(lower), f"claim {i}")
            for m in CASH_SHIFTS:
                check("cash invariance", name, abs(f(G + m) - (rG - m)), f"claim {i}, m={m}")
            rH = f(H)
            for lam in LAMBDAS:
                check("convexity", name, f(lam * G + (1 - lam) * H) - (lam * rG + (1 - lam) * rH),
                      f"claims {i},{(i + 1) % len(claims)}, lambda={lam}")
            if name == "rho_x":
                check("star-shape", name, -(rG + f(-G)), f"claim {i}")
    return AxiomReport(checks=count, violations=violations, values=values)


# ---------------------------------------------------------------------------
# wealth bound

@dataclass
class WealthBoundCertificate:
    M: np.ndarray                 # per node (nan at uncharged nodes)
    wealth: np.ndarray            # wealth of the D-projected strategy
    flags: np.ndarray             # |V_t| <= x M_t at each charged node
    K_x: float | None
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return bool(self.flags.all())


class BoundViolated(RuntimeError):
    pass


def wealth_multipliers(market, alphas):
    """M_0 = 1 and M_{t+1} = M_t (1 + |dS| / alpha_t) along charged paths."""
    tree = market.tree
    M = np.full(tree.n_nodes, np.nan)
    M[0] = 1.0
    for node in market.charged_internal:
        kids, dS, _ = market.kernel(node)
        a = alphas[int(node)]
        for child, ds in zip(kids, dS):
            nrm = float(np.linalg.norm(ds))
            if math.isinf(a) or nrm == 0.0:
                factor = 1.0
            elif a <= 0:
                factor = math.inf
            else:
                factor = 1.0 + nrm / a
            M[child] = M[node] * factor
    return M


def project_strategy(market, strategy):
    h = np.zeros_like(np.asarray(strategy, float))
    for n, sp in market.d_spaces.items():
        B = sp.basis
        h[n] = B @ (B.T @ strategy[n])
    return h


def wealth_bound_certificate(market, strategy, x, alphas=None, u1_report=None, p_norm=None, raise_on_violation=False):
    """Verify |V_t| <= x M_t for the D-projected strategy at every charged node."""
    from .arbitrage import alphas as compute_alphas
    alphas = compute_alphas(market) if alphas is None else alphas
    tree = market.tree
    M = wealth_multipliers(market, alphas)
    V_raw = wealth(tree, strategy, x)
    notes = []
    leaves = tree.leaves[market.charged_leaves]
    if np.any(V_raw[leaves] < -1e-12 * max(1.0, x)):
        raise ValueError("strategy is not admissible for the zero floor")
    h = project_strategy(market, np.asarray(strategy, float))
    V = wealth(tree, h, x)
    charged = market.charged.node
    scale = 1e-12 * max(1.0, x)
    with np.errstate(invalid="ignore"):
        # M = inf (alpha not certified positive) makes the bound vacuous
        flags = np.where(charged & np.isfinite(M), np.abs(V) <= x * M + scale * M, True)
    if not flags.all():
        notes.append("bound violated: alpha certificate too large or strategy not projected")
        if raise_on_violation:
            raise BoundViolated(notes[-1])
    K = None
    if u1_report is not None:
        q = u1_report.q
        p = q / (q - 1) if p_norm is None else p_norm
        leaf_M = M[tree.leaves]
        leaf_M = np.where(np.isfinite(leaf_M), leaf_M, 0.0)
        norm_M = robust_expectation(market, np.abs(leaf_M) ** p, "max") ** (1 / p)
        K = u1_report.sup_pos + x * norm_M * u1_report.sup_deriv
    return WealthBoundCertificate(M=M, wealth=V, flags=np.asarray(flags, bool), K_x=K, notes=notes)


def random_admissible_strategy(market, x, rng, orthogonal_noise=0.0):
    """Forward-generated strategy keeping every charged child's wealth nonnegative."""
    tree = market.tree
    h = np.zeros((tree.n_nodes, tree.d))
    v = np.zeros(tree.n_nodes)
    v[0] = x
    for node in market.charged_internal:
        kids, dS, _ = market.kernel(node)
        B = market.d_spaces[int(node)].basis
        if B.shape[1]:
            u = B @ rng.normal(size=B.shape[1])
            u /= np.linalg.norm(u)
            moves = dS @ u
            neg = moves < -1e-15
            s_max = float(np.min(v[node] / -moves[neg])) if neg.any() else 0.0
            h[node] = rng.uniform(0.0, max(s_max, 0.0)) * u
        if orthogonal_noise:
            P_perp = np.eye(tree.d) - B @ B.T
            h[node] += orthogonal_noise * (P_perp @ rng.normal(size=tree.d))
        for child, ds in zip(kids, dS):
            v[child] = max(v[node] + h[node] @ ds, 0.0)
    return h
