"""Utility families, absolute risk aversion, certainty equivalents and audits.

Utilities are evaluated leaf-wise: ``u(y, leaf)`` takes wealth values and
(for random utilities) the leaf positions they sit at. Every utility is
-inf below 0 and uses its right limit at 0.
"""
from dataclasses import dataclass, field
import json
import math

import numpy as np
from scipy.interpolate import CubicSpline

from .market import robust_expectation, iter_pastings, n_pastings, Claim

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200


class UtilityError(ValueError):
    pass


def _as_leaf_array(y, leaf):
    y = np.asarray(y, float)
    if leaf is None:
        return y, None
    leaf = np.asarray(leaf, int)
    return np.broadcast_arrays(y, leaf)


class Utility:
    """Base class. Subclasses implement ``_u``, ``_du``, ``_d2u`` on y >= 0."""
    random = False
    closed_form = True

    def coefficient(self, leaf):
        return None

    def u(self, y, leaf=None):
        y, leaf = _as_leaf_array(y, leaf)
        out = np.full(y.shape, -np.inf)
        ok = y >= 0
        if np.any(ok):
            out[ok] = self._u(y[ok], None if leaf is None else leaf[ok])
        return out if out.ndim else float(out)

    def du(self, y, leaf=None):
        y, leaf = _as_leaf_array(y, leaf)
        return self._du(np.maximum(y, 0.0), leaf)

    def d2u(self, y, leaf=None):
        y, leaf = _as_leaf_array(y, leaf)
        return self._d2u(np.maximum(y, 0.0), leaf)

    def inverse(self, v):
        """U^{-1} for deterministic utilities (bisection unless overridden)."""
        if self.random:
            raise UtilityError("inverse is only defined for non-random utilities")
        return _bisect_increasing(lambda y: self.u(y), v)


def _exp(z):
    """exp that overflows quietly to inf (deep losses under exponential utility)."""
    with np.errstate(over="ignore"):
        return np.exp(z)


class CARA(Utility):
    """-exp(-gamma (y - anchor))."""

    def __init__(self, gamma, anchor=0.0):
        if gamma <= 0:
            raise UtilityError("CARA coefficient must be positive")
        self.gamma = float(gamma)
        self.anchor = float(anchor)

    def _u(self, y, leaf):
        return -_exp(-self.gamma * (y - self.anchor))

    def _du(self, y, leaf):
        return self.gamma * _exp(-self.gamma * (y - self.anchor))

    def _d2u(self, y, leaf):
        return -self.gamma ** 2 * _exp(-self.gamma * (y - self.anchor))

    def inverse(self, v):
        return self.anchor - math.log(-v) / self.gamma

    def __repr__(self):
        return f"CARA(gamma={self.gamma:g}, anchor={self.anchor:g})"


class CRRA(Utility):
    """y ** beta with beta in (0, 1)."""

    def __init__(self, beta):
        if not 0 < beta < 1:
            raise UtilityError("CRRA exponent must lie in (0, 1)")
        self.beta = float(beta)

    def _u(self, y, leaf):
        return y ** self.beta

    def _du(self, y, leaf):
        with np.errstate(divide="ignore"):
            return self.beta * y ** (self.beta - 1)

    def _d2u(self, y, leaf):
        with np.errstate(divide="ignore"):
            return self.beta * (self.beta - 1) * y ** (self.beta - 2)

    def inverse(self, v):
        return max(v, 0.0) ** (1 / self.beta)

    def __repr__(self):
        return f"CRRA(beta={self.beta:g})"


class RandomCARA(Utility):
    """-exp(-R(leaf) (y - anchor)) with one coefficient per leaf."""
    random = True

    def __init__(self, coefficients, anchor=0.0):
        self.R = np.asarray(coefficients, float)
        if np.any(self.R <= 0):
            raise UtilityError("random CARA coefficients must be positive")
        self.anchor = float(anchor)

    def coefficient(self, leaf):
        return self.R[leaf]

    def _r(self, leaf):
        if leaf is None:
            raise UtilityError("random utility needs leaf positions")
        return self.R[leaf]

    def _u(self, y, leaf):
        return -_exp(-self._r(leaf) * (y - self.anchor))

    def _du(self, y, leaf):
        r = self._r(leaf)
        return r * _exp(-r * (y - self.anchor))

    def _d2u(self, y, leaf):
        r = self._r(leaf)
        return -r ** 2 * _exp(-r * (y - self.anchor))

    def __repr__(self):
        return f"RandomCARA(n_leaves={len(self.R)}, anchor={self.anchor:g})"


def uniform_coefficients(b, B, n_leaves):
    """Leaf coefficients at the quantile midpoints of the uniform law on [b, B].

    The empirical law (equal weights) is the closest finite-tree stand-in for
    a coefficient uniformly distributed under every prior.
    """
    return b + (B - b) * (np.arange(n_leaves) + 0.5) / n_leaves


class Shifted(Utility):
    """base(y + max|B| - B(leaf)): a reference-payoff utility."""
    random = True

    def __init__(self, base, reference):
        self.base = base
        self.B = np.asarray(reference, float)
        self.shift = float(np.abs(self.B).max()) - self.B

    def _s(self, leaf):
        if leaf is None:
            raise UtilityError("random utility needs leaf positions")
        return self.shift[leaf]

    def _u(self, y, leaf):
        return self.base.u(y + self._s(leaf))

    def _du(self, y, leaf):
        return self.base.du(y + self._s(leaf))

    def _d2u(self, y, leaf):
        return self.base.d2u(y + self._s(leaf))


class Affine(Utility):
    """a * base + b with a > 0; risk aversion and certainty equivalents are unchanged."""

    def __init__(self, base, a, b=0.0):
        if a <= 0:
            raise UtilityError("affine scale must be positive")
        self.base, self.a, self.b = base, float(a), float(b)
        self.random = base.random
        self.closed_form = base.closed_form

    def coefficient(self, leaf):
        return self.base.coefficient(leaf)

    def _u(self, y, leaf):
        return self.a * self.base.u(y, leaf) + self.b

    def _du(self, y, leaf):
        return self.a * self.base.du(y, leaf)

    def _d2u(self, y, leaf):
        return self.a * self.base.d2u(y, leaf)

    def inverse(self, v):
        return self.base.inverse((v - self.b) / self.a)


class CustomTable(Utility):
    """Cubic spline through tabulated (x, U(x)) with x starting at 0.

    Beyond the last knot the spline is continued by its tangent line.
    """
    closed_form = False

    def __init__(self, xs, us):
        xs = np.asarray(xs, float)
        us = np.asarray(us, float)
        if xs[0] != 0 or np.any(np.diff(xs) <= 0):
            raise UtilityError("table abscissae must start at 0 and increase")
        self.xs = xs
        self.spline = CubicSpline(xs, us, bc_type="natural")
        self.x_hi = xs[-1]
        self.u_hi = float(self.spline(self.x_hi))
        self.slope_hi = float(self.spline(self.x_hi, 1))
        grid = np.linspace(0, self.x_hi, 2001)
        if np.any(self.spline(grid, 1) <= 0) or np.any(self.spline(grid, 2) > 1e-9):
            raise UtilityError("tabulated utility is not increasing and concave")

    def _u(self, y, leaf):
        return np.where(y <= self.x_hi, self.spline(np.minimum(y, self.x_hi)),
                        self.u_hi + self.slope_hi * (y - self.x_hi))

    def _du(self, y, leaf):
        h = 1e-5 * np.maximum(1.0, y)
        return (self._u(y + h, leaf) - self._u(np.maximum(y - h, 0), leaf)) / (y + h - np.maximum(y - h, 0))

    def _d2u(self, y, leaf):
        h = 1e-5 * np.maximum(1.0, y)
        lo = np.maximum(y - h, 0.0)
        mid = 0.5 * (lo + y + h)
        return (self._u(y + h, leaf) - 2 * self._u(mid, leaf) + self._u(lo, leaf)) / ((y + h - lo) / 2) ** 2


# ---------------------------------------------------------------------------
# families

@dataclass
class UtilityFamily:
    """Indexed sequence U_n of utilities.

    kind: "cara" | "crra" | "shifted-reference" | "random-cara" | "custom-table"
    params: kind-specific (see ``member``)
    """
    kind: str
    params: dict
    x0: float = 1.0
    n_range: tuple = (1, 20)
    coefficients: dict | None = None     # random-cara: n -> per-leaf table
    normalize: bool = False

    def __post_init__(self):
        if self.x0 <= 0:
            raise UtilityError("anchor wealth x0 must be positive")
        if self.n_range[0] > self.n_range[1]:
            raise UtilityError("empty index range")

    @property
    def indices(self):
        return range(self.n_range[0], self.n_range[1] + 1)

    @property
    def random(self):
        return self.kind in ("shifted-reference", "random-cara")

    def gamma(self, n):
        """CARA coefficient gamma_n (deterministic CARA only)."""
        p = self.params
        if "gammas" in p:
            return float(p["gammas"][n - self.n_range[0]])
        return float(p.get("scale", 1.0)) * float(p.get("base", 2.0)) ** n

    def member(self, n, market=None):
        p = self.params
        kind = self.kind
        if kind == "cara":
            U = CARA(self.gamma(n), anchor=p.get("anchor", self.x0))
        elif kind == "crra":
            betas = p.get("betas")
            U = CRRA(betas[n - self.n_range[0]] if betas else p["beta"])
        elif kind == "custom-table":
            tables = p.get("tables")
            xs, us = (tables[n - self.n_range[0]] if tables else (p["x"], p["u"]))
            U = CustomTable(xs, us)
        elif kind == "random-cara":
            U = RandomCARA(self.random_coefficients(n, market), anchor=p.get("anchor", self.x0))
        elif kind == "shifted-reference":
            base = UtilityFamily(p["base_kind"], p["base_params"], self.x0, self.n_range).member(n)
            if "reference" not in p and (market is None or market.claim is None):
                raise UtilityError("shifted-reference utilities need a reference payoff")
            ref = np.asarray(p["reference"], float) if "reference" in p else market.claim.values
            U = Shifted(base, ref)
        else:
            raise UtilityError(f"unknown utility kind {kind!r}")
        if self.normalize:
            U = normalized(U, self.x0)
        return U

    def random_coefficients(self, n, market):
        if self.coefficients is not None and str(n) in self.coefficients:
            tab = self.coefficients[str(n)]
            if market is None:
                raise UtilityError("a market is needed to map leaf ids")
            out = np.empty(len(market.tree.leaves))
            for k, leaf in enumerate(market.tree.leaves):
                out[k] = float(tab[str(market.tree.ids[leaf])])
            return out
        if market is None:
            raise UtilityError("a market is needed for random coefficients")
        b, B = self.bounds(n)
        return uniform_coefficients(b, B, len(market.tree.leaves))

    def bounds(self, n):
        """[b_n, B_n] for random-cara: b_n = b_scale * n**b_power, B_n = b_n + width."""
        p = self.params
        b = float(p.get("b_scale", 1.0)) * n ** float(p.get("b_power", 1.0))
        return b, b + float(p.get("width", 1.0))

    def risk_aversion_envelope(self, n, market=None):
        """A deterministic lower bound of r_n over leaves and wealth, if one is known."""
        if self.kind == "cara":
            return self.gamma(n)
        if self.kind == "random-cara":
            return float(self.random_coefficients(n, market).min())
        return None


def normalized(U, x0):
    """(U - U(x0)) / U'(x0) for non-random U; U itself otherwise."""
    if U.random:
        return U
    return Affine(U, 1.0 / float(U.du(x0)), -float(U.u(x0)) / float(U.du(x0)))


_FAMILY_FIELDS = {"kind", "params", "x0", "n_range", "coefficients", "normalize"}


def parse_utility(data):
    if not isinstance(data, dict):
        raise UtilityError("utility file must contain a JSON object")
    unknown = set(data) - _FAMILY_FIELDS
    if unknown:
        raise UtilityError(f"unknown field(s): {sorted(unknown)}")
    if "kind" not in data:
        raise UtilityError("missing field 'kind'")
    return UtilityFamily(kind=data["kind"], params=data.get("params", {}), x0=float(data.get("x0", 1.0)),
                         n_range=tuple(data.get("n_range", (1, 20))),
                         coefficients=data.get("coefficients"), normalize=bool(data.get("normalize", False)))


def load_utility(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UtilityError(f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_utility(data)


def read_utility(path):
    with open(path, encoding="utf-8") as fh:
        return load_utility(fh.read())


# ---------------------------------------------------------------------------
# risk aversion

def risk_aversion(U, x, leaf=None):
    """r(x) = -U''(x) / U'(x); finite differences for tabulated utilities."""
    if x <= 0:
        raise UtilityError("domain error: risk aversion needs x > 0")
    if U.random and leaf is None:
        raise UtilityError("random utility needs a leaf")
    if isinstance(U, Affine):
        return risk_aversion(U.base, x, leaf)
    if isinstance(U, CRRA):
        return (1 - U.beta) / x
    if isinstance(U, CARA):
        return U.gamma
    if isinstance(U, RandomCARA):
        return float(U.R[leaf])
    d1 = float(U.du(x, leaf))
    d2 = float(U.d2u(x, leaf))
    if d1 <= 0:
        raise UtilityError("U' must be positive")
    return -d2 / d1


def family_risk_aversion(family, n, x, leaf=None, market=None):
    return risk_aversion(family.member(n, market), x, leaf)


# ---------------------------------------------------------------------------
# certainty equivalents

def _bisect_increasing(f, target, lo=0.0, hi=None, tol=BISECT_TOL):
    """Root of an increasing f(y) = target on [lo, hi], growing hi geometrically."""
    hi = max(1.0, lo + 1.0) if hi is None else hi
    grow = 0
    while f(hi) < target:
        hi = lo + 2 * (hi - lo)
        grow += 1
        if grow > 200:
            raise UtilityError("no bracketing upper bound")
    it = 0
    while hi - lo > tol and it < BISECT_MAX_ITER:
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
        it += 1
    return 0.5 * (lo + hi)


def _expect(P, vals):
    P = np.asarray(P, float)
    mask = P > 0
    v = vals[mask]
    if np.any(np.isneginf(v)):
        return -math.inf
    return float(P[mask] @ v)


def certainty_equivalent_mono(U, P, G):
    """e(G, P) with E_P U(., e) = E_P U(., G) for leaf probabilities ``P``."""
    G = G.values if isinstance(G, Claim) else np.asarray(G, float)
    P = np.asarray(P, float)
    charged = P > 0
    if np.any(G[charged] < 0) or not np.all(np.isfinite(G[charged])):
        raise UtilityError("claim must be finite and nonnegative where the prior charges")
    leaves = np.arange(len(G))
    lu = U.u(G, leaves if U.random else None)
    target = _expect(P, np.asarray(lu))
    if not math.isfinite(target):
        raise UtilityError("not integrable")
    f = lambda y: _expect(P, np.asarray(U.u(np.full(len(G), y), leaves if U.random else None)))
    hi = max(1.0, float(G[charged].max()))
    return _bisect_increasing(f, target, 0.0, hi)


@dataclass
class CEReport:
    e: float                               # multiple-priors certainty equivalent
    per_prior: list                        # e(G, P) for each extreme pasting
    premia: list                           # E_P G - e(G, P)
    premium: float                         # sup over extreme pastings of the premia
    cross_check: float | None = None       # |e - min_P e(G, P)| for non-random U
    notes: list = field(default_factory=list)


def robust_value_constant(U, market, y):
    """inf over priors of E_P U(., y) for a constant wealth y."""
    n = len(market.tree.leaves)
    if not U.random:
        return float(U.u(y))
    return robust_expectation(market, U.u(np.full(n, y), np.arange(n)), "min")


def certainty_equivalent_robust(U, market, G, pasting_limit=4096, check_grid=None):
    """e(G) with inf_P E_P U(., e) = inf_P E_P U(., G), plus per-prior diagnostics."""
    G = G.values if isinstance(G, Claim) else np.asarray(G, float)
    k = market.charged_leaves
    if np.any(G[k] < 0):
        raise UtilityError("claim must be nonnegative on charged leaves")
    n = len(market.tree.leaves)
    leaves = np.arange(n)
    gvals = np.where(np.isfinite(G), G, 0.0)
    target = robust_expectation(market, U.u(gvals, leaves if U.random else None), "min")
    notes = []
    if U.random:
        zs = np.linspace(0, max(1.0, float(G[k].max())), 11) if check_grid is None else check_grid
        for z in zs:
            if robust_expectation(market, U.du(np.full(n, z), leaves), "min") <= 0:
                raise UtilityError("inf_P E_P U'(., z) is not positive")
    psi = lambda y: robust_value_constant(U, market, y)
    lo, hi = 0.0, max(1.0, float(G[k].max()))
    if psi(hi) - psi(lo) <= 1e-14 * max(1.0, abs(psi(lo))):
        raise UtilityError("monotonicity degenerate: flat robust value function")
    if not U.random:
        e = float(U.inverse(target))
    else:
        e = _bisect_increasing(psi, target, lo, hi)
    per_prior, premia = [], []
    if n_pastings(market) <= pasting_limit:
        for P in iter_pastings(market, pasting_limit):
            ep = certainty_equivalent_mono(U, P, G)
            per_prior.append(ep)
            premia.append(float(P[k] @ G[k]) - ep)
    else:
        notes.append("too many extreme pastings for per-prior diagnostics")
    cross = None
    if per_prior and not U.random:
        cross = abs(e - min(per_prior))
    premium = max(premia) if premia else math.nan
    return CEReport(e=e, per_prior=per_prior, premia=premia, premium=premium, cross_check=cross, notes=notes)


# ---------------------------------------------------------------------------
# audits

@dataclass
class U1Report:
    rows: list              # (n, |U+|_1, |U-|_1, |U'|_q)
    sup_pos: float
    sup_neg: float
    sup_deriv: float
    stable: bool
    passes: bool
    q: float


def _capacity_norm(market, values, q=1.0):
    """sup over priors of (E_P |X|^q)^(1/q)."""
    v = np.abs(np.asarray(values, float)) ** q
    return robust_expectation(market, v, "max") ** (1 / q)


def _tail_nonincreasing(seq, rel=1e-12):
    seq = list(seq)
    tail = seq[-max(2, len(seq) // 4):]
    return all(b <= a + rel * max(1.0, abs(a)) for a, b in zip(tail, tail[1:]))


def audit_assumption_u1(family, market, x0=None, q=2.0, normalize=None):
    """sup_n of the capacity norms of U_n^{+-}(., x0) and U_n'(., x0)."""
    x0 = family.x0 if x0 is None else x0
    n_leaves = len(market.tree.leaves)
    leaves = np.arange(n_leaves)
    rows = []
    for n in family.indices:
        U = family.member(n, market)
        if normalize:
            U = normalized(U, x0)
        u = np.asarray(U.u(np.full(n_leaves, x0), leaves if U.random else None), float) * np.ones(n_leaves)
        du = np.asarray(U.du(np.full(n_leaves, x0), leaves if U.random else None), float) * np.ones(n_leaves)
        rows.append((n, _capacity_norm(market, np.maximum(u, 0)), _capacity_norm(market, np.maximum(-u, 0)),
                     _capacity_norm(market, du, q)))
    arr = np.array([r[1:] for r in rows])
    sups = arr.max(axis=0)
    stable = all(_tail_nonincreasing(arr[:, j]) for j in range(3))
    return U1Report(rows=rows, sup_pos=float(sups[0]), sup_neg=float(sups[1]), sup_deriv=float(sups[2]),
                    stable=stable, passes=bool(stable and np.all(np.isfinite(sups))), q=q)


@dataclass
class UNReport:
    table: dict             # (x, M) -> list of inf_P P(U_n(x) <= -M) over n
    first_hit: dict         # (x, M) -> first n reaching 1, or None
    envelope: list | None   # deterministic lower bound of r_n per n
    route3: bool | None     # envelope strictly increasing over the range
    passes: bool


def audit_assumption_un(family, market, M_list, x_list, x0=None):
    """inf_P P(U_n(., x) <= -M) for x in [0, x0) and each M; plus the risk-aversion route."""
    x0 = family.x0 if x0 is None else x0
    n_leaves = len(market.tree.leaves)
    leaves = np.arange(n_leaves)
    table, first = {}, {}
    for x in x_list:
        if not 0 <= x < x0:
            raise UtilityError("audit points must lie in [0, x0)")
        for M in M_list:
            probs = []
            for n in family.indices:
                U = family.member(n, market)
                u = np.asarray(U.u(np.full(n_leaves, x), leaves if U.random else None), float) * np.ones(n_leaves)
                probs.append(float(robust_expectation(market, (u <= -M).astype(float), "min")))
            table[(x, M)] = probs
            hit = [n for n, p in zip(family.indices, probs) if p >= 1.0 - 1e-15]
            first[(x, M)] = hit[0] if hit else None
    env = [family.risk_aversion_envelope(n, market) for n in family.indices]
    route3 = None
    if all(e is not None for e in env):
        route3 = bool(all(b > a for a, b in zip(env, env[1:])))
    else:
        env = None
    passes = all(v is not None for v in first.values())
    return UNReport(table=table, first_hit=first, envelope=env, route3=route3, passes=passes)
