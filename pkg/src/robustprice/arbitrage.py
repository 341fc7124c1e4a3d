"""Quasi-sure no-arbitrage checks, support subspaces and the alpha constant.

Everything is local to a node: on a finite tree NA holds globally iff no
charged node admits a one-step arbitrage over its charged children.
"""
from dataclasses import dataclass
import math

import numpy as np

from .lp import linprog

RANK_TOL = 1e-10


@dataclass(frozen=True)
class DSpace:
    basis: np.ndarray      # (d, k) orthonormal columns
    linear: bool = True    # False when the affine hull of the outcomes misses 0


@dataclass(frozen=True)
class NodeNAReport:
    node: int
    node_id: object
    na_holds: bool
    arbitrage_direction: np.ndarray | None
    D_basis: np.ndarray
    alpha: float | None = None
    alpha_note: str = ""


@dataclass(frozen=True)
class NAReport:
    holds: bool
    nodes: list

    def failing(self):
        return [r for r in self.nodes if not r.na_holds]


def one_step_arbitrage(dS, tol=1e-10):
    """Return an arbitrage direction for outcomes ``dS`` (m, d) or None.

    Maximises the total gain sum_j h.dS_j over the box |h|_inf <= 1 subject to
    h.dS_j >= 0 for every outcome; a positive optimum is an arbitrage.
    """
    dS = np.atleast_2d(np.asarray(dS, float))
    m, d = dS.shape
    scale = max(1.0, np.abs(dS).max())
    A_ub = np.vstack([-dS, np.eye(d), -np.eye(d)])
    b_ub = np.concatenate([np.zeros(m), np.ones(2 * d)])
    res = linprog(-dS.sum(axis=0), A_ub, b_ub, free=np.ones(d, bool))
    if -res.fun > tol * scale:
        return res.x
    return None


def span_basis(vectors, tol=RANK_TOL):
    vectors = np.atleast_2d(np.asarray(vectors, float))
    d = vectors.shape[1]
    if vectors.size == 0:
        return np.zeros((d, 0))
    scale = max(1.0, np.abs(vectors).max())
    _, s, vt = np.linalg.svd(vectors, full_matrices=False)
    rank = int((s > tol * scale).sum())
    return vt[:rank].T.copy()


def compute_D(market, node):
    """Orthonormal basis of the span of the charged one-step increments."""
    _, dS, _ = market.kernel(node)
    basis = span_basis(dS)
    linear = one_step_arbitrage(dS) is None
    if not linear:
        # affine hull of the outcomes: linear part is the span of differences
        diffs = dS[1:] - dS[0]
        basis = span_basis(diffs) if len(diffs) else np.zeros((dS.shape[1], 0))
    return DSpace(basis=basis, linear=linear)


MAX_DIRECTIONS = 2 ** 16


def sphere_directions(k, n):
    """Deterministic unit directions in R^k and a covering radius for them."""
    if k == 1:
        return np.array([[1.0], [-1.0]]), 0.0
    if k == 2:
        ang = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(ang), np.sin(ang)]), 2 * math.sin(math.pi / (2 * n))
    if k == 3:
        i = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * i / n)
        theta = np.pi * (1 + 5 ** 0.5) * i
        pts = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
        return pts, 4.0 / math.sqrt(n)  # conservative estimate of the Fibonacci covering radius
    rng = np.random.default_rng(12345)
    pts = rng.normal(size=(n, k))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts, 4.0 * n ** (-1.0 / (k - 1))


def _alpha_ok(alpha, proj, ext):
    # for every direction some extreme gives P(h.dS < -alpha) > alpha
    loss = (proj < -alpha).astype(float)        # (n_dir, m)
    prob = loss @ ext.T                          # (n_dir, K)
    return bool(np.all(prob.max(axis=1) > alpha))


def compute_alpha(market, node, grid_resolution=20, n_directions=256):
    """Largest dyadic alpha certified for the quantitative NA condition at ``node``.

    Returns ``(alpha, note)``. For dim D = 1 the direction set {+-1} is exact;
    for higher dimensions the grid value is reduced by covering radius times
    the largest increment norm, which keeps it a valid lower bound.
    ``alpha = inf`` when D = {0} (vacuous condition).
    """
    _, dS, ext = market.kernel(node)
    basis = market.d_spaces[int(node)].basis
    k = basis.shape[1]
    if k == 0:
        return math.inf, "not applicable: D = {0}"
    w = dS @ basis
    reach = float(np.linalg.norm(dS, axis=1).max())
    steps = 2 ** grid_resolution
    n_dir = n_directions
    while True:
        dirs, radius = sphere_directions(k, n_dir)
        proj = dirs @ w.T                        # (n_dir, m)
        lo, hi = 0, steps
        if not _alpha_ok(0.0, proj, ext):
            return 0.0, "no positive alpha at this resolution; review manually"
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _alpha_ok(mid / steps, proj, ext):
                lo = mid
            else:
                hi = mid
        alpha = lo / steps
        if k == 1:
            return alpha, "exact direction set"
        corrected = alpha - radius * reach
        # refine the directions until the correction costs under a tenth
        if corrected >= 0.9 * alpha or n_dir >= MAX_DIRECTIONS:
            break
        n_dir *= 4
    if corrected <= 0:
        return 0.0, "direction grid too coarse for a positive certificate"
    return corrected, f"grid lower bound (covering-radius corrected, {n_dir} directions)"


def check_na(market, alpha_grid=None):
    """Per-node NA reports for every charged non-leaf node and the global verdict."""
    reports = []
    for node in market.charged_internal:
        _, dS, _ = market.kernel(node)
        h = one_step_arbitrage(dS)
        space = compute_D(market, node)
        alpha, note = None, ""
        if h is None and alpha_grid is not None:
            alpha, note = compute_alpha(market, node, grid_resolution=alpha_grid)
        if h is not None:
            h = h / np.abs(h).max()
        reports.append(NodeNAReport(
            node=int(node), node_id=market.tree.ids[node], na_holds=h is None,
            arbitrage_direction=h, D_basis=space.basis, alpha=alpha, alpha_note=note))
    return NAReport(holds=all(r.na_holds for r in reports), nodes=reports)


def alphas(market, grid_resolution=20):
    """alpha per charged internal node."""
    return {int(n): compute_alpha(market, n, grid_resolution)[0] for n in market.charged_internal}
