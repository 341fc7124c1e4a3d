"""min_y max_k f_k(y) for finitely many smooth convex f_k.

The pieces used here are log-sum-exp functions of affine maps,
f_k(y) = log sum_j exp(a_kj - (W y)_j), which arise from exponential
utility after taking logs. Two solvers:

* ``minimize_max_1d`` - bisection on the sign of a subgradient (k = 1);
* ``minimize_max``    - log-barrier Newton on the epigraph, optionally with
  linear inequality constraints ``A y <= b``.
"""
from dataclasses import dataclass
import math

import numpy as np


@dataclass(frozen=True)
class MinimaxResult:
    y: np.ndarray
    value: float
    iterations: int
    gap: float


class LSEPieces:
    """f_k(y) = logsumexp_j(a[k, j] - (W @ y)[j]); entries a = -inf are dropped."""

    def __init__(self, a, W):
        self.a = np.atleast_2d(np.asarray(a, float))
        self.W = np.atleast_2d(np.asarray(W, float))
        self.K, self.m = self.a.shape
        self.dim = self.W.shape[1]

    def _soft(self, y):
        z = self.a - self.W @ y                 # (K, m); -inf entries give weight 0
        zmax = z.max(axis=1, keepdims=True)
        e = np.exp(z - zmax)
        s = e.sum(axis=1, keepdims=True)
        return zmax[:, 0] + np.log(s[:, 0]), e / s

    def value(self, y):
        return self._soft(np.asarray(y, float))[0]

    def derivatives(self, y):
        vals, soft = self._soft(np.asarray(y, float))
        grads = -soft @ self.W                  # (K, dim)
        hess = np.einsum("kj,ja,jb->kab", soft, self.W, self.W) - np.einsum("ka,kb->kab", grads, grads)
        return vals, grads, hess


def minimize_max_1d(pieces, tol=1e-13, max_iter=400):
    """Bisection on a subgradient of max_k f_k over the real line (dim = 1)."""
    def slope(y):
        vals, grads, _ = pieces.derivatives(np.array([y]))
        return grads[int(np.argmax(vals)), 0]

    lo, hi = -1.0, 1.0
    it = 0
    while slope(lo) > 0:
        lo, hi = 2 * lo, lo
        it += 1
        if it > 2000:
            raise ArithmeticError("max of pieces is unbounded below")
    while slope(hi) < 0:
        lo, hi = hi, 2 * hi
        it += 1
        if it > 2000:
            raise ArithmeticError("max of pieces is unbounded below")
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)) and it < max_iter:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if slope(mid) > 0:
            hi = mid
        else:
            lo = mid
        it += 1
    cand = [lo, hi, 0.5 * (lo + hi)]
    vals = [float(pieces.value(np.array([c])).max()) for c in cand]
    k = int(np.argmin(vals))
    return MinimaxResult(np.array([cand[k]]), vals[k], it, hi - lo)


def minimize_max(pieces, y0=None, A_ub=None, b_ub=None, tol=1e-10, mu=20.0, max_newton=50):
    """Epigraph log-barrier method for min_y max_k f_k(y) s.t. A_ub y <= b_ub.

    ``y0`` must satisfy the linear constraints strictly when they are given.
    The returned ``gap`` is the barrier duality bound (K + L) / tau.
    """
    n = pieces.dim
    y = np.zeros(n) if y0 is None else np.asarray(y0, float).copy()
    A = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, float))
    b = np.zeros(0) if b_ub is None else np.asarray(b_ub, float)
    if A.shape[0] and np.any(A @ y >= b):
        raise ValueError("starting point is not strictly feasible")
    m_cons = pieces.K + A.shape[0]
    t = float(pieces.value(y).max()) + 1.0
    scale = max(1.0, abs(t))
    tau = m_cons / scale
    total = 0

    def barrier(y, t, tau):
        s = t - pieces.value(y)
        r = b - A @ y
        if np.any(s <= 0) or np.any(r <= 0):
            return math.inf
        return tau * t - np.log(s).sum() - np.log(r).sum()

    while True:
        for _ in range(max_newton):
            vals, grads, hess = pieces.derivatives(y)
            s = t - vals
            r = b - A @ y
            # gradient and Hessian in (y, t)
            g = np.zeros(n + 1)
            g[:n] = (grads / s[:, None]).sum(axis=0) + (A / r[:, None]).sum(axis=0)
            g[n] = tau - (1.0 / s).sum()
            H = np.zeros((n + 1, n + 1))
            H[:n, :n] = (hess / s[:, None, None]).sum(axis=0)
            H[:n, :n] += np.einsum("ka,kb->ab", grads / s[:, None], grads / s[:, None])
            H[:n, :n] += np.einsum("la,lb->ab", A / r[:, None], A / r[:, None])
            H[:n, n] = H[n, :n] = -(grads / s[:, None] ** 2).sum(axis=0)
            H[n, n] = (1.0 / s ** 2).sum()
            try:
                step = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(H, g, rcond=None)[0]
            dec = float(-g @ step)
            total += 1
            if dec / 2 <= 1e-10:
                break
            f0 = barrier(y, t, tau)
            lam = 1.0
            while lam > 1e-16:
                cand = barrier(y + lam * step[:n], t + lam * step[n], tau)
                if cand <= f0 - 0.25 * lam * dec:
                    break
                lam *= 0.5
            else:
                break
            y = y + lam * step[:n]
            t = t + lam * step[n]
        gap = m_cons / tau
        value = float(pieces.value(y).max())
        if gap <= tol * max(1.0, abs(value)):
            return MinimaxResult(y, value, total, gap)
        tau *= mu
