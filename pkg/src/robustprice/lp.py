"""Dense two-phase simplex for the small linear programs used across the package.

Problems here have at most a few hundred variables, so a tableau with
Bland's anti-cycling rule is plenty. The final basic solution is re-solved
from the original data to recover full double precision.
"""
from dataclasses import dataclass

import numpy as np


class InfeasibleError(Exception):
    """Raised when the constraints admit no solution."""


class UnboundedError(Exception):
    """Raised when the objective is unbounded below."""


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    fun: float
    iterations: int


def _pivot(tab, row, col):
    tab[row] /= tab[row, col]
    piv = tab[row]
    colvals = tab[:, col].copy()
    colvals[row] = 0.0
    tab -= np.outer(colvals, piv)


def _run_simplex(tab, basis, ncols, tol, max_iter):
    """Minimise the objective stored in the last row of ``tab`` (reduced costs)."""
    m = tab.shape[0] - 1
    it = 0
    while True:
        cost = tab[-1, :ncols]
        entering = np.flatnonzero(cost < -tol)
        if entering.size == 0:
            return it
        col = int(entering[0])  # Bland
        column = tab[:m, col]
        pos = column > tol
        if not pos.any():
            raise UnboundedError("objective unbounded below")
        ratios = np.full(m, np.inf)
        ratios[pos] = tab[:m, -1][pos] / column[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(tab, row, col)
        basis[row] = col
        it += 1
        if it > max_iter:
            raise RuntimeError("simplex iteration limit reached")


def _standard_form(c, A_ub, b_ub, A_eq, b_eq, free):
    n = len(c)
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float).ravel()
    if A_ub.shape[0] == 0:
        A_ub = np.zeros((0, n))
    if A_eq.shape[0] == 0:
        A_eq = np.zeros((0, n))
    free = np.zeros(n, bool) if free is None else np.broadcast_to(np.asarray(free, bool), (n,))
    # split free variables x = x+ - x-
    neg_cols = np.flatnonzero(free)
    cols = np.concatenate([np.eye(n), -np.eye(n)[:, neg_cols]], axis=1)
    c_std = np.asarray(c, float) @ cols
    A = np.vstack([A_ub @ cols, A_eq @ cols]) if (A_ub.size or A_eq.size) else np.zeros((0, cols.shape[1]))
    m_ub = A_ub.shape[0]
    # slacks for the inequality rows
    slack = np.vstack([np.eye(m_ub), np.zeros((A_eq.shape[0], m_ub))])
    A = np.hstack([A, slack])
    c_std = np.concatenate([c_std, np.zeros(m_ub)])
    b = np.concatenate([b_ub, b_eq])
    return c_std, A, b, cols


def linprog(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, free=None,
            tol=1e-11, max_iter=50_000):
    """Minimise ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x == b_eq``.

    Variables are nonnegative unless flagged in ``free``.

    Raises:
        InfeasibleError: no feasible point.
        UnboundedError: objective unbounded below.
    """
    c_std, A, b, cols = _standard_form(c, A_ub, b_ub, A_eq, b_eq, free)
    m, n = A.shape
    if m == 0:
        if np.any(c_std < -tol):
            raise UnboundedError("objective unbounded below")
        return LPResult(np.zeros(len(c)), 0.0, 0)

    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign
    scale = max(1.0, np.abs(A).max(), np.abs(b).max())

    # phase 1 with one artificial per row
    tab = np.zeros((m + 1, n + m + 1))
    tab[:m, :n] = A
    tab[:m, n:n + m] = np.eye(m)
    tab[:m, -1] = b
    tab[-1, :n] = -A.sum(axis=0)
    tab[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    it = _run_simplex(tab, basis, n + m, tol * scale, max_iter)
    if -tab[-1, -1] > 1e-9 * scale * max(1.0, np.abs(b).sum()):
        raise InfeasibleError("no feasible point")

    # drive remaining artificials out of the basis where possible
    keep = np.ones(m, bool)
    for r in range(m):
        if basis[r] >= n:
            nz = np.flatnonzero(np.abs(tab[r, :n]) > tol * scale)
            if nz.size:
                _pivot(tab, r, int(nz[0]))
                basis[r] = int(nz[0])
            else:
                keep[r] = False  # redundant row
    rows = np.flatnonzero(keep)
    tab2 = np.zeros((rows.size + 1, n + 1))
    tab2[:-1, :n] = tab[rows, :n]
    tab2[:-1, -1] = tab[rows, -1]
    basis = [basis[r] for r in rows]
    tab2[-1, :n] = c_std
    for r, j in enumerate(basis):
        tab2[-1] -= c_std[j] * tab2[r]
    it += _run_simplex(tab2, basis, n, tol * max(1.0, np.abs(c_std).max()), max_iter)

    # recover the basic solution from the original data
    z = np.zeros(n)
    B = A[rows][:, basis]
    try:
        z[basis] = np.linalg.solve(B, b[rows])
    except np.linalg.LinAlgError:
        z[basis] = tab2[:-1, -1]
    z = np.maximum(z, 0.0)
    x = cols @ z[:cols.shape[1]]
    return LPResult(x, float(np.asarray(c, float) @ x), it)
