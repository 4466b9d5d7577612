"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Solves   min c.x   s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0.

Meant for the small, highly degenerate separability programs (n <= 500,
d <= 64); every pivot is a full-tableau update.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class LPStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    status: LPStatus
    iterations: int

    @property
    def success(self) -> bool:
        return self.status is LPStatus.OPTIMAL


class _Tableau:
    def __init__(self, T, basis, tol):
        self.T = T
        self.basis = basis
        self.tol = tol
        self.iterations = 0

    def pivot(self, row, col):
        T = self.T
        T[row] /= T[row, col]
        for i in range(T.shape[0]):
            if i != row and T[i, col] != 0.0:
                T[i] -= T[i, col] * T[row]
        self.basis[row] = col
        self.iterations += 1

    def run(self, allowed, max_iter):
        """Minimize the objective held in the last row over columns in ``allowed``."""
        T, tol = self.T, self.tol
        m = T.shape[0] - 1
        while True:
            if self.iterations >= max_iter:
                return LPStatus.ITERATION_LIMIT
            reduced = T[-1, :-1]
            # Bland: lowest-index improving column
            entering = next((j for j in allowed if reduced[j] < -tol), None)
            if entering is None:
                return LPStatus.OPTIMAL
            col = T[:m, entering]
            rows = np.flatnonzero(col > tol)
            if rows.size == 0:
                return LPStatus.UNBOUNDED
            ratios = T[rows, -1] / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + tol * max(1.0, abs(best))]
            # Bland: among tied rows leave the lowest-index basic variable
            leave = min(ties, key=lambda i: self.basis[i])
            self.pivot(leave, entering)


def linprog_simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, *, maximize=False,
                    tol=1e-10, max_iter=50_000) -> LPResult:
    c = np.asarray(c, dtype=float).reshape(-1)
    nvar = c.shape[0]
    A_ub = np.zeros((0, nvar)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).reshape(-1)
    A_eq = np.zeros((0, nvar)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    if A_ub.shape != (b_ub.shape[0], nvar) or A_eq.shape != (b_eq.shape[0], nvar):
        raise ValueError("constraint shapes do not match c")
    cost = -c if maximize else c

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    # columns: originals | one slack per inequality | artificials as needed
    neg_ub = b_ub < 0
    needs_art = np.concatenate([neg_ub, np.ones(m_eq, dtype=bool)])
    n_art = int(needs_art.sum())
    n_cols = nvar + m_ub + n_art
    T = np.zeros((m + 1, n_cols + 1))
    basis = [0] * m
    art = nvar + m_ub
    for i in range(m_ub):
        sign = -1.0 if neg_ub[i] else 1.0
        T[i, :nvar] = sign * A_ub[i]
        T[i, nvar + i] = sign
        T[i, -1] = sign * b_ub[i]
    for k in range(m_eq):
        i = m_ub + k
        sign = -1.0 if b_eq[k] < 0 else 1.0
        T[i, :nvar] = sign * A_eq[k]
        T[i, -1] = sign * b_eq[k]
    for i in range(m):
        if needs_art[i]:
            T[i, art] = 1.0
            basis[i] = art
            art += 1
        else:
            basis[i] = nvar + i
    tab = _Tableau(T, basis, tol)
    art_cols = range(nvar + m_ub, n_cols)

    if n_art:
        # phase 1: minimize the sum of artificials
        T[-1, :] = 0.0
        T[-1, list(art_cols)] = 1.0
        for i in range(m):
            if needs_art[i]:
                T[-1] -= T[i]
        status = tab.run(range(n_cols), max_iter)
        if status is LPStatus.ITERATION_LIMIT:
            return LPResult(np.full(nvar, np.nan), np.nan, status, tab.iterations)
        scale = max(1.0, np.abs(T[:m, -1]).max(initial=0.0))
        if -T[-1, -1] > 1e-8 * scale:
            return LPResult(np.full(nvar, np.nan), np.nan, LPStatus.INFEASIBLE, tab.iterations)
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = []
        for i in range(m):
            if tab.basis[i] >= nvar + m_ub:
                cand = np.flatnonzero(np.abs(T[i, :nvar + m_ub]) > tol)
                if cand.size:
                    tab.pivot(i, int(cand[0]))
                    keep.append(i)
            else:
                keep.append(i)
        done = tab.iterations
        T = np.vstack([T[keep], T[-1:]])
        T = np.delete(T, list(art_cols), axis=1)
        tab = _Tableau(T, [tab.basis[i] for i in keep], tol)
        tab.iterations = done
        m = len(keep)
        n_cols = nvar + m_ub

    # phase 2
    T = tab.T
    T[-1, :] = 0.0
    T[-1, :nvar] = cost
    for i, b in enumerate(tab.basis):
        if T[-1, b] != 0.0:
            T[-1] -= T[-1, b] * T[i]
    status = tab.run(range(n_cols), max_iter)
    x = np.zeros(n_cols)
    for i, b in enumerate(tab.basis):
        x[b] = T[i, -1]
    x = x[:nvar]
    return LPResult(x, float(c @ x), status, tab.iterations)
