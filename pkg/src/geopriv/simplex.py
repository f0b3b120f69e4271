"""Dense two-phase revised simplex.

Solves ``min c @ x`` subject to ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq`` and
``x >= 0``.  The basis inverse is kept explicitly and updated by elementary
row operations, with a full refactorisation every ``refactor_every`` pivots.

Pricing is Dantzig's most-negative reduced cost.  After ``bland_after``
consecutive degenerate pivots the solver switches to Bland's smallest-index
rule and stays there until a pivot makes strict progress, which rules out
cycling.  The leaving variable is the lowest-index basic variable among
ratio-test ties whose pivot element is within a factor 1e3 of the largest
tied pivot, so the pivot sequence is fully deterministic and never pivots on
a numerically negligible entry.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from geopriv.errors import SolverError


@dataclasses.dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    duals_ub: np.ndarray
    duals_eq: np.ndarray
    iterations: int


def _dense(A, ncols):
    if A is None:
        return np.zeros((0, ncols))
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float).reshape(-1, ncols)


class _Tableau:
    """Working state of one simplex run over a fixed column set."""

    def __init__(self, A, b, basis, tol, refactor_every):
        self.A = A
        self.b = b
        self.basis = np.array(basis)
        self.tol = tol
        self.refactor_every = refactor_every
        self.refactor()

    def refactor(self):
        self.Binv = np.linalg.inv(self.A[:, self.basis])
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < 1e-13] = 0.0
        self.since_refactor = 0

    def pivot(self, q, r, u):
        """Bring column ``q`` into the basis at row ``r``; ``u = Binv @ A[:, q]``."""
        piv = u[r]
        row = self.Binv[r] / piv
        theta = self.xB[r] / piv
        self.Binv -= np.outer(u, row)
        self.Binv[r] = row
        self.xB -= theta * u
        self.xB[r] = theta
        self.xB[np.abs(self.xB) < 1e-13] = 0.0
        self.basis[r] = q
        self.since_refactor += 1
        if self.since_refactor >= self.refactor_every:
            self.refactor()

    def run(self, cost, allowed, max_iter, bland_after):
        """Optimise ``cost`` over columns where ``allowed`` is True."""
        tol = self.tol
        iterations = 0
        degenerate_run = 0
        bland = False
        while True:
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.A
            d[self.basis] = 0.0
            candidates = np.flatnonzero(allowed & (d < -tol))
            if candidates.size == 0:
                return iterations
            if iterations >= max_iter:
                raise SolverError(f"iteration cap {max_iter} exceeded", self.primal())
            if bland:
                q = candidates[0]
            else:
                q = candidates[np.argmin(d[candidates])]
            u = self.Binv @ self.A[:, q]
            pos = u > max(tol, 1e-9 * np.abs(u).max())
            if not pos.any():
                raise SolverError("problem is unbounded", self.primal())
            ratios = np.full(u.shape, np.inf)
            ratios[pos] = self.xB[pos] / u[pos]
            tmin = ratios.min()
            ties = np.flatnonzero(ratios <= tmin + tol * max(1.0, tmin))
            # Among tied rows keep only well-conditioned pivots, then lowest index.
            ties = ties[u[ties] >= 1e-3 * u[ties].max()]
            r = ties[np.argmin(self.basis[ties])]
            if tmin <= tol:
                degenerate_run += 1
                if degenerate_run >= bland_after:
                    bland = True
            else:
                degenerate_run = 0
                bland = False
            self.pivot(q, r, u)
            iterations += 1

    def primal(self):
        x = np.zeros(self.A.shape[1])
        x[self.basis] = self.xB
        return x


def revised_simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol=1e-9,
                    max_iter=200_000, bland_after=50, refactor_every=64):
    """Solve a linear program in inequality/equality form.

    Args:
        c: cost vector of length n.
        A_ub, b_ub: inequality rows ``A_ub @ x <= b_ub`` (dense or sparse).
        A_eq, b_eq: equality rows.
        tol: feasibility and optimality tolerance.
        max_iter: total pivot budget across both phases.

    Returns:
        :class:`SimplexResult` with primal point, objective and row duals
        (``duals_ub <= 0`` in the ``c - A.T @ y >= 0`` sign convention).

    Raises:
        SolverError: infeasible, unbounded, or the iteration cap was hit.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    Aub = _dense(A_ub, n)
    Aeq = _dense(A_eq, n)
    bub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    beq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = Aub.shape[0], Aeq.shape[0]
    m = m_ub + m_eq

    # Rows are flipped so every right-hand side is non-negative.
    sign = np.ones(m)
    sign[:m_ub][bub < 0] = -1.0
    sign[m_ub:][beq < 0] = -1.0
    rows = np.vstack([Aub, Aeq]) * sign[:, None]
    b = np.concatenate([bub, beq]) * sign

    slack = np.zeros((m, m_ub))
    slack[np.arange(m_ub), np.arange(m_ub)] = sign[:m_ub]
    needs_art = np.concatenate([sign[:m_ub] < 0, np.ones(m_eq, dtype=bool)])
    art_rows = np.flatnonzero(needs_art)
    art = np.zeros((m, art_rows.size))
    art[art_rows, np.arange(art_rows.size)] = 1.0
    A = np.hstack([rows, slack, art])
    N = A.shape[1]
    first_art = n + m_ub

    basis = np.empty(m, dtype=int)
    ub_ok = np.flatnonzero(~needs_art[:m_ub])
    basis[ub_ok] = n + ub_ok
    basis[art_rows] = first_art + np.arange(art_rows.size)

    tab = _Tableau(A, b, basis, tol, refactor_every)
    iterations = 0
    if art_rows.size:
        phase1 = np.zeros(N)
        phase1[first_art:] = 1.0
        iterations += tab.run(phase1, np.ones(N, dtype=bool), max_iter, bland_after)
        infeas = tab.xB[tab.basis >= first_art].sum()
        if infeas > tol * max(1.0, np.abs(b).max(initial=0.0)) * 10:
            raise SolverError(f"problem is infeasible (phase-1 residual {infeas:.3g})")
        _drive_out_artificials(tab, first_art, tol)

    cost = np.concatenate([c, np.zeros(N - n)])
    allowed = np.ones(N, dtype=bool)
    allowed[first_art:] = False
    iterations += tab.run(cost, allowed, max_iter - iterations, bland_after)
    tab.refactor()

    x = np.clip(tab.primal()[:n], 0.0, None)
    y = (cost[tab.basis] @ tab.Binv) * sign
    return SimplexResult(
        x=x,
        objective=float(c @ x),
        duals_ub=y[:m_ub],
        duals_eq=y[m_ub:],
        iterations=iterations,
    )


def _drive_out_artificials(tab, first_art, tol):
    """Pivot zero-level artificials out of the basis where a real column allows."""
    for r in np.flatnonzero(tab.basis >= first_art):
        row = tab.Binv[r] @ tab.A[:, :first_art]
        row[tab.basis[tab.basis < first_art]] = 0.0
        cand = np.flatnonzero(np.abs(row) > tol)
        if cand.size:
            q = cand[0]
            tab.pivot(q, r, tab.Binv @ tab.A[:, q])
    tab.refactor()
