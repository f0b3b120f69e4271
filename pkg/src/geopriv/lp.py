"""Optimal non-symmetric mechanisms on a grid via linear programming.

Variables are the entries ``k[x, z]`` of a mechanism over the ``n`` cells of a
grid, flattened as ``x * n + z``.  The program is

    minimize    sum_{x,z} pi(x) L(d(x, z)) k[x, z]
    subject to  k[x, z] - exp(ell(d(x, x'))) k[x', z] <= 0   for x != x', all z
                sum_z k[x, z] = 1                          for all x
                k >= 0

Pairs with ``ell = inf`` impose nothing and are left out, so a finite ``ell``
gives exactly ``n^2 (n - 1)`` inequalities.

Numerics
--------
Ratios ``exp(eps d)`` reach 1e50 and beyond on realistic grids, which breaks
floating-point simplex codes.  :func:`solve_lp` therefore caps ratio
coefficients at ``ratio_cap`` before solving.  A capped constraint is stricter
than the original one, so the capped optimum is feasible for the real program.
The solution is then repaired against the true ratios by mixing with the
uniform mechanism, which satisfies every constraint with slack ``R - 1``, and
certified with a Lagrangian lower bound built from the row duals: for any
``y <= 0`` on the inequalities,

    sum_x min_z (c - A_ub.T @ y)[x, z]

bounds the optimum from below, because each row of ``k`` ranges over a
probability simplex.  ``gap`` is the distance between that bound and the
returned objective.
"""

from __future__ import annotations

import contextlib
import dataclasses
import math
import os
import sys
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy import optimize

from geopriv.distinguishability import DistinguishabilityFn
from geopriv.errors import ConfigError, SolverError
from geopriv.grid import GeoGrid, cell_distance_matrix, nearest_cell
from geopriv.laplace import PlanarLaplace, RngState
from geopriv.mechanism import DiscreteMechanism, as_matrix
from geopriv.priors import Prior
from geopriv.radial import LinearLoss, LossFn

RATIO_CAP = 1e9
SIMPLEX_MAX_CELLS = 9

GridLike = Union[GeoGrid, np.ndarray]


def _distances(grid: GridLike) -> np.ndarray:
    if isinstance(grid, GeoGrid):
        return cell_distance_matrix(grid)
    d = np.asarray(grid, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ConfigError("expected a grid or a square distance matrix")
    return d


@dataclasses.dataclass
class LpInstance:
    """Linear program for one (grid, prior, ell, loss) combination.

    ``pairs`` holds ``(x, x', z)`` for every inequality row, aligned with
    ``ratios`` (the uncapped ``exp(ell(d(x, x')))``).
    """

    n: int
    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    pairs: np.ndarray
    ratios: np.ndarray

    @property
    def n_variables(self) -> int:
        return self.n * self.n

    @property
    def n_inequalities(self) -> int:
        return self.A_ub.shape[0]

    @property
    def n_equalities(self) -> int:
        return self.A_eq.shape[0]

    def capped(self, cap: float) -> sp.csr_matrix:
        """``A_ub`` with every ratio coefficient clipped to ``cap``."""
        m = self.pairs.shape[0]
        x, xp, z = self.pairs.T
        rows = np.concatenate([np.arange(m), np.arange(m)])
        cols = np.concatenate([x * self.n + z, xp * self.n + z])
        vals = np.concatenate([np.ones(m), -np.minimum(self.ratios, cap)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, self.n_variables))


def build_lp(grid: GridLike, prior, ell: DistinguishabilityFn, loss: LossFn = LinearLoss(),
             loss_matrix: Optional[np.ndarray] = None) -> LpInstance:
    """Assemble the optimal-mechanism program.

    Args:
        grid: a :class:`GeoGrid` (cell centers) or an explicit ``n x n``
            distance matrix.
        prior: :class:`Prior` or weight vector over the ``n`` cells.
        ell: distinguishability function giving the constraint ratios.
        loss: loss of reporting ``z`` from ``x`` as a function of distance.
        loss_matrix: optional explicit ``L[x, z]`` replacing ``loss(d)``.
    """
    d = _distances(grid)
    n = d.shape[0]
    pi = prior.weights if isinstance(prior, Prior) else np.asarray(prior, dtype=float)
    if pi.size != n:
        raise ConfigError(f"prior has {pi.size} weights for {n} cells")
    L = np.asarray(loss(d), dtype=float) if loss_matrix is None else np.asarray(loss_matrix, dtype=float)
    if L.shape != (n, n):
        raise ConfigError("loss matrix shape does not match the grid")
    c = (pi[:, None] * L).ravel()

    x, xp = np.nonzero(~np.eye(n, dtype=bool))
    levels = np.asarray(ell(d[x, xp]), dtype=float).reshape(-1)
    keep = np.isfinite(levels)
    x, xp, levels = x[keep], xp[keep], levels[keep]
    with np.errstate(over="ignore"):
        pair_ratio = np.exp(levels)
    z = np.tile(np.arange(n), x.size)
    pairs = np.column_stack([np.repeat(x, n), np.repeat(xp, n), z]).reshape(-1, 3).astype(int)
    ratios = np.repeat(pair_ratio, n)

    inst = LpInstance(n=n, c=c, A_ub=None, b_ub=np.zeros(pairs.shape[0]),
                      A_eq=sp.csr_matrix((np.ones(n * n), (np.repeat(np.arange(n), n), np.arange(n * n))),
                                         shape=(n, n * n)),
                      b_eq=np.ones(n), pairs=pairs, ratios=ratios)
    inst.A_ub = inst.capped(math.inf)
    return inst


@dataclasses.dataclass
class LpSolution:
    """Solved program.

    Attributes:
        mechanism: repaired, exactly feasible mechanism.
        objective: its expected loss ``c @ k``.
        lower_bound: Lagrangian bound on the true optimum.
        gap: ``objective - lower_bound`` (non-negative up to round-off).
        certified: whether ``gap <= tol * (1 + |objective|)``.
        method: ``"simplex"`` or ``"highs"``.
        repair: weight given to the uniform mechanism by the repair step.
    """

    mechanism: DiscreteMechanism
    objective: float
    lower_bound: float
    gap: float
    certified: bool
    method: str
    iterations: int
    repair: float


def _repair(k: np.ndarray, inst: LpInstance) -> tuple:
    """Mix ``k`` with the uniform mechanism until every true constraint holds."""
    if inst.n_inequalities == 0:
        return k, 0.0
    x, xp, z = inst.pairs.T
    R = inst.ratios
    with np.errstate(over="ignore", invalid="ignore"):
        v = k[x, z] - R * k[xp, z]
    bad = v > 0
    if not bad.any():
        return k, 0.0
    slack = (R[bad] - 1.0) / inst.n
    if np.any(slack <= 0):
        raise SolverError("cannot repair a violated constraint with ratio 1")
    delta = float(np.max(v[bad] / (v[bad] + slack)))
    # A hair more than the exact weight keeps the repaired point strictly inside.
    delta = min(1.0, delta * (1.0 + 1e-6) + 1e-15)
    return (1.0 - delta) * k + delta / inst.n, delta


def _lower_bound(inst: LpInstance, y_ub: np.ndarray) -> float:
    y = np.minimum(np.asarray(y_ub, dtype=float), 0.0)
    y[np.abs(y) < 1e-14] = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        reduced = inst.c - inst.A_ub.T @ y
    if not np.all(np.isfinite(reduced)):
        return -math.inf
    return float(reduced.reshape(inst.n, inst.n).min(axis=1).sum())


@contextlib.contextmanager
def _quiet_stdout():
    """Silence writes to file descriptor 1 (HiGHS debug lines bypass Python)."""
    try:
        fd = sys.stdout.fileno()
    except (AttributeError, OSError, ValueError):
        yield
        return
    sys.stdout.flush()
    saved = os.dup(fd)
    try:
        with open(os.devnull, "w") as null:
            os.dup2(null.fileno(), fd)
            yield
    finally:
        os.dup2(saved, fd)
        os.close(saved)


def _attempts(method: str, n: int) -> list:
    own = [("simplex", 0.5), ("simplex", 0.0), ("simplex", 1.0)]
    highs = [("highs", 0.5), ("highs", 1.0), ("highs", 0.0)]
    if method == "simplex":
        return own
    if method == "highs":
        return highs
    if method == "auto":
        return own[:1] + highs if n <= SIMPLEX_MAX_CELLS else highs
    raise ConfigError(f"unknown LP method {method!r}")


def _run_attempt(inst: LpInstance, A: sp.csr_matrix, solver: str, power: float, ratio_cap: float,
                 tol: float, max_iter: int):
    from geopriv.simplex import revised_simplex

    # Row k - R k' <= 0 is divided by R**power to tame the coefficient range.
    scale = np.maximum(np.minimum(inst.ratios, ratio_cap), 1.0) ** -power
    As = sp.diags(scale) @ A
    if solver == "simplex":
        res = revised_simplex(inst.c, As, inst.b_ub, inst.A_eq, inst.b_eq, tol=tol, max_iter=max_iter)
        return res.x, res.duals_ub * scale, res.iterations
    # Tight tolerances first whatever the acceptance tol: a loose solve costs
    # more in repair than it saves in pivots. The loose one is the fallback
    # for the rare instance where HiGHS hits numerical trouble.
    for feas in sorted({min(max(tol, 1e-10), 1e-9), max(tol, 1e-10)}):
        with _quiet_stdout():
            res = optimize.linprog(
                inst.c, A_ub=As, b_ub=inst.b_ub, A_eq=inst.A_eq, b_eq=inst.b_eq,
                bounds=(0, None), method="highs-ds",
                options={"primal_feasibility_tolerance": feas,
                         "dual_feasibility_tolerance": feas,
                         "maxiter": max_iter, "presolve": True})
        if res.status == 0 and res.x is not None:
            break
    else:
        raise SolverError(f"HiGHS failed: {res.message}", res.x)
    y = res.ineqlin.marginals * scale if inst.n_inequalities else np.zeros(0)
    return res.x, y, int(res.nit)


def solve_lp(inst: LpInstance, tol: float = 1e-9, method: str = "auto",
             ratio_cap: float = RATIO_CAP, max_iter: int = 200_000) -> LpSolution:
    """Solve the program and return an exactly feasible, certified mechanism.

    Each attempt solves a row-scaled copy of the capped program, repairs the
    result against the true ratios and computes a Lagrangian lower bound.
    Attempts run in a fixed order until ``gap <= tol * (1 + |objective|)``;
    the best mechanism and the best bound seen so far are kept.

    Args:
        inst: instance from :func:`build_lp`.
        tol: accepted certified gap, relative to ``1 + |objective|``. HiGHS
            itself runs at feasibility tolerances of at most 1e-9.
        method: ``"simplex"`` (own revised simplex), ``"highs"`` (HiGHS dual
            simplex) or ``"auto"`` (own simplex first up to 9 cells, then
            HiGHS).
        ratio_cap: clip for ``exp(ell)`` coefficients.
        max_iter: pivot budget per attempt.

    Raises:
        SolverError: every attempt failed; ``incumbent`` holds the last
            partial primal point, if any.
    """
    n = inst.n
    A = inst.capped(ratio_cap)
    best, lower, failures, incumbent = None, -math.inf, [], None
    for solver, power in _attempts(method, n):
        try:
            x, y_ub, iters = _run_attempt(inst, A, solver, power, ratio_cap, tol, max_iter)
        except SolverError as exc:
            failures.append(f"{solver}/{power}: {exc}")
            incumbent = exc.incumbent if exc.incumbent is not None else incumbent
            continue
        k = np.clip(x.reshape(n, n), 0.0, None)
        k /= k.sum(axis=1, keepdims=True)
        k, delta = _repair(k, inst)
        objective = float(inst.c @ k.ravel())
        lower = max(lower, _lower_bound(inst, np.where(inst.ratios > ratio_cap, 0.0, y_ub)))
        if best is None or objective < best[1]:
            best = (k, objective, solver, iters, delta)
        if best[1] - lower <= tol * (1.0 + abs(best[1])):
            break
    if best is None:
        raise SolverError("all LP attempts failed: " + "; ".join(failures), incumbent)
    k, objective, solver, iters, delta = best
    gap = max(objective - lower, 0.0)
    return LpSolution(
        mechanism=DiscreteMechanism(k),
        objective=objective,
        lower_bound=lower,
        gap=gap,
        certified=gap <= tol * (1.0 + abs(objective)),
        method=solver,
        iterations=iters,
        repair=delta,
    )


@dataclasses.dataclass(frozen=True)
class MechanismPrivacy:
    holds: bool
    worst_excess: float
    worst_triple: Optional[tuple]

    def __bool__(self):
        return self.holds


def check_mechanism_privacy(mech, grid: GridLike, ell: DistinguishabilityFn,
                            tol: float = 1e-8) -> MechanismPrivacy:
    """Check ``k[x, z] <= exp(ell(d(x, x'))) k[x', z] (1 + tol)`` everywhere.

    ``mech`` may have more output columns than inputs (e.g. outputs on a finer
    grid); ``grid`` then describes the inputs only.

    ``worst_excess`` is the largest ``log(k[x, z] / k[x', z]) - ell(d(x, x'))``
    over finite-budget pairs with ``k[x, z] > 0`` (``inf`` when the
    denominator is zero); ``worst_triple`` is the ``(x, x', z)`` achieving it.
    """
    k = as_matrix(mech)
    d = _distances(grid)
    n = k.shape[0]
    if d.shape[0] != n:
        raise ConfigError(f"mechanism has {n} rows for {d.shape[0]} cells")
    levels = np.asarray(ell(d), dtype=float)
    with np.errstate(divide="ignore"):
        logk = np.log(k)
    worst, where = -math.inf, None
    holds = True
    for x in range(n):
        lv = levels[x].copy()
        lv[x] = math.inf
        with np.errstate(invalid="ignore"):
            excess = logk[x][None, :] - logk - lv[:, None]
        excess[:, k[x] == 0] = -math.inf
        excess[~np.isfinite(lv), :] = -math.inf
        excess[np.isnan(excess)] = -math.inf
        i = int(np.argmax(excess))
        if excess.flat[i] > worst:
            worst = float(excess.flat[i])
            xp, z = divmod(i, k.shape[1])
            where = (x, xp, z)
        if holds:
            with np.errstate(over="ignore", invalid="ignore"):
                bound = np.exp(lv)[:, None] * k * (1.0 + tol)
            bound[np.isnan(bound)] = 0.0
            holds = bool(np.all(k[x][None, :] <= bound))
    return MechanismPrivacy(holds, worst, where)


# ------------------------------------------------------------ Laplace on a grid

_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


def _quadrant_mass(eps: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``P(X > u, Y > v)`` for planar Laplace noise, with ``u, v >= 0``.

    In polar form the quadrant beyond ``(u, v)`` is ``r > r0(theta)`` with
    ``r0 = max(u / cos, v / sin)`` and the radial tail mass is
    ``(1 + eps r) exp(-eps r)``, leaving a 1-D angular integral split at the
    corner direction ``atan2(v, u)``.
    """
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    corner = np.arctan2(v, u)

    def tail(r):
        t = eps * r
        with np.errstate(over="ignore", invalid="ignore"):
            out = (1.0 + t) * np.exp(-t)
        return np.where(np.isfinite(t), out, 0.0)

    half = 0.5 * corner[..., None]
    th = half * (_GL_X + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_lo = np.where(v[..., None] > 0, v[..., None] / np.sin(th), 0.0)
    first = (tail(r_lo) * _GL_W).sum(axis=-1) * half[..., 0]

    span = 0.5 * (0.5 * np.pi - corner)[..., None]
    th = corner[..., None] + span * (_GL_X + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_hi = np.where(u[..., None] > 0, u[..., None] / np.cos(th), 0.0)
    second = (tail(r_hi) * _GL_W).sum(axis=-1) * span[..., 0]
    return (first + second) / (2.0 * np.pi)


def _fold(lo: np.ndarray, hi: np.ndarray):
    """Reflect signed intervals onto ``[0, inf)``.

    Returns piece endpoints of shape ``(..., 2)``: an interval straddling
    zero becomes ``[0, -lo]`` and ``[0, hi]``; otherwise the second piece is
    the empty ``[0, 0]``.
    """
    pos, neg = lo >= 0, hi <= 0
    a0 = np.where(pos, lo, np.where(neg, -hi, 0.0))
    b0 = np.where(pos, hi, -lo)
    b1 = np.where(pos | neg, 0.0, hi)
    return np.stack([a0, np.zeros_like(a0)], axis=-1), np.stack([b0, b1], axis=-1)


def _axis_intervals(coords: np.ndarray, count: int, size: float):
    """Signed offset intervals from each coordinate to each cell along one axis.

    ``coords`` are in cell units, so equal offsets dedupe exactly.  Border
    cells extend to infinity.  Returns unique ``(lo, hi)`` in km and
    ``ids[p, j]`` pointing into them.
    """
    uc, inv = np.unique(coords, return_inverse=True)
    lo = np.arange(count)[None, :] - uc[:, None]
    hi = lo + 1.0
    lo[:, 0] = -math.inf
    hi[:, -1] = math.inf
    pairs, ids = np.unique(np.stack([lo.ravel(), hi.ravel()], axis=1), axis=0, return_inverse=True)
    return pairs[:, 0] * size, pairs[:, 1] * size, ids.reshape(uc.size, count)[inv.ravel()]


def _rect_masses(eps: float, xa, xb, ya, yb) -> np.ndarray:
    """Laplace mass of every (x-interval, y-interval) pair from folded pieces."""
    far = 1e3 / eps
    vx = np.unique(np.minimum(np.concatenate([xa.ravel(), xb.ravel()]), far))
    vy = np.unique(np.minimum(np.concatenate([ya.ravel(), yb.ravel()]), far))
    Q = _quadrant_mass(eps, vx[:, None], vy[None, :])

    def slot(vals, e):
        return np.searchsorted(vals, np.minimum(e, far))

    ia, ib = slot(vx, xa)[:, None, :, None], slot(vx, xb)[:, None, :, None]
    ja, jb = slot(vy, ya)[None, :, None, :], slot(vy, yb)[None, :, None, :]
    rect = Q[ia, ja] - Q[ib, ja] - Q[ia, jb] + Q[ib, jb]
    # empty pieces must contribute exactly zero, not round-off from O(1) terms
    return np.where((ia < ib) & (ja < jb), rect, 0.0).sum(axis=(2, 3))


def laplace_on_grid(mech: PlanarLaplace, grid: GeoGrid, method: str = "quadrature",
                    samples: int = 100_000, rng: Optional[RngState] = None,
                    inputs: Optional[np.ndarray] = None) -> DiscreteMechanism:
    """Discretize planar Laplace noise onto the cells of ``grid``.

    ``k[x, z]`` is the probability that input ``x`` plus noise lands in cell
    ``z`` under :func:`nearest_cell`, so mass outside the grid goes to the
    nearest boundary cell.

    Args:
        mech: the symmetric mechanism.
        grid: output grid.
        method: ``"quadrature"`` (boundary cells extend to infinity; the
            planar integral reduces exactly to a 1-D angular one) or
            ``"monte_carlo"``.
        samples: noise draws per row for Monte Carlo.
        rng: random state for Monte Carlo; each row uses its own split stream.
        inputs: ``(m, 2)`` input points in km; defaults to the grid centers,
            giving a square mechanism.
    """
    pts = grid.centers if inputs is None else np.asarray(inputs, dtype=float).reshape(-1, 2)
    n = grid.n_cells
    if method == "quadrature":
        eps = mech.epsilon
        xlo, xhi, xid = _axis_intervals(pts[:, 0] / grid.cell_width, grid.cols, grid.cell_width)
        ylo, yhi, yid = _axis_intervals(pts[:, 1] / grid.cell_height, grid.rows, grid.cell_height)
        xa, xb = _fold(xlo, xhi)
        ya, yb = _fold(ylo, yhi)
        rect = np.clip(_rect_masses(eps, xa, xb, ya, yb), 0.0, None)
        # k[p, row * cols + col] = rect[x-interval of (p, col), y-interval of (p, row)]
        k = rect[xid[:, None, :], yid[:, :, None]].reshape(pts.shape[0], n)
    elif method == "monte_carlo":
        if rng is None:
            raise ConfigError("Monte Carlo discretization needs an RngState")
        k = np.empty((pts.shape[0], n))
        for x, stream in enumerate(rng.split(pts.shape[0])):
            noisy = mech.obfuscate(np.broadcast_to(pts[x], (samples, 2)), stream)
            k[x] = np.bincount(nearest_cell(grid, noisy), minlength=n) / samples
    else:
        raise ConfigError(f"unknown discretization method {method!r}")
    k /= k.sum(axis=1, keepdims=True)
    return DiscreteMechanism(k)


# ------------------------------------------------------------------ LP export

def write_lp_file(inst: LpInstance, path, ratio_cap: float = math.inf) -> None:
    """Write the instance in CPLEX LP text format.

    Variables are named ``k_<x>_<z>``.  Ratios above ``ratio_cap`` are clipped
    as in :func:`solve_lp`; the default keeps them exact.
    """
    n = inst.n

    def name(j):
        return f"k_{j // n}_{j % n}"

    def terms(coefs, idx):
        parts = []
        for a, j in zip(coefs, idx):
            sign = "-" if a < 0 else "+"
            parts.append(f"{sign} {abs(float(a))!r} {name(j)}")
        out, line = [], " "
        for p in parts:
            if len(line) + len(p) > 200:
                out.append(line)
                line = "   "
            line += " " + p
        out.append(line)
        return "\n".join(out)

    A = inst.capped(ratio_cap)
    with open(Path(path), "w") as fh:
        fh.write(f"\\ optimal mechanism: {n} cells, {inst.n_inequalities} privacy rows\n")
        fh.write("Minimize\n obj:\n")
        nz = np.flatnonzero(inst.c)
        fh.write(terms(inst.c[nz], nz) if nz.size else f"  0 {name(0)}")
        fh.write("\nSubject To\n")
        for r in range(A.shape[0]):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            fh.write(f" p{r}:\n{terms(A.data[lo:hi], A.indices[lo:hi])} <= 0\n")
        for x in range(n):
            fh.write(f" row{x}:\n{terms(np.ones(n), np.arange(x * n, (x + 1) * n))} = 1\n")
        fh.write("End\n")
