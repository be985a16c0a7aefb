"""Dense convex QP solver: dual active-set method for strictly convex costs.

Solves  min 0.5 x^T H x + g^T x  subject to  A_eq x = b_eq  and
A_in x >= b_in,  with H symmetric positive definite.

The method starts from the equality-constrained optimum (always dual
feasible) and adds one violated inequality at a time.  Each addition walks a
mixed primal-dual step: either the new constraint becomes active (full step)
or a blocking active constraint's multiplier hits zero first and leaves the
working set (partial step).  Strict convexity keeps every subproblem
uniquely solvable, and termination is finite.  An unbounded dual step is a
certificate that the constraints are inconsistent.

Both consumers in this package are small and dense: thrust allocation (a few
dozen variables, box rows) and the condensed predictive controller (80
variables, box rows), where the previous tick's active set makes a warm
start that usually verifies immediately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InfeasibleWrench

DEFAULT_TOL = 1e-10
MAX_ITERATIONS = 1000


@dataclass
class QpResult:
    x: np.ndarray
    lam_eq: np.ndarray  # multipliers of the equality rows
    lam_ineq: np.ndarray  # multipliers of all inequality rows, zero if inactive
    active: tuple[int, ...]  # indices of active inequality rows, sorted
    iterations: int
    warm_start_used: bool


def _kkt_solve(h, g, a_eq, b_eq, rows, a_in, b_in):
    """Solve the equality-constrained problem with ``rows`` of A_in pinned.

    Returns (x, lam_eq, lam_rows).  Raises numpy.linalg.LinAlgError when the
    pinned rows are linearly dependent.
    """
    n = h.shape[0]
    mats = []
    rhs = []
    if a_eq is not None:
        mats.append(a_eq)
        rhs.append(b_eq)
    if rows:
        mats.append(a_in[list(rows)])
        rhs.append(b_in[list(rows)])
    if not mats:
        x = cho_solve(cho_factor(h), -g)
        return x, np.zeros(0), np.zeros(0)
    a = np.vstack(mats)
    b = np.concatenate(rhs)
    m = a.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = h
    kkt[:n, n:] = -a.T
    kkt[n:, :n] = a
    sol = np.linalg.solve(kkt, np.concatenate([-g, b]))
    x = sol[:n]
    lam = sol[n:]
    n_eq = 0 if a_eq is None else a_eq.shape[0]
    return x, lam[:n_eq], lam[n_eq:]


def solve_qp(
    h: np.ndarray,
    g: np.ndarray,
    a_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    a_in: np.ndarray | None = None,
    b_in: np.ndarray | None = None,
    warm_active: tuple[int, ...] | None = None,
    tol: float = DEFAULT_TOL,
    max_iterations: int = MAX_ITERATIONS,
) -> QpResult:
    """Solve the QP; see the module docstring for the problem form.

    ``warm_active`` proposes an initial active inequality set (typically the
    previous solve's).  It is verified, never trusted: if the proposed KKT
    point is primal or dual infeasible the solver falls back to a cold start.
    Raises InfeasibleWrench when the constraints admit no solution.
    """
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    n = h.shape[0]
    if a_eq is not None:
        a_eq = np.asarray(a_eq, dtype=float)
        b_eq = np.asarray(b_eq, dtype=float)
    if a_in is None:
        a_in = np.zeros((0, n))
        b_in = np.zeros(0)
    else:
        a_in = np.asarray(a_in, dtype=float)
        b_in = np.asarray(b_in, dtype=float)
    m_in = a_in.shape[0]

    chol = cho_factor(h)
    h_inv = None  # full inverse only materialized once a bound fights back

    warm_used = False
    active: list[int] = []
    lam_active: list[float] = []
    if warm_active is not None:
        # an empty hint is meaningful: it asserts the optimum is interior
        rows = sorted(set(int(i) for i in warm_active if 0 <= int(i) < m_in))
        try:
            x, lam_eq, lam_rows = _kkt_solve(h, g, a_eq, b_eq, rows, a_in, b_in)
            primal_ok = m_in == 0 or np.all(a_in @ x >= b_in - 1e-8)
            dual_ok = np.all(lam_rows >= -1e-8)
            if primal_ok and dual_ok:
                lam_ineq = np.zeros(m_in)
                lam_ineq[rows] = np.maximum(lam_rows, 0.0)
                return QpResult(
                    x=x,
                    lam_eq=lam_eq,
                    lam_ineq=lam_ineq,
                    active=tuple(rows),
                    iterations=0,
                    warm_start_used=True,
                )
        except np.linalg.LinAlgError:
            pass

    # cold start: equality-constrained optimum
    x, lam_eq, _ = _kkt_solve(h, g, a_eq, b_eq, [], a_in, b_in)

    def active_matrix():
        blocks = []
        if a_eq is not None:
            blocks.append(a_eq)
        if active:
            blocks.append(a_in[active])
        return np.vstack(blocks) if blocks else None

    iterations = 0
    while True:
        iterations += 1
        if iterations > max_iterations:
            raise RuntimeError("active-set iteration limit exceeded")
        if m_in:
            slack = a_in @ x - b_in
            worst = int(np.argmin(slack))
            if slack[worst] >= -tol:
                break
        else:
            break
        p = worst
        if p in active:
            # numerical drift left an active row violated: refresh the KKT
            # point at the current working set, shedding any rows whose
            # multipliers have gone negative, then re-check
            while True:
                x, lam_eq, lam_rows = _kkt_solve(h, g, a_eq, b_eq, active, a_in, b_in)
                lam_active = list(lam_rows)
                if not lam_active or min(lam_active) >= -tol:
                    break
                drop = int(np.argmin(lam_active))
                del active[drop]
                del lam_active[drop]
            continue
        a_p = a_in[p]
        u_new = 0.0
        if h_inv is None:
            h_inv = cho_solve(chol, np.eye(n))
        # drive constraint p to feasibility, shedding blockers as needed
        while True:
            iterations += 1
            if iterations > max_iterations:
                raise RuntimeError("active-set iteration limit exceeded")
            n_mat = active_matrix()
            h_inv_a = h_inv @ a_p
            if n_mat is None:
                z = h_inv_a
                r = np.zeros(0)
            else:
                s = n_mat @ h_inv @ n_mat.T
                r = np.linalg.solve(s, n_mat @ h_inv_a)
                z = h_inv_a - h_inv @ (n_mat.T @ r)
            denom = float(a_p @ z)
            t2 = np.inf
            if denom > tol:
                t2 = (b_in[p] - float(a_p @ x)) / denom
            # blocking: only active inequality duals can hit zero
            n_eq = 0 if a_eq is None else a_eq.shape[0]
            t1 = np.inf
            blocker = -1
            for idx, row in enumerate(active):
                r_k = r[n_eq + idx] if r.size else 0.0
                if r_k > tol:
                    cand = lam_active[idx] / r_k
                    if cand < t1 - 1e-14:
                        t1, blocker = cand, idx
            t = min(t1, t2)
            if not np.isfinite(t):
                raise InfeasibleWrench(
                    f"inequality row {p} cannot be satisfied: constraints are inconsistent"
                )
            # move primal and duals together
            x = x + t * z
            if r.size:
                lam_eq = lam_eq - t * r[:n_eq]
                for idx in range(len(active)):
                    lam_active[idx] -= t * r[n_eq + idx]
            u_new += t
            if t == t2 and t2 <= t1:
                active.append(p)
                lam_active.append(u_new)
                break
            # drop the blocker and keep pushing the same constraint
            del active[blocker]
            del lam_active[blocker]

    lam_ineq = np.zeros(m_in)
    for row_index, multiplier in zip(active, lam_active):
        lam_ineq[row_index] = max(multiplier, 0.0)
    return QpResult(
        x=x,
        lam_eq=np.asarray(lam_eq),
        lam_ineq=lam_ineq,
        active=tuple(sorted(active)),
        iterations=iterations,
        warm_start_used=warm_used,
    )
