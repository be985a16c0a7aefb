"""Balanced rotor-force allocation.

Maps a commanded assembly wrench ``u = (F, Mx, My, Mz)`` to the 4n rotor
forces that realize it exactly while spreading lift as evenly as possible:

    minimize    Var(f)
    subject to  G f = u,   f_min <= f <= f_max

Minimizing the variance is equivalent to minimizing ``0.5 ||f||^2`` on the
equality manifold, because the thrust row of G pins the mean of f.  The
solver eliminates the equalities through an orthonormal null-space basis
(``f = f_p + Z w``) and hands the reduced strictly convex problem to the
shared active-set kernel, warm-started from the previous call's active set.

When the wrench is unreachable the allocator never raises: it keeps the
commanded thrust and uniformly scales the torque vector by the largest
feasible factor (bisection), flagging the result in the diagnostics.  If
even the pure-thrust command is out of reach it clamps the thrust into the
achievable range and returns the box-constrained least-squares fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dynamics import WrenchCommand
from .errors import InfeasibleWrench, ValidationError
from .geometry import MarsConfig, rotor_arrays
from .qp import solve_qp

EQUALITY_TOL = 1e-8
SOLVER_TOL = 1e-10
BETA_BISECTION_STEPS = 40
LS_RIDGE = 1e-9
ITERATION_CAP_PER_UNIT = 50


@dataclass(frozen=True)
class AllocationDiagnostics:
    """Solve report attached to every allocation result.

    ``residual`` is ``G f - u`` against the original command; ``variance``
    carries the 1/(4n) normalization (the objective drops it, same argmin).
    ``beta`` is the torque scale actually delivered (1.0 on the exact path).
    """

    residual: np.ndarray
    variance: float
    iterations: int
    feasible: bool
    beta: float


def _wrench_vector(u) -> np.ndarray:
    if isinstance(u, WrenchCommand):
        return u.as_vector()
    vec = np.asarray(u, dtype=float).reshape(-1)
    if vec.shape != (4,):
        raise ValidationError("wrench command must have 4 components")
    return vec


class WrenchAllocator:
    """Reusable allocator for a fixed effectiveness matrix and force box.

    Holds the factorizations and the warm-start state, so a control loop
    pays the setup cost once.  Instances are independent of each other but
    a single instance must not be shared across concurrent solves.
    """

    def __init__(self, g_mars, f_min, f_max, tol: float = SOLVER_TOL):
        g = np.asarray(g_mars, dtype=float)
        if g.ndim != 2 or g.shape[0] != 4 or g.shape[1] < 4:
            raise ValidationError("effectiveness matrix must be 4 x m with m >= 4")
        m = g.shape[1]
        lo = np.broadcast_to(np.asarray(f_min, dtype=float), (m,)).copy()
        hi = np.broadcast_to(np.asarray(f_max, dtype=float), (m,)).copy()
        if np.any(hi <= lo):
            raise ValidationError("each rotor needs f_max > f_min")
        if np.linalg.matrix_rank(g, tol=1e-10) < 4:
            raise ValidationError("effectiveness matrix must have full row rank")
        self.g = g
        self.f_min = lo
        self.f_max = hi
        self.tol = float(tol)
        # orthonormal basis of ker(G): with f = f_p + Z w and f_p ⊥ ker(G),
        # ||f||^2 = ||f_p||^2 + ||w||^2, so the reduced Hessian is exactly I
        q, _ = np.linalg.qr(g.T, mode="complete")
        self._z = q[:, 4:]
        self._gram = cho_factor(g @ g.T)
        self._cap = max(ITERATION_CAP_PER_UNIT * (m // 4), ITERATION_CAP_PER_UNIT)
        self._warm: tuple[int, ...] | None = None

    @classmethod
    def from_config(cls, config: MarsConfig, g_mars=None) -> "WrenchAllocator":
        """Build from a docked assembly, bounds taken from its rotors."""
        from .geometry import mars_effectiveness

        rot = rotor_arrays(config)
        g = mars_effectiveness(config) if g_mars is None else g_mars
        return cls(g, rot.f_min, rot.f_max)

    def _solve_exact(self, u_vec: np.ndarray) -> tuple[np.ndarray, int]:
        """Exact minimum-variance solve; raises InfeasibleWrench."""
        f_p = self.g.T @ cho_solve(self._gram, u_vec)
        z = self._z
        k = z.shape[1]
        if k == 0:
            # square effectiveness: f is determined, only the box can object
            if np.any(f_p < self.f_min - EQUALITY_TOL) or np.any(
                f_p > self.f_max + EQUALITY_TOL
            ):
                raise InfeasibleWrench("wrench outside the force box")
            return f_p, 0
        a_in = np.vstack([z, -z])
        b_in = np.concatenate([self.f_min - f_p, f_p - self.f_max])
        res = solve_qp(
            np.eye(k),
            np.zeros(k),
            a_in=a_in,
            b_in=b_in,
            warm_active=self._warm,
            tol=self.tol,
            max_iterations=self._cap,
        )
        raw = f_p + z @ res.x
        violation = max(
            float(np.max(self.f_min - raw)), float(np.max(raw - self.f_max))
        )
        if res.warm_start_used and violation > 1e-9:
            # the warm acceptance tolerance let a slightly stale active set
            # through; a cold solve bounds the overshoot by the solver tol
            res = solve_qp(
                np.eye(k),
                np.zeros(k),
                a_in=a_in,
                b_in=b_in,
                tol=self.tol,
                max_iterations=self._cap,
            )
            raw = f_p + z @ res.x
        self._warm = res.active
        # project the residual overshoot away so the box invariant is exact
        f = np.clip(raw, self.f_min, self.f_max)
        return f, res.iterations

    def allocate(self, u) -> tuple[np.ndarray, AllocationDiagnostics]:
        """Rotor forces for the wrench ``u`` plus a solve report.

        Returns the exact variance-minimal forces when ``u`` is reachable.
        Otherwise falls back to thrust-priority torque scaling as described
        in the module docstring; the diagnostics flag carries the outcome.
        """
        u_vec = _wrench_vector(u)
        total_iters = 0
        try:
            f, iters = self._solve_exact(u_vec)
            residual = self.g @ f - u_vec
            return f, AllocationDiagnostics(
                residual=residual,
                variance=float(np.var(f)),
                iterations=iters,
                feasible=bool(np.max(np.abs(residual)) < EQUALITY_TOL),
                beta=1.0,
            )
        except InfeasibleWrench:
            pass

        def attempt(beta: float):
            scaled = np.array(
                [u_vec[0], beta * u_vec[1], beta * u_vec[2], beta * u_vec[3]]
            )
            return self._solve_exact(scaled)

        try:
            f, iters = attempt(0.0)
            total_iters += iters
        except InfeasibleWrench:
            return self._clamped_least_squares(u_vec, total_iters)

        # largest torque scale in [0, 1] that stays reachable
        lo_beta, hi_beta = 0.0, 1.0
        for _ in range(BETA_BISECTION_STEPS):
            mid = 0.5 * (lo_beta + hi_beta)
            try:
                f_mid, iters = attempt(mid)
                total_iters += iters
                lo_beta, f = mid, f_mid
            except InfeasibleWrench:
                hi_beta = mid
        residual = self.g @ f - u_vec
        return f, AllocationDiagnostics(
            residual=residual,
            variance=float(np.var(f)),
            iterations=total_iters,
            feasible=False,
            beta=lo_beta,
        )

    def _clamped_least_squares(self, u_vec: np.ndarray, iters_so_far: int):
        """Last resort: thrust clamped to the achievable sum, torques dropped,
        best box-constrained fit in the least-squares sense."""
        f_sum = float(np.clip(u_vec[0], self.f_min.sum(), self.f_max.sum()))
        target = np.array([f_sum, 0.0, 0.0, 0.0])
        m = self.g.shape[1]
        h = self.g.T @ self.g + LS_RIDGE * np.eye(m)
        grad = -self.g.T @ target
        a_in = np.vstack([np.eye(m), -np.eye(m)])
        b_in = np.concatenate([self.f_min, -self.f_max])
        res = solve_qp(h, grad, a_in=a_in, b_in=b_in, tol=self.tol)
        f = np.clip(res.x, self.f_min, self.f_max)
        residual = self.g @ f - u_vec
        return f, AllocationDiagnostics(
            residual=residual,
            variance=float(np.var(f)),
            iterations=iters_so_far + res.iterations,
            feasible=False,
            beta=0.0,
        )


def allocate(u, g_mars, f_min, f_max) -> tuple[np.ndarray, AllocationDiagnostics]:
    """One-shot allocation; see WrenchAllocator for the loop-friendly form."""
    return WrenchAllocator(g_mars, f_min, f_max).allocate(u)


def per_unit_commands(f, config: MarsConfig) -> tuple[WrenchCommand, ...]:
    """Split a rotor-force vector into per-unit wrench commands.

    Each unit receives its own total thrust and the torques its rotors
    produce about the unit's own centre, in the same component convention
    as the assembly-level effectiveness rows.
    """
    rot = rotor_arrays(config)
    forces = np.asarray(f, dtype=float).reshape(-1)
    if forces.shape != (config.n_rotors,):
        raise ValidationError(
            f"expected {config.n_rotors} rotor forces, got {forces.shape[0]}"
        )
    commands = []
    for i in range(config.n_units):
        sel = rot.unit_index == i
        fi = forces[sel]
        off = rot.offset[sel]
        thrust = float(fi.sum())
        mx = float(-(off[:, 1] * fi).sum())
        my = float((off[:, 0] * fi).sum())
        mz = float((rot.spin[sel] * rot.c_z[sel] * fi).sum())
        commands.append(WrenchCommand(thrust=thrust, torque=np.array([mx, my, mz])))
    return tuple(commands)


def recompose_wrench(commands, config: MarsConfig) -> np.ndarray:
    """Assembly wrench implied by per-unit commands, about the mass centroid.

    Transport of each unit's thrust to the assembly centroid uses the same
    lever convention as the effectiveness rows, so this is the exact inverse
    of the per-unit split: recompose(per_unit_commands(f)) == G f.
    """
    from .geometry import centroid

    c = centroid(config)
    total = np.zeros(4)
    for unit, cmd in zip(config.units, commands):
        dx = unit.position[0] - c[0]
        dy = unit.position[1] - c[1]
        total[0] += cmd.thrust
        total[1] += cmd.torque[0] - dy * cmd.thrust
        total[2] += cmd.torque[1] + dx * cmd.thrust
        total[3] += cmd.torque[2]
    return total
