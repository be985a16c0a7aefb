"""Receding-horizon tracking controller on the virtual-quadrotor model.

The controller tracks a reference window by repeatedly linearizing the rigid
body model about a nominal input sequence, condensing the resulting
time-varying prediction into a box-constrained quadratic program over the
horizon inputs, and accepting a step only if the true rolled-out cost does
not increase.  Two relinearization passes per call are enough at control
rates where the previous solution is already close.

The wrench box handed to the controller comes from the abstraction: each
virtual rotor can hold any force in [f_sum_min/4, f_sum_max/4], so every
wrench component is bracketed by evaluating its effectiveness row once with
each coefficient at its own extreme.

Quaternion bookkeeping: states carry the full unit quaternion and the
predictor renormalizes after every step.  The tracking error uses the
component difference after flipping the reference quaternion onto the same
half-space as the predicted one, which makes the cost blind to the q vs -q
double cover.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dynamics import (
    BodyParams,
    RigidState,
    WrenchCommand,
    predict_linearize,
    predict_rollout,
)
from .errors import NonFiniteState, ValidationError
from .qp import solve_qp

HESSIAN_RIDGE = 1e-9
BACKTRACK_STEPS = (1.0, 0.5, 0.25, 0.125, 0.0625)


@dataclass(frozen=True)
class ApcWeights:
    """Diagonal tracking weights: stage, terminal, and input deviation.

    The input term penalizes the deviation from the hover wrench
    (m g, 0, 0, 0), not from zero, so hovering itself is free.

    Defaults come from a settling study across 1x1, 2x1 and 2x2 assemblies:
    a 0.5 m lateral offset must close below 1 mm within 4 s without
    overshoot, while circular tracking at 1 m/s stays in the low
    millimetres.  Position terms dominate, input terms stay light so the
    controller is willing to lean hard during transients.
    """

    q_p: tuple[float, float, float] = (160.0, 160.0, 200.0)
    q_q: tuple[float, float, float, float] = (8.0, 8.0, 8.0, 8.0)
    q_v: tuple[float, float, float] = (10.0, 10.0, 12.0)
    q_w: tuple[float, float, float] = (1.0, 1.0, 1.0)
    q_p_n: tuple[float, float, float] = (800.0, 800.0, 1000.0)
    q_q_n: tuple[float, float, float, float] = (40.0, 40.0, 40.0, 40.0)
    q_v_n: tuple[float, float, float] = (50.0, 50.0, 60.0)
    q_w_n: tuple[float, float, float] = (5.0, 5.0, 5.0)
    r_f: float = 0.005
    r_mx: float = 0.05
    r_my: float = 0.05
    r_mz: float = 0.2

    def validated(self) -> "ApcWeights":
        stage = np.concatenate([self.q_p, self.q_q, self.q_v, self.q_w])
        term = np.concatenate([self.q_p_n, self.q_q_n, self.q_v_n, self.q_w_n])
        inputs = np.array([self.r_f, self.r_mx, self.r_my, self.r_mz])
        if stage.shape != (13,) or term.shape != (13,):
            raise ValidationError("state weights must be 3/4/3/3 component tuples")
        if np.any(stage < 0.0) or np.any(term < 0.0) or np.any(inputs < 0.0):
            raise ValidationError("weights must be nonnegative")
        if not np.any(stage > 0.0):
            raise ValidationError("at least one stage weight must be positive")
        # normalize every field to plain tuples/floats so equal weight sets
        # hash equal and the per-horizon diagonal cache below can key on them
        return ApcWeights(
            q_p=tuple(map(float, self.q_p)),
            q_q=tuple(map(float, self.q_q)),
            q_v=tuple(map(float, self.q_v)),
            q_w=tuple(map(float, self.q_w)),
            q_p_n=tuple(map(float, self.q_p_n)),
            q_q_n=tuple(map(float, self.q_q_n)),
            q_v_n=tuple(map(float, self.q_v_n)),
            q_w_n=tuple(map(float, self.q_w_n)),
            r_f=float(self.r_f),
            r_mx=float(self.r_mx),
            r_my=float(self.r_my),
            r_mz=float(self.r_mz),
        )

    def stage_diag(self) -> np.ndarray:
        return np.concatenate([self.q_p, self.q_q, self.q_v, self.q_w]).astype(float)

    def terminal_diag(self) -> np.ndarray:
        return np.concatenate(
            [self.q_p_n, self.q_q_n, self.q_v_n, self.q_w_n]
        ).astype(float)

    def input_diag(self) -> np.ndarray:
        return np.array([self.r_f, self.r_mx, self.r_my, self.r_mz], dtype=float)


@dataclass(frozen=True)
class ApcSettings:
    """Horizon layout and outer-loop limits."""

    horizon: int = 20
    dt: float = 0.02
    max_iterations: int = 2
    convergence_tol: float = 1e-6

    def validated(self) -> "ApcSettings":
        if self.horizon < 2:
            raise ValidationError("horizon must be at least 2 steps")
        if self.dt <= 0.0:
            raise ValidationError("prediction step must be positive")
        if self.max_iterations < 1:
            raise ValidationError("need at least one solve pass")
        return self


@dataclass(frozen=True)
class WrenchBounds:
    """Componentwise box for the virtual wrench (N, N m)."""

    lo: np.ndarray
    hi: np.ndarray


@dataclass(frozen=True)
class ReferenceWindow:
    """Horizon-aligned reference samples, one flat state row per knot.

    Rows follow the integrator layout (position, quaternion wxyz, velocity,
    body rates).  Holding the raw matrix lets a caller that precomputed a
    dense trajectory hand out strided views instead of rebuilding state
    objects every control step.
    """

    matrix: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        times = np.asarray(self.timestamps, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != 13:
            raise ValidationError(f"reference matrix must be (k, 13), got {matrix.shape}")
        if times.shape != (matrix.shape[0],):
            raise ValidationError("need one timestamp per reference row")
        if times.size > 1 and np.any(np.diff(times) <= 0.0):
            raise ValidationError("timestamps must be strictly increasing")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "timestamps", times)

    @classmethod
    def from_states(cls, states, timestamps) -> "ReferenceWindow":
        return cls(matrix=np.stack([s.as_vector() for s in states]), timestamps=timestamps)

    @property
    def states(self) -> tuple[RigidState, ...]:
        return tuple(RigidState.from_vector(row) for row in self.matrix)

    def as_matrix(self) -> np.ndarray:
        return self.matrix


@dataclass(frozen=True)
class ApcDiagnostics:
    cost: float
    outer_iterations: int
    qp_iterations: int
    converged: bool
    hit_iteration_cap: bool


@lru_cache(maxsize=32)
def _weight_vectors(weights: ApcWeights):
    """Stage/terminal/input diagonals as arrays, shared across solves."""
    stage = weights.stage_diag()
    term = weights.terminal_diag()
    inputs = weights.input_diag()
    for a in (stage, term, inputs):
        a.setflags(write=False)
    return stage, term, inputs


@lru_cache(maxsize=32)
def _stacked_diags(weights: ApcWeights, n: int):
    """Horizon-stacked cost diagonals for the condensed quadratic."""
    stage, term, inputs = _weight_vectors(weights)
    q_diag = np.tile(stage, n)
    q_diag[-13:] = term
    r_diag = np.tile(inputs, n)
    q_diag.setflags(write=False)
    r_diag.setflags(write=False)
    return q_diag, r_diag


@lru_cache(maxsize=8)
def _box_geometry(n: int, lo: tuple, hi: tuple):
    """Stacked box-constraint rows for an n-step input sequence.

    Returns (a_in, finite_rows, all_finite, lo_tiled, hi_tiled); rows carrying
    an infinite bound are dropped.  The identity stacks are the same every
    solve, so building them once per (n, bounds) pays for itself immediately.
    """
    lo_tiled = np.tile(lo, n)
    hi_tiled = np.tile(hi, n)
    finite = np.isfinite(np.concatenate([lo_tiled, hi_tiled]))
    eye = np.eye(n * 4)
    a_full = np.vstack([eye, -eye])
    all_finite = bool(finite.all())
    a_in = a_full if all_finite else a_full[finite]
    for a in (lo_tiled, hi_tiled, finite, a_in):
        a.setflags(write=False)
    return a_in, finite, all_finite, lo_tiled, hi_tiled


def actuator_bounds(abs_effectiveness, f_sum_min: float, f_sum_max: float) -> WrenchBounds:
    """Wrench box induced by the per-rotor force interval of the abstraction.

    Each virtual rotor ranges over [f_sum_min/4, f_sum_max/4]; a wrench
    component's extremes put every row coefficient at whichever end of that
    interval matches its sign, which is exactly the componentwise min/max
    over the 16 force-box vertices.
    """
    g = np.asarray(abs_effectiveness, dtype=float)
    if g.shape != (4, 4):
        raise ValidationError("virtual effectiveness must be 4x4")
    if np.linalg.matrix_rank(g, tol=1e-10) < 4:
        raise ValidationError("virtual effectiveness must have full rank")
    if f_sum_max <= f_sum_min:
        raise ValidationError("need f_sum_max > f_sum_min")
    at_lo = g * (f_sum_min / 4.0)
    at_hi = g * (f_sum_max / 4.0)
    lo = np.minimum(at_lo, at_hi).sum(axis=1)
    hi = np.maximum(at_lo, at_hi).sum(axis=1)
    return WrenchBounds(lo=lo, hi=hi)


def generate_reference(kind: str, params: dict | None, t0: float, settings: ApcSettings) -> ReferenceWindow:
    """Sample a named trajectory over the prediction horizon.

    Positions and velocities are analytically consistent; the attitude
    reference is the identity quaternion with zero rates throughout.
    ``params`` keys by kind:
      hover:   position (3,)
      circle:  radius, speed, height, center (2,)
      line:    start (3,), direction (3,), speed
      figure8: radius, speed, height, center (2,)
    """
    settings = settings.validated()
    p = dict(params or {})
    times = t0 + settings.dt * np.arange(settings.horizon + 1)
    if kind == "hover":
        pos = np.asarray(p.get("position", (0.0, 0.0, 1.0)), dtype=float)
        positions = np.tile(pos, (times.size, 1))
        velocities = np.zeros((times.size, 3))
    elif kind == "circle":
        radius = float(p.get("radius", 1.5))
        speed = float(p.get("speed", 1.0))
        height = float(p.get("height", 1.0))
        center = np.asarray(p.get("center", (0.0, 0.0)), dtype=float)
        _check_kinematics(radius, speed)
        phase = speed * times / radius
        positions = np.stack(
            [
                center[0] + radius * np.cos(phase),
                center[1] + radius * np.sin(phase),
                np.full(times.size, height),
            ],
            axis=1,
        )
        velocities = np.stack(
            [-speed * np.sin(phase), speed * np.cos(phase), np.zeros(times.size)],
            axis=1,
        )
    elif kind == "line":
        start = np.asarray(p.get("start", (0.0, 0.0, 1.0)), dtype=float)
        direction = np.asarray(p.get("direction", (1.0, 0.0, 0.0)), dtype=float)
        speed = float(p.get("speed", 1.0))
        norm = np.linalg.norm(direction)
        if norm == 0.0 or speed < 0.0:
            raise ValidationError("line needs a nonzero direction and speed >= 0")
        unit = direction / norm
        positions = start[None, :] + speed * times[:, None] * unit[None, :]
        velocities = np.tile(speed * unit, (times.size, 1))
    elif kind == "figure8":
        radius = float(p.get("radius", 1.5))
        speed = float(p.get("speed", 1.0))
        height = float(p.get("height", 1.0))
        center = np.asarray(p.get("center", (0.0, 0.0)), dtype=float)
        _check_kinematics(radius, speed)
        omega = speed / radius
        positions = np.stack(
            [
                center[0] + radius * np.sin(omega * times),
                center[1] + 0.5 * radius * np.sin(2.0 * omega * times),
                np.full(times.size, height),
            ],
            axis=1,
        )
        velocities = np.stack(
            [
                radius * omega * np.cos(omega * times),
                radius * omega * np.cos(2.0 * omega * times),
                np.zeros(times.size),
            ],
            axis=1,
        )
    else:
        raise ValidationError(f"unknown reference kind {kind!r}")
    refs = np.zeros((times.size, 13))
    refs[:, 0:3] = positions
    refs[:, 3] = 1.0
    refs[:, 7:10] = velocities
    return ReferenceWindow(matrix=refs, timestamps=times)


def _check_kinematics(radius: float, speed: float) -> None:
    if radius <= 0.0:
        raise ValidationError("radius must be positive")
    if speed < 0.0:
        raise ValidationError("speed must be nonnegative")


def _aligned_errors(states: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Rowwise state minus reference, reference quaternion sign-aligned."""
    refs = refs.copy()
    dots = np.sum(states[:, 3:7] * refs[:, 3:7], axis=1)
    refs[:, 3:7] *= np.where(dots < 0.0, -1.0, 1.0)[:, None]
    return states - refs


def _cost_and_errors(
    states: np.ndarray,
    inputs: np.ndarray,
    refs: np.ndarray,
    weights: ApcWeights,
    u_hover: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Tracking cost plus the aligned error matrix it was scored from."""
    err = _aligned_errors(states, refs)
    q_stage, q_term, r = _weight_vectors(weights)
    cost = float(np.sum(err[1:-1] ** 2 @ q_stage))
    cost += float(err[-1] ** 2 @ q_term)
    du = inputs - u_hover[None, :]
    cost += float(np.sum(du**2 @ r))
    return cost, err


def trajectory_cost(
    states: np.ndarray,
    inputs: np.ndarray,
    refs: np.ndarray,
    weights: ApcWeights,
    u_hover: np.ndarray,
) -> float:
    """Exact tracking cost of a rolled-out trajectory.

    Stages 1..N-1 use the stage weights, stage N the terminal ones; the
    initial state is not scored (it is not a decision).  Inputs are scored
    as deviations from the hover wrench.
    """
    return _cost_and_errors(states, inputs, refs, weights, u_hover)[0]


def condense_tracking_qp(
    state: RigidState,
    reference: ReferenceWindow,
    body: BodyParams,
    weights: ApcWeights,
    settings: ApcSettings,
    nominal_inputs: np.ndarray,
    nominal_states: np.ndarray | None = None,
    nominal_errors: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadratic model of the tracking cost in the stacked input deviation.

    Linearizes the prediction model along the rollout of ``nominal_inputs``,
    eliminates the state sequence, and returns (H, g, nominal_states): the
    cost of ``nominal + delta_u`` is modeled as 0.5 d'Hd + g'd + const.
    ``nominal_states`` (and the matching aligned ``nominal_errors``) skip the
    internal rollout when the caller already integrated the nominal sequence.
    """
    n = settings.horizon
    u_bar = np.asarray(nominal_inputs, dtype=float).reshape(n, 4)
    if nominal_states is None:
        states_bar = predict_rollout(state.as_vector(), u_bar, body, dt=settings.dt)
    else:
        states_bar = nominal_states
    a_seq, b_seq = predict_linearize(states_bar[:-1], u_bar, body, dt=settings.dt)

    # sensitivity of each predicted state to each input move: the running
    # block row is propagated through A_k, then stage k's own B_k is spliced
    # in (columns past 4k stay zero, so the full-width matmul is harmless)
    s_mat = np.zeros((n * 13, n * 4))
    acc = np.zeros((13, n * 4))
    acc[:, 0:4] = b_seq[0]
    s_mat[0:13] = acc
    for k in range(1, n):
        acc = a_seq[k] @ acc
        acc[:, 4 * k : 4 * k + 4] = b_seq[k]
        s_mat[13 * k : 13 * k + 13] = acc

    if nominal_errors is None:
        nominal_errors = _aligned_errors(states_bar, reference.as_matrix())
    err = nominal_errors[1:].reshape(n * 13)
    q_diag, r_diag = _stacked_diags(weights, n)
    u_hover = np.array([body.mass * body.gravity, 0.0, 0.0, 0.0])
    du_bar = (u_bar - u_hover[None, :]).reshape(n * 4)

    weighted = s_mat * q_diag[:, None]
    h = 2.0 * (s_mat.T @ weighted + np.diag(r_diag))
    h[np.diag_indices_from(h)] += HESSIAN_RIDGE
    g = 2.0 * (weighted.T @ err + r_diag * du_bar)
    return h, g, states_bar


def solve_apc(
    state: RigidState,
    reference: ReferenceWindow,
    body: BodyParams,
    weights: ApcWeights | None = None,
    bounds: WrenchBounds | None = None,
    settings: ApcSettings | None = None,
    warm_start: np.ndarray | None = None,
) -> tuple[WrenchCommand, np.ndarray, ApcDiagnostics]:
    """One receding-horizon solve; returns the first input and the plan.

    The nominal sequence is the warm start when given (the previous call's
    plan), otherwise hover hold.  Each outer pass relinearizes about the
    current nominal, solves the condensed box QP, and accepts the step only
    if the true rolled-out cost does not increase (backtracking otherwise),
    so the reported cost never rises across passes.
    """
    weights = (weights or ApcWeights()).validated()
    settings = (settings or ApcSettings()).validated()
    n = settings.horizon
    if reference.matrix.shape[0] != n + 1:
        raise ValidationError(
            f"reference window must hold {n + 1} states, got {reference.matrix.shape[0]}"
        )
    u_hover = np.array([body.mass * body.gravity, 0.0, 0.0, 0.0])
    if bounds is not None:
        lo = np.asarray(bounds.lo, dtype=float)
        hi = np.asarray(bounds.hi, dtype=float)
        if np.any(lo > hi):
            raise ValidationError("wrench bounds must satisfy lo <= hi")
    else:
        lo = np.full(4, -np.inf)
        hi = np.full(4, np.inf)

    if warm_start is not None and np.all(np.isfinite(warm_start)):
        u_bar = np.asarray(warm_start, dtype=float).reshape(n, 4).copy()
    else:
        u_bar = np.tile(u_hover, (n, 1))
    u_bar = np.clip(u_bar, lo[None, :], hi[None, :])

    x_vec = state.as_vector()
    if not np.all(np.isfinite(x_vec)):
        raise NonFiniteState("controller state contains non-finite components")
    refs = reference.as_matrix()
    states_bar = predict_rollout(x_vec, u_bar, body, dt=settings.dt)
    if not np.all(np.isfinite(states_bar)):
        # a wild warm start can blow up the nominal prediction; restart from
        # the hover hold rather than feeding garbage to the linearization
        u_bar = np.clip(np.tile(u_hover, (n, 1)), lo[None, :], hi[None, :])
        states_bar = predict_rollout(x_vec, u_bar, body, dt=settings.dt)
        if not np.all(np.isfinite(states_bar)):
            raise NonFiniteState("prediction rollout diverged from a finite state")
    cost_bar, err_bar = _cost_and_errors(states_bar, u_bar, refs, weights, u_hover)

    a_in, finite_rows, all_finite, lo_tiled, hi_tiled = _box_geometry(
        n, tuple(lo), tuple(hi)
    )
    qp_warm: tuple[int, ...] | None = None
    qp_iterations = 0
    converged = False
    passes = 0

    for _ in range(settings.max_iterations):
        passes += 1
        h, g, _ = condense_tracking_qp(
            state,
            reference,
            body,
            weights,
            settings,
            u_bar,
            nominal_states=states_bar,
            nominal_errors=err_bar,
        )
        flat = u_bar.reshape(n * 4)
        b_in_full = np.concatenate([lo_tiled - flat, flat - hi_tiled])
        res = solve_qp(
            h,
            g,
            a_in=a_in,
            b_in=b_in_full if all_finite else b_in_full[finite_rows],
            warm_active=qp_warm,
            tol=1e-10,
        )
        qp_warm = res.active
        qp_iterations += res.iterations
        delta = res.x.reshape(n, 4)

        accepted = False
        for alpha in BACKTRACK_STEPS:
            cand = u_bar + alpha * delta
            cand_states = predict_rollout(x_vec, cand, body, dt=settings.dt)
            cand_cost, cand_err = _cost_and_errors(cand_states, cand, refs, weights, u_hover)
            if cand_cost <= cost_bar:
                improvement = cost_bar - cand_cost
                u_bar, cost_bar = cand, cand_cost
                states_bar, err_bar = cand_states, cand_err
                accepted = True
                break
        if not accepted or improvement < settings.convergence_tol:
            converged = True
            break

    u_bar = np.clip(u_bar, lo[None, :], hi[None, :])
    first = WrenchCommand(thrust=float(u_bar[0, 0]), torque=u_bar[0, 1:4].copy())
    diag = ApcDiagnostics(
        cost=cost_bar,
        outer_iterations=passes,
        qp_iterations=qp_iterations,
        converged=converged,
        hit_iteration_cap=not converged,
    )
    return first, u_bar, diag
