"""Rigid-body dynamics of the abstracted vehicle.

State is 13 numbers: position (world), attitude quaternion (w, x, y, z,
Hamilton convention, body to world), velocity (world) and angular velocity
(body).  The input wrench is a collective thrust along body +z plus a body
torque.  Integration is classic RK4 with the quaternion renormalised after
every step.

The per-step arithmetic runs on plain floats: a step is a few hundred scalar
operations, where even small numpy temporaries would dominate the cost, and
the predictive controller takes millions of steps per simulated flight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState, ValidationError

DEFAULT_DT = 0.002


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b, both (w, x, y, z)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_to_rot(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (body to world)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class BodyParams:
    """Mass properties and gravity for the integrator.

    The inertia tensor is captured (with its inverse) as flat scalar tuples
    at construction so the hot path never touches numpy.
    """

    mass: float
    inertia: np.ndarray
    gravity: float = 9.81

    def __post_init__(self):
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        if inertia.shape != (3, 3):
            raise ValidationError(f"inertia must be 3x3 or a 3-vector, got {inertia.shape}")
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ValidationError("inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(inertia) <= 0.0):
            raise ValidationError("inertia must be positive definite")
        if self.mass <= 0.0:
            raise ValidationError(f"mass must be positive, got {self.mass}")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "gravity", float(self.gravity))
        # plain-float tuples: numpy scalars leaking into the flat integrator
        # would drag every arithmetic op through ufunc dispatch
        object.__setattr__(self, "_i", tuple(float(v) for v in inertia.ravel()))
        inv = np.linalg.inv(inertia)
        object.__setattr__(self, "_inv", tuple(float(v) for v in inv.ravel()))
        object.__setattr__(self, "_inv_mat", inv)


@dataclass
class RigidState:
    """Vehicle state; quaternion is (w, x, y, z), body to world."""

    position: np.ndarray
    quaternion: np.ndarray
    velocity: np.ndarray
    angular_velocity: np.ndarray

    @classmethod
    def hover(cls, position=(0.0, 0.0, 0.0)) -> "RigidState":
        return cls(
            position=np.asarray(position, dtype=float),
            quaternion=np.array([1.0, 0.0, 0.0, 0.0]),
            velocity=np.zeros(3),
            angular_velocity=np.zeros(3),
        )

    @classmethod
    def from_vector(cls, s) -> "RigidState":
        s = np.asarray(s, dtype=float)
        return cls(
            position=s[0:3].copy(),
            quaternion=s[3:7].copy(),
            velocity=s[7:10].copy(),
            angular_velocity=s[10:13].copy(),
        )

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.position, self.quaternion, self.velocity, self.angular_velocity]
        )

    def normalized(self) -> "RigidState":
        return RigidState(
            position=self.position.copy(),
            quaternion=quat_normalize(self.quaternion),
            velocity=self.velocity.copy(),
            angular_velocity=self.angular_velocity.copy(),
        )


@dataclass(frozen=True)
class WrenchCommand:
    """Collective thrust (N, along body +z) and body torque (N m)."""

    thrust: float
    torque: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.thrust, self.torque[0], self.torque[1], self.torque[2]], dtype=float
        )


def _deriv_flat(s, fz, mx, my, mz, mass, gravity, i, inv):
    """Time derivative of the flat 13-tuple state; i and inv are the inertia
    tensor and its inverse as row-major 9-tuples."""
    (px, py, pz, qw, qx, qy, qz, vx, vy, vz, wx, wy, wz) = s
    # q_dot = 0.5 * q * (0, w)
    qdw = 0.5 * (-qx * wx - qy * wy - qz * wz)
    qdx = 0.5 * (qw * wx + qy * wz - qz * wy)
    qdy = 0.5 * (qw * wy + qz * wx - qx * wz)
    qdz = 0.5 * (qw * wz + qx * wy - qy * wx)
    # body z axis in world coordinates, times thrust / mass
    a = fz / mass
    adx = a * 2.0 * (qx * qz + qw * qy)
    ady = a * 2.0 * (qy * qz - qw * qx)
    adz = a * (1.0 - 2.0 * (qx * qx + qy * qy)) - gravity
    # w_dot = I^-1 (M - w x (I w))
    hx = i[0] * wx + i[1] * wy + i[2] * wz
    hy = i[3] * wx + i[4] * wy + i[5] * wz
    hz = i[6] * wx + i[7] * wy + i[8] * wz
    tx = mx - (wy * hz - wz * hy)
    ty = my - (wz * hx - wx * hz)
    tz = mz - (wx * hy - wy * hx)
    return (
        vx,
        vy,
        vz,
        qdw,
        qdx,
        qdy,
        qdz,
        adx,
        ady,
        adz,
        inv[0] * tx + inv[1] * ty + inv[2] * tz,
        inv[3] * tx + inv[4] * ty + inv[5] * tz,
        inv[6] * tx + inv[7] * ty + inv[8] * tz,
    )


def _step_flat(s, fz, mx, my, mz, dt, mass, gravity, i, inv):
    """One RK4 step of the flat state, quaternion renormalised.

    The derivative and the stage combinations are written out component by
    component.  This function runs tens of thousands of times per simulated
    second and anything that allocates intermediates (tuples, generator
    expressions, even the per-stage call into ``_deriv_flat``) dominates the
    arithmetic, so the four stages are spelled out by hand.  Position
    components of the intermediate stage states are never formed: the
    derivative does not depend on position, and the position slope of each
    stage is simply that stage's velocity.
    """
    (s0, s1, s2, s3, s4, s5, s6, s7, s8, s9, s10, s11, s12) = s
    i0, i1, i2, i3, i4, i5, i6, i7, i8 = i
    v0, v1, v2, v3, v4, v5, v6, v7, v8 = inv
    acc = fz / mass
    h = 0.5 * dt

    # stage 1, slope at the start state
    a3 = 0.5 * (-s4 * s10 - s5 * s11 - s6 * s12)
    a4 = 0.5 * (s3 * s10 + s5 * s12 - s6 * s11)
    a5 = 0.5 * (s3 * s11 + s6 * s10 - s4 * s12)
    a6 = 0.5 * (s3 * s12 + s4 * s11 - s5 * s10)
    a7 = acc * 2.0 * (s4 * s6 + s3 * s5)
    a8 = acc * 2.0 * (s5 * s6 - s3 * s4)
    a9 = acc * (1.0 - 2.0 * (s4 * s4 + s5 * s5)) - gravity
    hx = i0 * s10 + i1 * s11 + i2 * s12
    hy = i3 * s10 + i4 * s11 + i5 * s12
    hz = i6 * s10 + i7 * s11 + i8 * s12
    tx = mx - (s11 * hz - s12 * hy)
    ty = my - (s12 * hx - s10 * hz)
    tz = mz - (s10 * hy - s11 * hx)
    a10 = v0 * tx + v1 * ty + v2 * tz
    a11 = v3 * tx + v4 * ty + v5 * tz
    a12 = v6 * tx + v7 * ty + v8 * tz

    # stage 2, slope at the half-step point along stage 1
    m3 = s3 + h * a3
    m4 = s4 + h * a4
    m5 = s5 + h * a5
    m6 = s6 + h * a6
    m7 = s7 + h * a7
    m8 = s8 + h * a8
    m9 = s9 + h * a9
    m10 = s10 + h * a10
    m11 = s11 + h * a11
    m12 = s12 + h * a12
    b3 = 0.5 * (-m4 * m10 - m5 * m11 - m6 * m12)
    b4 = 0.5 * (m3 * m10 + m5 * m12 - m6 * m11)
    b5 = 0.5 * (m3 * m11 + m6 * m10 - m4 * m12)
    b6 = 0.5 * (m3 * m12 + m4 * m11 - m5 * m10)
    b7 = acc * 2.0 * (m4 * m6 + m3 * m5)
    b8 = acc * 2.0 * (m5 * m6 - m3 * m4)
    b9 = acc * (1.0 - 2.0 * (m4 * m4 + m5 * m5)) - gravity
    hx = i0 * m10 + i1 * m11 + i2 * m12
    hy = i3 * m10 + i4 * m11 + i5 * m12
    hz = i6 * m10 + i7 * m11 + i8 * m12
    tx = mx - (m11 * hz - m12 * hy)
    ty = my - (m12 * hx - m10 * hz)
    tz = mz - (m10 * hy - m11 * hx)
    b10 = v0 * tx + v1 * ty + v2 * tz
    b11 = v3 * tx + v4 * ty + v5 * tz
    b12 = v6 * tx + v7 * ty + v8 * tz

    # stage 3, slope at the half-step point along stage 2
    n3 = s3 + h * b3
    n4 = s4 + h * b4
    n5 = s5 + h * b5
    n6 = s6 + h * b6
    n7 = s7 + h * b7
    n8 = s8 + h * b8
    n9 = s9 + h * b9
    n10 = s10 + h * b10
    n11 = s11 + h * b11
    n12 = s12 + h * b12
    g3 = 0.5 * (-n4 * n10 - n5 * n11 - n6 * n12)
    g4 = 0.5 * (n3 * n10 + n5 * n12 - n6 * n11)
    g5 = 0.5 * (n3 * n11 + n6 * n10 - n4 * n12)
    g6 = 0.5 * (n3 * n12 + n4 * n11 - n5 * n10)
    g7 = acc * 2.0 * (n4 * n6 + n3 * n5)
    g8 = acc * 2.0 * (n5 * n6 - n3 * n4)
    g9 = acc * (1.0 - 2.0 * (n4 * n4 + n5 * n5)) - gravity
    hx = i0 * n10 + i1 * n11 + i2 * n12
    hy = i3 * n10 + i4 * n11 + i5 * n12
    hz = i6 * n10 + i7 * n11 + i8 * n12
    tx = mx - (n11 * hz - n12 * hy)
    ty = my - (n12 * hx - n10 * hz)
    tz = mz - (n10 * hy - n11 * hx)
    g10 = v0 * tx + v1 * ty + v2 * tz
    g11 = v3 * tx + v4 * ty + v5 * tz
    g12 = v6 * tx + v7 * ty + v8 * tz

    # stage 4, slope at the full step along stage 3
    e3 = s3 + dt * g3
    e4 = s4 + dt * g4
    e5 = s5 + dt * g5
    e6 = s6 + dt * g6
    e7 = s7 + dt * g7
    e8 = s8 + dt * g8
    e9 = s9 + dt * g9
    e10 = s10 + dt * g10
    e11 = s11 + dt * g11
    e12 = s12 + dt * g12
    d3 = 0.5 * (-e4 * e10 - e5 * e11 - e6 * e12)
    d4 = 0.5 * (e3 * e10 + e5 * e12 - e6 * e11)
    d5 = 0.5 * (e3 * e11 + e6 * e10 - e4 * e12)
    d6 = 0.5 * (e3 * e12 + e4 * e11 - e5 * e10)
    d7 = acc * 2.0 * (e4 * e6 + e3 * e5)
    d8 = acc * 2.0 * (e5 * e6 - e3 * e4)
    d9 = acc * (1.0 - 2.0 * (e4 * e4 + e5 * e5)) - gravity
    hx = i0 * e10 + i1 * e11 + i2 * e12
    hy = i3 * e10 + i4 * e11 + i5 * e12
    hz = i6 * e10 + i7 * e11 + i8 * e12
    tx = mx - (e11 * hz - e12 * hy)
    ty = my - (e12 * hx - e10 * hz)
    tz = mz - (e10 * hy - e11 * hx)
    d10 = v0 * tx + v1 * ty + v2 * tz
    d11 = v3 * tx + v4 * ty + v5 * tz
    d12 = v6 * tx + v7 * ty + v8 * tz

    sixth = dt / 6.0
    qw = s3 + sixth * (a3 + 2.0 * (b3 + g3) + d3)
    qx = s4 + sixth * (a4 + 2.0 * (b4 + g4) + d4)
    qy = s5 + sixth * (a5 + 2.0 * (b5 + g5) + d5)
    qz = s6 + sixth * (a6 + 2.0 * (b6 + g6) + d6)
    norm = (qw * qw + qx * qx + qy * qy + qz * qz) ** 0.5
    return (
        s0 + sixth * (s7 + 2.0 * (m7 + n7) + e7),
        s1 + sixth * (s8 + 2.0 * (m8 + n8) + e8),
        s2 + sixth * (s9 + 2.0 * (m9 + n9) + e9),
        qw / norm,
        qx / norm,
        qy / norm,
        qz / norm,
        s7 + sixth * (a7 + 2.0 * (b7 + g7) + d7),
        s8 + sixth * (a8 + 2.0 * (b8 + g8) + d8),
        s9 + sixth * (a9 + 2.0 * (b9 + g9) + d9),
        s10 + sixth * (a10 + 2.0 * (b10 + g10) + d10),
        s11 + sixth * (a11 + 2.0 * (b11 + g11) + d11),
        s12 + sixth * (a12 + 2.0 * (b12 + g12) + d12),
    )


def derivative(state: RigidState, wrench: WrenchCommand, params: BodyParams) -> np.ndarray:
    """Continuous-time state derivative as a 13-vector."""
    d = _deriv_flat(
        tuple(state.as_vector()),
        float(wrench.thrust),
        float(wrench.torque[0]),
        float(wrench.torque[1]),
        float(wrench.torque[2]),
        params.mass,
        params.gravity,
        params._i,
        params._inv,
    )
    return np.array(d)


def step(
    state: RigidState, wrench: WrenchCommand, params: BodyParams, dt: float = DEFAULT_DT
) -> RigidState:
    """Advance the state by one RK4 step of length ``dt``.

    Raises NonFiniteState when the integration produces inf or nan.
    """
    s = _step_flat(
        tuple(state.as_vector()),
        float(wrench.thrust),
        float(wrench.torque[0]),
        float(wrench.torque[1]),
        float(wrench.torque[2]),
        dt,
        params.mass,
        params.gravity,
        params._i,
        params._inv,
    )
    out = np.array(s)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"integration diverged: {out}")
    return RigidState.from_vector(out)


def rollout(s0: np.ndarray, inputs: np.ndarray, params: BodyParams, dt: float) -> np.ndarray:
    """Integrate a whole input sequence; returns (N + 1, 13) states.

    Row k of ``inputs`` is the wrench [F, Mx, My, Mz] held over step k.
    """
    inputs = np.asarray(inputs, dtype=float)
    n = inputs.shape[0]
    out = np.empty((n + 1, 13))
    out[0] = s0
    s = tuple(float(v) for v in s0)
    mass, gravity, i, inv = params.mass, params.gravity, params._i, params._inv
    for k in range(n):
        fz, mx, my, mz = inputs[k]
        s = _step_flat(s, fz, mx, my, mz, dt, mass, gravity, i, inv)
        out[k + 1] = s
    if not np.all(np.isfinite(out[n])):
        raise NonFiniteState("rollout diverged")
    return out


def _deriv_batch(s: np.ndarray, u: np.ndarray, params: BodyParams) -> np.ndarray:
    """Vectorised state derivative for (N, 13) states and (N, 4) inputs."""
    out = np.empty_like(s)
    qw, qx, qy, qz = s[:, 3], s[:, 4], s[:, 5], s[:, 6]
    w = s[:, 10:13]
    wx, wy, wz = w[:, 0], w[:, 1], w[:, 2]
    out[:, 0:3] = s[:, 7:10]
    out[:, 3] = 0.5 * (-qx * wx - qy * wy - qz * wz)
    out[:, 4] = 0.5 * (qw * wx + qy * wz - qz * wy)
    out[:, 5] = 0.5 * (qw * wy + qz * wx - qx * wz)
    out[:, 6] = 0.5 * (qw * wz + qx * wy - qy * wx)
    a = u[:, 0] / params.mass
    out[:, 7] = a * 2.0 * (qx * qz + qw * qy)
    out[:, 8] = a * 2.0 * (qy * qz - qw * qx)
    out[:, 9] = a * (1.0 - 2.0 * (qx * qx + qy * qy)) - params.gravity
    iw = w @ params.inertia.T
    torque = u[:, 1:4].copy()
    torque[:, 0] -= wy * iw[:, 2] - wz * iw[:, 1]
    torque[:, 1] -= wz * iw[:, 0] - wx * iw[:, 2]
    torque[:, 2] -= wx * iw[:, 1] - wy * iw[:, 0]
    out[:, 10:13] = torque @ params._inv_mat.T
    return out


def _skew_batch(v: np.ndarray) -> np.ndarray:
    n = v.shape[0]
    s = np.zeros((n, 3, 3))
    s[:, 0, 1] = -v[:, 2]
    s[:, 0, 2] = v[:, 1]
    s[:, 1, 0] = v[:, 2]
    s[:, 1, 2] = -v[:, 0]
    s[:, 2, 0] = -v[:, 1]
    s[:, 2, 1] = v[:, 0]
    return s


def _jac_batch(s: np.ndarray, u: np.ndarray, params: BodyParams):
    """Continuous-time Jacobians d f / d state (N, 13, 13) and d f / d input
    (N, 13, 4) at each row of ``s``, ``u``."""
    n = s.shape[0]
    a_c = np.zeros((n, 13, 13))
    b_c = np.zeros((n, 13, 4))
    qw, qx, qy, qz = s[:, 3], s[:, 4], s[:, 5], s[:, 6]
    w = s[:, 10:13]
    wx, wy, wz = w[:, 0], w[:, 1], w[:, 2]
    inv = params._inv_mat

    a_c[:, 0, 7] = a_c[:, 1, 8] = a_c[:, 2, 9] = 1.0
    # attitude kinematics wrt attitude: 0.5 * right-multiplication by (0, w)
    a_c[:, 3, 4] = -0.5 * wx
    a_c[:, 3, 5] = -0.5 * wy
    a_c[:, 3, 6] = -0.5 * wz
    a_c[:, 4, 3] = 0.5 * wx
    a_c[:, 4, 5] = 0.5 * wz
    a_c[:, 4, 6] = -0.5 * wy
    a_c[:, 5, 3] = 0.5 * wy
    a_c[:, 5, 4] = -0.5 * wz
    a_c[:, 5, 6] = 0.5 * wx
    a_c[:, 6, 3] = 0.5 * wz
    a_c[:, 6, 4] = 0.5 * wy
    a_c[:, 6, 5] = -0.5 * wx
    # attitude kinematics wrt angular velocity: 0.5 * left-multiplication by q
    a_c[:, 3, 10] = -0.5 * qx
    a_c[:, 3, 11] = -0.5 * qy
    a_c[:, 3, 12] = -0.5 * qz
    a_c[:, 4, 10] = 0.5 * qw
    a_c[:, 4, 11] = -0.5 * qz
    a_c[:, 4, 12] = 0.5 * qy
    a_c[:, 5, 10] = 0.5 * qz
    a_c[:, 5, 11] = 0.5 * qw
    a_c[:, 5, 12] = -0.5 * qx
    a_c[:, 6, 10] = -0.5 * qy
    a_c[:, 6, 11] = 0.5 * qx
    a_c[:, 6, 12] = 0.5 * qw
    # acceleration wrt attitude: thrust / mass times d(body z axis)/dq
    a = u[:, 0] / params.mass
    a_c[:, 7, 3] = a * 2.0 * qy
    a_c[:, 7, 4] = a * 2.0 * qz
    a_c[:, 7, 5] = a * 2.0 * qw
    a_c[:, 7, 6] = a * 2.0 * qx
    a_c[:, 8, 3] = -a * 2.0 * qx
    a_c[:, 8, 4] = -a * 2.0 * qw
    a_c[:, 8, 5] = a * 2.0 * qz
    a_c[:, 8, 6] = a * 2.0 * qy
    a_c[:, 9, 4] = -a * 4.0 * qx
    a_c[:, 9, 5] = -a * 4.0 * qy
    # angular acceleration wrt angular velocity: I^-1 ([Iw]x - [w]x I)
    iw = w @ params.inertia.T
    a_c[:, 10:13, 10:13] = inv[None] @ (
        _skew_batch(iw) - _skew_batch(w) @ params.inertia[None]
    )

    m = params.mass
    b_c[:, 7, 0] = 2.0 * (qx * qz + qw * qy) / m
    b_c[:, 8, 0] = 2.0 * (qy * qz - qw * qx) / m
    b_c[:, 9, 0] = (1.0 - 2.0 * (qx * qx + qy * qy)) / m
    b_c[:, 10:13, 1:4] = inv[None]
    return a_c, b_c


def predict_rollout(s0, inputs: np.ndarray, params: BodyParams, dt: float) -> np.ndarray:
    """Forward simulation of the controller's prediction model.

    Midpoint integration of the same rigid-body derivative the plant uses,
    quaternion renormalised each step.  The controller predicts on a coarser
    grid than the plant integrates and is re-solved at every plant step, so
    second order is plenty; two derivative evaluations per step instead of
    four is what keeps the receding-horizon loop inside its time budget.
    The loop carries the thirteen state components as plain scalars for the
    same reason ``_step_flat`` is unrolled.
    """
    u = np.asarray(inputs, dtype=float)
    rows = u.tolist()
    n = len(rows)
    out = np.empty((n + 1, 13))
    out[0] = s0
    x0, x1, x2, x3, x4, x5, x6, x7, x8, x9, x10, x11, x12 = map(float, s0)
    i0, i1, i2, i3, i4, i5, i6, i7, i8 = params._i
    j0, j1, j2, j3, j4, j5, j6, j7, j8 = params._inv
    mass = params.mass
    gravity = params.gravity
    h = 0.5 * dt
    for k in range(n):
        fz, tqx, tqy, tqz = rows[k]
        acc = fz / mass
        # slope at the current state
        a3 = 0.5 * (-x4 * x10 - x5 * x11 - x6 * x12)
        a4 = 0.5 * (x3 * x10 + x5 * x12 - x6 * x11)
        a5 = 0.5 * (x3 * x11 + x6 * x10 - x4 * x12)
        a6 = 0.5 * (x3 * x12 + x4 * x11 - x5 * x10)
        a7 = acc * 2.0 * (x4 * x6 + x3 * x5)
        a8 = acc * 2.0 * (x5 * x6 - x3 * x4)
        a9 = acc * (1.0 - 2.0 * (x4 * x4 + x5 * x5)) - gravity
        hx = i0 * x10 + i1 * x11 + i2 * x12
        hy = i3 * x10 + i4 * x11 + i5 * x12
        hz = i6 * x10 + i7 * x11 + i8 * x12
        tx = tqx - (x11 * hz - x12 * hy)
        ty = tqy - (x12 * hx - x10 * hz)
        tz = tqz - (x10 * hy - x11 * hx)
        a10 = j0 * tx + j1 * ty + j2 * tz
        a11 = j3 * tx + j4 * ty + j5 * tz
        a12 = j6 * tx + j7 * ty + j8 * tz
        # slope at the midpoint (its position components are never needed)
        m3 = x3 + h * a3
        m4 = x4 + h * a4
        m5 = x5 + h * a5
        m6 = x6 + h * a6
        m7 = x7 + h * a7
        m8 = x8 + h * a8
        m9 = x9 + h * a9
        m10 = x10 + h * a10
        m11 = x11 + h * a11
        m12 = x12 + h * a12
        b3 = 0.5 * (-m4 * m10 - m5 * m11 - m6 * m12)
        b4 = 0.5 * (m3 * m10 + m5 * m12 - m6 * m11)
        b5 = 0.5 * (m3 * m11 + m6 * m10 - m4 * m12)
        b6 = 0.5 * (m3 * m12 + m4 * m11 - m5 * m10)
        b7 = acc * 2.0 * (m4 * m6 + m3 * m5)
        b8 = acc * 2.0 * (m5 * m6 - m3 * m4)
        b9 = acc * (1.0 - 2.0 * (m4 * m4 + m5 * m5)) - gravity
        hx = i0 * m10 + i1 * m11 + i2 * m12
        hy = i3 * m10 + i4 * m11 + i5 * m12
        hz = i6 * m10 + i7 * m11 + i8 * m12
        tx = tqx - (m11 * hz - m12 * hy)
        ty = tqy - (m12 * hx - m10 * hz)
        tz = tqz - (m10 * hy - m11 * hx)
        x0 += dt * m7
        x1 += dt * m8
        x2 += dt * m9
        qw = x3 + dt * b3
        qx = x4 + dt * b4
        qy = x5 + dt * b5
        qz = x6 + dt * b6
        norm = (qw * qw + qx * qx + qy * qy + qz * qz) ** 0.5
        x3 = qw / norm
        x4 = qx / norm
        x5 = qy / norm
        x6 = qz / norm
        x7 += dt * b7
        x8 += dt * b8
        x9 += dt * b9
        x10 += dt * (j0 * tx + j1 * ty + j2 * tz)
        x11 += dt * (j3 * tx + j4 * ty + j5 * tz)
        x12 += dt * (j6 * tx + j7 * ty + j8 * tz)
        out[k + 1] = (x0, x1, x2, x3, x4, x5, x6, x7, x8, x9, x10, x11, x12)
    return out


def predict_linearize(states: np.ndarray, inputs: np.ndarray, params: BodyParams, dt: float):
    """Exact Jacobians of the prediction step map (renormalisation included).

    ``states`` (N, 13) are the step start states and ``inputs`` (N, 4) the
    wrenches held over each step.  Returns (A, B) with shapes (N, 13, 13) and
    (N, 13, 4): the derivative of the post-renormalisation next state of
    ``predict_rollout`` with respect to the current state and input, obtained
    by chaining the two stage Jacobians of the midpoint rule and projecting
    the quaternion rows onto the unit sphere's tangent at the raw end-of-step
    quaternion.
    """
    s = np.asarray(states, dtype=float)
    u = np.asarray(inputs, dtype=float)
    n = s.shape[0]
    h = 0.5 * dt
    k1 = _deriv_batch(s, u, params)
    mid = s + h * k1
    k2 = _deriv_batch(mid, u, params)

    # one fused Jacobian evaluation for both stages; the ~30 fancy-index
    # fills in _jac_batch cost more than the arithmetic at this batch size
    a_all, b_all = _jac_batch(
        np.concatenate([s, mid], axis=0), np.concatenate([u, u], axis=0), params
    )
    a1, a2 = a_all[:n], a_all[n:]
    b1, b2 = b_all[:n], b_all[n:]

    eye = np.eye(13)
    a_step = eye + dt * (a2 @ (eye + h * a1))
    b_step = dt * (a2 @ (h * b1) + b2)

    q_end = s[:, 3:7] + dt * k2[:, 3:7]
    nrm = np.linalg.norm(q_end, axis=1, keepdims=True)
    qh = q_end / nrm
    proj = (np.eye(4)[None] - qh[:, :, None] * qh[:, None, :]) / nrm[:, :, None]
    a_step[:, 3:7, :] = proj @ a_step[:, 3:7, :]
    b_step[:, 3:7, :] = proj @ b_step[:, 3:7, :]
    return a_step, b_step


def rotational_energy(state, params: BodyParams) -> float:
    """Kinetic energy of rotation, 0.5 w^T I w."""
    w = np.asarray(state.angular_velocity if isinstance(state, RigidState) else state[10:13])
    return float(0.5 * w @ params.inertia @ w)


def angular_momentum_world(state, params: BodyParams) -> np.ndarray:
    """Angular momentum R(q) I w expressed in world coordinates."""
    if not isinstance(state, RigidState):
        state = RigidState.from_vector(state)
    return quat_to_rot(quat_normalize(state.quaternion)) @ (
        params.inertia @ state.angular_velocity
    )
