"""Equal-arm virtual quadrotor abstraction.

An assembly of n docked units is collapsed into a single virtual quadrotor:

1. the virtual body sits at the assembly centroid with the composite mass and
   inertia,
2. a body-frame yaw angle theta* is chosen to maximise the weighted torque
   authority  sum_ij  c_x |tau_x,ij(theta)| + c_y |tau_y,ij(theta)|  over all
   physical rotors with unit forces, where the rotated per-rotor torque
   components are

       [tau_x(theta); tau_y(theta)] = [[sin t, cos t], [cos t, -sin t]]
                                      @ [-(p_y - c_y); (p_x - c_x)] * f,

3. the four signed grouped sums of those components at theta* place the four
   virtual rotors (all sharing one arm per x/y side, the "equal-arm" closure),
4. the virtual yaw coefficient is the force-weighted drag coefficient mean.

The grouped-sum identities solved in step 3, with S the grouped sums at
theta* and f_sum the number of rotors (unit forces):

    y-arm of rotors 2,3:  a_minus = -2 S_x+ / f_sum
    y-arm of rotors 1,4:  a_plus  = -2 S_x- / f_sum
    x-arm of rotors 1,3:  b_plus  = +2 S_y+ / f_sum
    x-arm of rotors 2,4:  b_minus = +2 S_y- / f_sum

so that the virtual quadrotor reproduces the grouped torque sums exactly when
every rotor works at the same force level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfig
from .geometry import (
    MarsConfig,
    centroid,
    composite_inertia,
    rotor_arrays,
    total_mass,
)

YAW_GRID_POINTS = 3600
YAW_REFINE_TOL = 1e-10
YAW_TIE_TOL = 1e-9
GROUP_SUM_TOL = 1e-12

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class TorqueBalanceWeights:
    """Axis weights c_x, c_y of the yaw torque-authority objective."""

    c_x: float = 1.0
    c_y: float = 1.0

    def validated(self) -> "TorqueBalanceWeights":
        if self.c_x < 0.0 or self.c_y < 0.0 or (self.c_x == 0.0 and self.c_y == 0.0):
            raise ValueError(f"weights must be nonnegative and not both zero, got {self}")
        return self


@dataclass(frozen=True)
class EqualArmAbstraction:
    """Virtual quadrotor equivalent of a docked assembly.

    virtual_rotors holds absolute x/y positions, rows in the quadrant order
    (+x,+y), (-x,-y), (+x,-y), (-x,+y).  g_v maps the four virtual rotor
    forces to [F; tau_x; tau_y; tau_z] about the centroid.
    """

    mass: float
    centroid: np.ndarray  # (3,)
    inertia: np.ndarray  # (3, 3) about the centroid
    yaw: float
    objective: float
    virtual_rotors: np.ndarray  # (4, 2)
    c_vz: float
    g_v: np.ndarray  # (4, 4)
    f_sum_min: float
    f_sum_max: float

    def arms(self) -> np.ndarray:
        """Virtual rotor offsets from the centroid, (4, 2)."""
        return self.virtual_rotors - self.centroid[:2]


def _levers(config: MarsConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-rotor centroid-relative lever components (-(y - c_y), (x - c_x))."""
    rot = rotor_arrays(config)
    c = centroid(config)
    return -(rot.position[:, 1] - c[1]), rot.position[:, 0] - c[0]


def _torque_components(neg_y: np.ndarray, x: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
    st, ct = np.sin(theta), np.cos(theta)
    return st * neg_y + ct * x, ct * neg_y - st * x


def yaw_objective(
    config: MarsConfig, theta: float, weights: TorqueBalanceWeights | None = None
) -> float:
    """Weighted torque authority of the assembly at body yaw ``theta``.

    Evaluated with unit rotor forces via the grouped-sum form
    c_x (S_x+ - S_x-) + c_y (S_y+ - S_y-), which equals the absolute-value sum
    c_x sum|tau_x| + c_y sum|tau_y|.
    """
    w = (weights or TorqueBalanceWeights()).validated()
    neg_y, x = _levers(config)
    tau_x, tau_y = _torque_components(neg_y, x, theta)
    s_x_pos = tau_x[tau_x > 0.0].sum()
    s_x_neg = tau_x[tau_x < 0.0].sum()
    s_y_pos = tau_y[tau_y > 0.0].sum()
    s_y_neg = tau_y[tau_y < 0.0].sum()
    return float(w.c_x * (s_x_pos - s_x_neg) + w.c_y * (s_y_pos - s_y_neg))


def _objective_on_grid(
    neg_y: np.ndarray, x: np.ndarray, thetas: np.ndarray, w: TorqueBalanceWeights
) -> np.ndarray:
    st = np.sin(thetas)[:, None]
    ct = np.cos(thetas)[:, None]
    tau_x = st * neg_y + ct * x
    tau_y = ct * neg_y - st * x
    return w.c_x * np.abs(tau_x).sum(axis=1) + w.c_y * np.abs(tau_y).sum(axis=1)


def optimal_yaw(
    config: MarsConfig, weights: TorqueBalanceWeights | None = None
) -> tuple[float, float]:
    """Maximising yaw in [0, pi) and its objective value.

    Dense grid scan (YAW_GRID_POINTS over the half period, the objective has
    period pi) followed by golden-section refinement of every near-maximal
    basin; ties within YAW_TIE_TOL of the best objective resolve to the
    smallest angle.
    """
    w = (weights or TorqueBalanceWeights()).validated()
    neg_y, x = _levers(config)
    grid = np.linspace(0.0, np.pi, YAW_GRID_POINTS, endpoint=False)
    values = _objective_on_grid(neg_y, x, grid, w)
    best = values.max()
    if best <= 0.0:  # every lever vanishes; any yaw is equally (use)less
        return 0.0, 0.0

    def value_at(theta: float) -> float:
        tau_x, tau_y = _torque_components(neg_y, x, theta)
        return float(w.c_x * np.abs(tau_x).sum() + w.c_y * np.abs(tau_y).sum())

    # Refine each near-maximal local basin.  The basin gate is much looser
    # than the final tie tolerance: a co-optimal basin's grid peak can sit
    # O(curvature * h^2) below the grid max between samples.
    basin_tol = 1e-6 * max(1.0, float(best))
    candidates: list[tuple[float, float]] = []
    near = np.flatnonzero(values >= best - basin_tol)
    h = np.pi / YAW_GRID_POINTS
    for i in near:
        left = values[(i - 1) % YAW_GRID_POINTS]
        right = values[(i + 1) % YAW_GRID_POINTS]
        if values[i] < left or values[i] < right:
            continue  # not a local peak, its basin is refined from the peak itself
        lo, hi = grid[i] - h, grid[i] + h
        a, b = lo, hi
        fc = fd = None
        while b - a > YAW_REFINE_TOL:
            c = b - _GOLDEN * (b - a)
            d = a + _GOLDEN * (b - a)
            fc = value_at(c) if fc is None else fc
            fd = value_at(d) if fd is None else fd
            if fc > fd:
                b, fd = d, fc
                fc = None
            else:
                a, fc = c, fd
                fd = None
        theta_r = float(0.5 * (a + b) % np.pi)
        candidates.append((float(grid[i]), float(values[i])))
        candidates.append((theta_r, value_at(theta_r)))
    if not candidates:  # flat objective: every grid point tied
        candidates = [(float(grid[0]), float(values[0]))]
    best_val = max(v for _, v in candidates)
    theta_star = min(t for t, v in candidates if v >= best_val - YAW_TIE_TOL)
    return theta_star, value_at(theta_star)


def grouped_torque_sums(config: MarsConfig, theta: float) -> tuple[float, float, float, float]:
    """Signed grouped sums (S_x+, S_x-, S_y+, S_y-) at ``theta``, unit forces."""
    neg_y, x = _levers(config)
    tau_x, tau_y = _torque_components(neg_y, x, theta)
    return (
        float(tau_x[tau_x > 0.0].sum()),
        float(tau_x[tau_x < 0.0].sum()),
        float(tau_y[tau_y > 0.0].sum()),
        float(tau_y[tau_y < 0.0].sum()),
    )


def virtual_c_z(config: MarsConfig, forces: np.ndarray | None = None) -> float:
    """Virtual yaw drag coefficient: force-weighted mean of rotor c_z.

    With the default unit forces this is the plain mean; the unequal-arm path
    passes the per-rotor maxima instead.
    """
    rot = rotor_arrays(config)
    if forces is None:
        forces = np.ones_like(rot.c_z)
    forces = np.asarray(forces, dtype=float)
    return float((rot.c_z * forces).sum() / forces.sum())


def virtual_effectiveness(virtual_rotors: np.ndarray, c: np.ndarray, c_vz: float) -> np.ndarray:
    """4x4 effectiveness of a virtual quadrotor with rotors at approximately
    ``virtual_rotors`` (absolute x/y) about centroid ``c``."""
    arms = np.asarray(virtual_rotors, dtype=float) - np.asarray(c, dtype=float)[:2]
    g = np.empty((4, 4))
    g[0] = 1.0
    g[1] = -arms[:, 1]
    g[2] = arms[:, 0]
    g[3] = np.array([-1.0, -1.0, 1.0, 1.0]) * c_vz
    return g


def equal_arm_abstraction(
    config: MarsConfig, weights: TorqueBalanceWeights | None = None
) -> EqualArmAbstraction:
    """Collapse the assembly into its equal-arm virtual quadrotor.

    Raises DegenerateConfig when a grouped torque sum vanishes at theta*, i.e.
    the rotors cannot span one of the torque half-axes and no full-rank
    virtual quadrotor exists.
    """
    theta, objective = optimal_yaw(config, weights)
    s_x_pos, s_x_neg, s_y_pos, s_y_neg = grouped_torque_sums(config, theta)
    f_sum = 4.0 * config.n_units  # unit forces
    scale = max(abs(v) for v in (s_x_pos, s_x_neg, s_y_pos, s_y_neg))
    for name, value in (("S_x+", s_x_pos), ("S_x-", s_x_neg), ("S_y+", s_y_pos), ("S_y-", s_y_neg)):
        if abs(value) <= GROUP_SUM_TOL * max(scale, 1.0):
            raise DegenerateConfig(
                f"grouped torque sum {name} vanishes at theta*={theta!r}; "
                "no full-rank virtual quadrotor exists for this geometry"
            )
    a_minus = -2.0 * s_x_pos / f_sum  # y-arm shared by virtual rotors 2, 3 (negative)
    a_plus = -2.0 * s_x_neg / f_sum  # y-arm shared by virtual rotors 1, 4 (positive)
    b_plus = 2.0 * s_y_pos / f_sum  # x-arm shared by virtual rotors 1, 3 (positive)
    b_minus = 2.0 * s_y_neg / f_sum  # x-arm shared by virtual rotors 2, 4 (negative)
    c = centroid(config)
    rotors = np.array(
        [
            [c[0] + b_plus, c[1] + a_plus],
            [c[0] + b_minus, c[1] + a_minus],
            [c[0] + b_plus, c[1] + a_minus],
            [c[0] + b_minus, c[1] + a_plus],
        ]
    )
    c_vz = virtual_c_z(config)
    rot = rotor_arrays(config)
    return EqualArmAbstraction(
        mass=total_mass(config),
        centroid=c,
        inertia=composite_inertia(config),
        yaw=theta,
        objective=objective,
        virtual_rotors=rotors,
        c_vz=c_vz,
        g_v=virtual_effectiveness(rotors, c, c_vz),
        f_sum_min=float(rot.f_min.sum()),
        f_sum_max=float(rot.f_max.sum()),
    )
