"""Wrench-polytope fit: the unequal-arm virtual quadrotor.

The equal-arm closure places virtual rotors from grouped torque sums at one
shared force level.  The fit here instead chooses the four virtual rotor arms
so that every extreme wrench of the virtual quadrotor stays inside the wrench
polytope of the physical assembly, maximising total arm length.  Containment
is encoded column by column: each virtual vertex wrench must be a convex
combination of physical vertex wrenches, which makes the whole fit one linear
program over the arm coordinates and the combination weights.

Vertex sets enumerate force combinations as bit patterns: column ``s`` puts
actuator ``i`` at its high level iff bit ``i`` of ``s`` is set, so the first
actuator toggles fastest.

For a single unit the fit runs against the per-rotor vertex set with the yaw
row included and recovers the physical rotors exactly.  For larger
assemblies the per-rotor set is replaced by the per-unit reduced set (all
four rotors of a unit share one force level, so each unit acts as one merged
actuator whose yaw drag cancels); the yaw row is then identically zero on
the physical side and is excluded from the containment constraints, with the
virtual yaw coefficient pinned to the max-thrust weighted drag mean instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DegenerateConfig, InfeasibleAbstraction, TooManyUnits
from .geometry import (
    MarsConfig,
    centroid,
    composite_inertia,
    mars_effectiveness,
    rotor_arrays,
    total_mass,
)
from .equal_arm import virtual_c_z, virtual_effectiveness

# hard cap on assembly size for the reduced fit: 2^n containment columns
MAX_UNITS = 12

# grouped sums smaller than this (relative to the largest) make the matching
# relative error meaningless
GROUP_SUM_TOL = 1e-12

_LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}

# quadrant sign of each virtual rotor's (x, y) arm, rotor order 1..4
_ARM_SIGNS = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=float)


@dataclass(frozen=True)
class WrenchVertexSet:
    """Extreme force combinations of a set of actuators and their wrenches."""

    forces: np.ndarray  # (m, 2**m) actuator forces, one combination per column
    wrenches: np.ndarray  # (4, 2**m) wrench [F; tau_x; tau_y; tau_z] per column


@dataclass(frozen=True)
class UnequalArmAbstraction:
    """Virtual quadrotor fitted inside the assembly's wrench polytope."""

    mass: float
    centroid: np.ndarray  # (3,)
    inertia: np.ndarray  # (3, 3) about the centroid
    virtual_rotors: np.ndarray  # (4, 2) absolute x/y positions
    c_vz: float
    g_v: np.ndarray  # (4, 4)
    f_sum_min: float
    f_sum_max: float
    arm_total: float  # optimal value of the fit, sum of |arm| coordinates
    containment_weights: np.ndarray  # (n_phys, 16) column-stochastic weights

    def arms(self) -> np.ndarray:
        return self.virtual_rotors - self.centroid[:2]


@dataclass(frozen=True)
class ApproximationReport:
    """How well fitted arms reproduce the assembly's max-thrust torque groups.

    group_errors holds the four signed relative mismatches (x+, x-, y+, y-
    torque groups); entries are nan where the assembly group sum vanishes.
    """

    group_errors: np.ndarray  # (4,)
    mean_abs_error: float
    undefined: tuple[bool, bool, bool, bool]


def _bit_patterns(m: int) -> np.ndarray:
    """(m, 2**m) array of 0/1 levels, actuator 0 toggling fastest."""
    return (np.arange(2**m)[None, :] >> np.arange(m)[:, None]) & 1


def full_vertex_set(config: MarsConfig) -> WrenchVertexSet:
    """Per-rotor vertex set: every rotor independently at f_min or f_max."""
    rot = rotor_arrays(config)
    m = rot.f_min.size
    if m > 16:
        raise TooManyUnits(
            f"per-rotor vertex set needs 2^{m} columns; use the reduced set above 4 units"
        )
    bits = _bit_patterns(m)
    forces = rot.f_min[:, None] + bits * (rot.f_max - rot.f_min)[:, None]
    return WrenchVertexSet(forces=forces, wrenches=mars_effectiveness(config) @ forces)


def unit_effectiveness(config: MarsConfig) -> np.ndarray:
    """(4, n) wrench map of per-unit total forces, all rotors of a unit equal.

    Rotor offsets cancel within a unit, so the lever arms are the unit centres
    about the assembly centroid; opposite spin pairs cancel the yaw row.
    """
    c = centroid(config)
    pos = np.array([u.position for u in config.units], dtype=float)
    g = np.zeros((4, config.n_units))
    g[0] = 1.0
    g[1] = -(pos[:, 1] - c[1])
    g[2] = pos[:, 0] - c[0]
    return g


def reduced_vertex_set(config: MarsConfig) -> WrenchVertexSet:
    """Per-unit vertex set: each unit's four rotors move together between the
    unit force sums f_min and f_max."""
    n = config.n_units
    if n > MAX_UNITS:
        raise TooManyUnits(f"reduced vertex set supports up to {MAX_UNITS} units, got {n}")
    rot = rotor_arrays(config)
    low = np.array([rot.f_min[rot.unit_index == i].sum() for i in range(n)])
    high = np.array([rot.f_max[rot.unit_index == i].sum() for i in range(n)])
    bits = _bit_patterns(n)
    forces = low[:, None] + bits * (high - low)[:, None]
    return WrenchVertexSet(forces=forces, wrenches=unit_effectiveness(config) @ forces)


def virtual_vertex_forces(f_sum_min: float, f_sum_max: float) -> np.ndarray:
    """(4, 16) virtual rotor force combinations between the shared levels
    f_sum_min / 4 and f_sum_max / 4."""
    bits = _bit_patterns(4)
    return (f_sum_min + bits * (f_sum_max - f_sum_min)) / 4.0


def virtual_vertex_wrenches(g_v: np.ndarray, f_sum_min: float, f_sum_max: float) -> np.ndarray:
    """(4, 16) wrenches at the virtual quadrotor's extreme force combinations."""
    return g_v @ virtual_vertex_forces(f_sum_min, f_sum_max)


def hull_distance(points: np.ndarray, wrenches: np.ndarray) -> np.ndarray:
    """Max-norm distance from each point to the convex hull of ``wrenches``.

    One feasibility LP per point: minimise t subject to |W mu - p| <= t
    componentwise, mu a convex combination.  Zero (up to solver tolerance)
    means the point lies inside.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rows, cols = wrenches.shape
    if points.shape[1] != rows:
        raise ValueError(f"points have {points.shape[1]} components, hull has {rows}")
    # variables: [mu (cols), t]
    c = np.zeros(cols + 1)
    c[-1] = 1.0
    a_ub = np.block(
        [[wrenches, -np.ones((rows, 1))], [-wrenches, -np.ones((rows, 1))]]
    )
    a_eq = np.zeros((1, cols + 1))
    a_eq[0, :cols] = 1.0
    bounds = [(0.0, None)] * cols + [(0.0, None)]
    out = np.empty(points.shape[0])
    for i, p in enumerate(points):
        res = linprog(
            c,
            A_ub=a_ub,
            b_ub=np.concatenate([p, -p]),
            A_eq=a_eq,
            b_eq=[1.0],
            bounds=bounds,
            method="highs",
            options=_LP_OPTIONS,
        )
        if res.status != 0:
            raise InfeasibleAbstraction(f"hull distance LP failed: {res.message}")
        out[i] = res.fun
    return out


def _fit_arms(vertex_set: WrenchVertexSet, levels: np.ndarray, include_yaw: bool, c_vz: float):
    """Solve the arm-fit LP against one physical vertex set.

    levels is the (4, 16) virtual force table.  Returns (arms (4, 2),
    objective, alpha (n_phys, 16)).  Variables are [x1..x4, y1..y4, alpha]
    with alpha the column-stochastic weights, one column of physical
    combination weights per virtual vertex.
    """
    w = vertex_set.wrenches
    n_phys = w.shape[1]
    n_var = 8 + n_phys * 16
    spin = np.array([-1.0, -1.0, 1.0, 1.0])

    rows_per_col = 4 + (1 if include_yaw else 0)
    a_eq = np.zeros((rows_per_col * 16, n_var))
    b_eq = np.zeros(rows_per_col * 16)
    for k in range(16):
        v = levels[:, k]
        base = rows_per_col * k
        a_col = slice(8 + n_phys * k, 8 + n_phys * (k + 1))
        # thrust: sum of virtual forces is fixed by the levels
        a_eq[base, a_col] = w[0]
        b_eq[base] = v.sum()
        # tau_x: -sum_j y_j v_jk  =  combination of physical tau_x
        a_eq[base + 1, 4:8] = -v
        a_eq[base + 1, a_col] = -w[1]
        # tau_y: sum_j x_j v_jk
        a_eq[base + 2, 0:4] = v
        a_eq[base + 2, a_col] = -w[2]
        row = base + 3
        if include_yaw:
            a_eq[row, a_col] = w[3]
            b_eq[row] = c_vz * float(spin @ v)
            row += 1
        # convex combination
        a_eq[row, a_col] = 1.0

    b_eq[np.arange(16) * rows_per_col + rows_per_col - 1] = 1.0

    # maximise total arm length, so minimise the negated quadrant-signed sum
    c = np.zeros(n_var)
    c[0:4] = -_ARM_SIGNS[:, 0]
    c[4:8] = -_ARM_SIGNS[:, 1]

    bounds: list[tuple[float | None, float | None]] = []
    for j in range(4):
        bounds.append((0.0, None) if _ARM_SIGNS[j, 0] > 0 else (None, 0.0))
    for j in range(4):
        bounds.append((0.0, None) if _ARM_SIGNS[j, 1] > 0 else (None, 0.0))
    bounds.extend([(0.0, None)] * (n_phys * 16))

    res = linprog(
        c, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs", options=_LP_OPTIONS
    )
    if res.status != 0:
        raise InfeasibleAbstraction(f"arm fit LP failed (status {res.status}): {res.message}")
    arms = np.column_stack([res.x[0:4], res.x[4:8]])
    alpha = res.x[8:].reshape(16, n_phys).T
    return arms, -res.fun, alpha


def unequal_arm_abstraction(config: MarsConfig) -> UnequalArmAbstraction:
    """Fit the largest virtual quadrotor whose wrench polytope the assembly
    can realise.

    Raises InfeasibleAbstraction if the fit LP fails and TooManyUnits beyond
    MAX_UNITS units.
    """
    rot = rotor_arrays(config)
    f_sum_min = float(rot.f_min.sum())
    f_sum_max = float(rot.f_max.sum())
    c_vz = virtual_c_z(config, forces=rot.f_max)
    levels = virtual_vertex_forces(f_sum_min, f_sum_max)
    if config.n_units == 1:
        vertex_set = full_vertex_set(config)
        arms, arm_total, alpha = _fit_arms(vertex_set, levels, include_yaw=True, c_vz=c_vz)
    else:
        vertex_set = reduced_vertex_set(config)
        arms, arm_total, alpha = _fit_arms(vertex_set, levels, include_yaw=False, c_vz=c_vz)
    c = centroid(config)
    rotors = arms + c[:2]
    return UnequalArmAbstraction(
        mass=total_mass(config),
        centroid=c,
        inertia=composite_inertia(config),
        virtual_rotors=rotors,
        c_vz=c_vz,
        g_v=virtual_effectiveness(rotors, c, c_vz),
        f_sum_min=f_sum_min,
        f_sum_max=f_sum_max,
        arm_total=float(arm_total),
        containment_weights=alpha,
    )


def approximation_error(
    config: MarsConfig, abstraction: UnequalArmAbstraction | None = None
) -> ApproximationReport:
    """Relative mismatch of the fitted arms against the assembly's grouped
    torque sums with every rotor at max thrust.

    The four groups are the signed tau_x / tau_y sums; the virtual side
    evaluates them with all virtual rotors at their shared maximum.  Groups
    whose assembly sum vanishes are reported nan and excluded from the mean.
    """
    if abstraction is None:
        abstraction = unequal_arm_abstraction(config)
    rot = rotor_arrays(config)
    c = centroid(config)
    # assembly grouped sums at max thrust, in the same rotated-components
    # convention the equal-arm closure uses at yaw zero
    tau_x = (rot.position[:, 0] - c[0]) * rot.f_max
    tau_y = -(rot.position[:, 1] - c[1]) * rot.f_max
    s = np.array(
        [
            tau_x[tau_x > 0].sum(),
            tau_x[tau_x < 0].sum(),
            tau_y[tau_y > 0].sum(),
            tau_y[tau_y < 0].sum(),
        ]
    )
    arms = abstraction.arms()
    f = abstraction.f_sum_max / 4.0
    x, y = arms[:, 0], arms[:, 1]
    virtual = np.array(
        [
            (-y[1] - y[2]) * f,  # rotors 2, 3 carry the negative y arms
            (-y[0] - y[3]) * f,
            (x[0] + x[2]) * f,  # rotors 1, 3 carry the positive x arms
            (x[1] + x[3]) * f,
        ]
    )
    scale = np.abs(s).max()
    undefined = np.abs(s) <= GROUP_SUM_TOL * max(scale, 1.0)
    errors = np.full(4, np.nan)
    defined = ~undefined
    errors[defined] = (virtual[defined] - s[defined]) / s[defined]
    if not defined.any():
        raise DegenerateConfig("every grouped torque sum vanishes; no error is defined")
    mean = float(np.abs(errors[defined]).mean())
    return ApproximationReport(
        group_errors=errors,
        mean_abs_error=mean,
        undefined=tuple(bool(u) for u in undefined),
    )
