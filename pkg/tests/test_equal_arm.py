import numpy as np
import pytest
from numpy.testing import assert_allclose

from marskit.errors import DegenerateConfig
from marskit.equal_arm import (
    TorqueBalanceWeights,
    equal_arm_abstraction,
    grouped_torque_sums,
    optimal_yaw,
    virtual_c_z,
    yaw_objective,
)
from marskit.geometry import (
    MarsConfig,
    PayloadSpec,
    RotorSpec,
    UnitSpec,
    assembly_from_positions,
    build_grid_config,
    centroid,
    default_unit,
    mars_effectiveness,
    rotor_arrays,
)

# Expected values below were computed independently with plain scalar
# arithmetic (no package imports) before this module existed.

L3_POSITIONS = [(0.0, 0.0), (0.65, 0.0), (0.0, 0.65)]


def test_two_unit_row_objective_values():
    config = build_grid_config(1, 2)
    assert_allclose(yaw_objective(config, 0.0), 3.9000000000000004, rtol=1e-14)
    assert_allclose(yaw_objective(config, 0.3), 3.7258123075898633, rtol=1e-14)


def test_two_unit_row_optimum_is_aligned():
    theta, value = optimal_yaw(build_grid_config(1, 2))
    assert_allclose(theta, 0.0, atol=1e-9)
    assert_allclose(value, 3.9, rtol=1e-12)


def test_l_shape_optimum_and_tie_break():
    # L of three units has two mirror-symmetric maximisers; the smaller
    # angle wins.  Values from a 2e6-point scan plus golden refinement.
    config = assembly_from_positions(L3_POSITIONS)
    theta, value = optimal_yaw(config)
    assert_allclose(value, 7.06246927230287, rtol=1e-11)
    assert_allclose(theta, 0.3605660134687917, atol=1e-6)
    assert theta < np.pi / 4.0
    assert_allclose(yaw_objective(config, 0.0), 6.933333333333334, rtol=1e-14)
    # the rotation genuinely helps this shape
    assert value > yaw_objective(config, 0.0) + 0.1


def test_objective_matches_absolute_sum_form():
    # grouped-sum evaluation must equal the direct sum of absolute values
    rng = np.random.default_rng(3)
    config = assembly_from_positions([(0, 0), (0.65, 0), (0.65, 0.65), (1.3, 0.65)])
    rot = rotor_arrays(config)
    c = centroid(config)
    for _ in range(25):
        theta = rng.uniform(0.0, np.pi)
        lever_x = -(rot.position[:, 1] - c[1])
        lever_y = rot.position[:, 0] - c[0]
        tau_x = np.sin(theta) * lever_x + np.cos(theta) * lever_y
        tau_y = np.cos(theta) * lever_x - np.sin(theta) * lever_y
        direct = np.abs(tau_x).sum() + np.abs(tau_y).sum()
        assert_allclose(yaw_objective(config, theta), direct, rtol=1e-13)


def test_objective_is_pi_periodic():
    config = assembly_from_positions(L3_POSITIONS)
    rng = np.random.default_rng(11)
    for _ in range(10):
        theta = rng.uniform(0.0, np.pi)
        assert_allclose(
            yaw_objective(config, theta), yaw_objective(config, theta + np.pi), rtol=1e-12
        )


def test_optimum_beats_dense_grid():
    # the optimiser may never fall below a brute scan of its own objective
    for positions in ([(0, 0)], L3_POSITIONS, [(0, 0), (0.65, 0), (1.3, 0)]):
        config = assembly_from_positions(positions)
        _, value = optimal_yaw(config)
        grid = np.linspace(0.0, np.pi, 5000, endpoint=False)
        scanned = max(yaw_objective(config, t) for t in grid)
        assert value >= scanned - 1e-9


def test_weights_shift_the_optimum():
    config = build_grid_config(1, 2)
    # heavily favouring tau_y authority rotates the row by a quarter turn
    theta, _ = optimal_yaw(config, TorqueBalanceWeights(c_x=0.0, c_y=1.0))
    assert_allclose(theta, np.pi / 2.0, atol=1e-6)
    with pytest.raises(ValueError):
        optimal_yaw(config, TorqueBalanceWeights(c_x=0.0, c_y=0.0))
    with pytest.raises(ValueError):
        optimal_yaw(config, TorqueBalanceWeights(c_x=-1.0, c_y=1.0))


def test_single_unit_abstraction_is_identity():
    config = MarsConfig(units=(default_unit((0.0, 0.0, 0.0)),))
    ab = equal_arm_abstraction(config)
    assert_allclose(ab.yaw, 0.0, atol=1e-9)
    arm = 0.65 / 4.0
    assert_allclose(
        ab.virtual_rotors,
        arm * np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]]),
        atol=1e-12,
    )
    assert_allclose(ab.g_v, mars_effectiveness(config), atol=1e-12)
    assert_allclose(ab.mass, 1.5)
    assert_allclose(ab.c_vz, 0.06)
    assert_allclose(ab.f_sum_min, 0.0)
    assert_allclose(ab.f_sum_max, 28.0)


def test_two_unit_row_arms():
    # the long virtual arm lands on y even though the assembly extends in x:
    # the x levers feed tau_x, which the y arms reproduce
    ab = equal_arm_abstraction(build_grid_config(1, 2))
    assert_allclose(
        ab.virtual_rotors,
        np.array([[0.1625, 0.325], [-0.1625, -0.325], [0.1625, -0.325], [-0.1625, 0.325]]),
        atol=1e-12,
    )
    assert_allclose(np.diag(ab.inertia), [0.0694, 0.408675, 0.512275], rtol=1e-12)
    assert_allclose(ab.mass, 3.0)


def test_square_abstraction_rotors_sit_on_unit_centres():
    ab = equal_arm_abstraction(build_grid_config(2, 2))
    assert_allclose(ab.yaw, 0.0, atol=1e-9)
    assert_allclose(
        ab.virtual_rotors,
        np.array([[0.325, 0.325], [-0.325, -0.325], [0.325, -0.325], [-0.325, 0.325]]),
        atol=1e-12,
    )
    assert_allclose(ab.f_sum_max, 4 * 28.0)


def test_grouped_sums_reproduced_by_virtual_quad():
    # at theta*, the virtual quad at unit force must reproduce the assembly's
    # grouped torque sums exactly; this is the defining property of the arms
    for positions in (L3_POSITIONS, [(0, 0), (0.65, 0), (1.3, 0), (0.65, 0.65)]):
        config = assembly_from_positions(positions)
        ab = equal_arm_abstraction(config)
        s_x_pos, s_x_neg, s_y_pos, s_y_neg = grouped_torque_sums(config, ab.yaw)
        n_rotors = 4.0 * config.n_units
        arms = ab.arms()
        # virtual rotors at force n_rotors/4 each match the f=1 assembly sums
        f = n_rotors / 4.0
        tau_x = -arms[:, 1] * f
        tau_y = arms[:, 0] * f
        assert_allclose(tau_x[tau_x > 0].sum(), s_x_pos, rtol=1e-12)
        assert_allclose(tau_x[tau_x < 0].sum(), s_x_neg, rtol=1e-12)
        assert_allclose(tau_y[tau_y > 0].sum(), s_y_pos, rtol=1e-12)
        assert_allclose(tau_y[tau_y < 0].sum(), s_y_neg, rtol=1e-12)


def test_abstraction_arm_signs_and_quadrants():
    rng = np.random.default_rng(5)
    for _ in range(10):
        n = int(rng.integers(2, 6))
        positions = rng.uniform(-1.0, 1.0, size=(n, 2)) * 0.65
        config = assembly_from_positions(positions)
        ab = equal_arm_abstraction(config)
        arms = ab.arms()
        signs = np.sign(arms)
        assert_allclose(signs, [[1, 1], [-1, -1], [1, -1], [-1, 1]])


def test_degenerate_rotor_geometry_raises():
    # every rotor at the unit centre: zero levers, zero objective
    u = default_unit()
    rotors = tuple(
        RotorSpec((0.0, 0.0, 0.0), r.spin_sign, r.f_min, r.f_max, r.c_z) for r in u.rotors
    )
    collapsed = UnitSpec(mass=u.mass, position=u.position, rotors=rotors)
    with pytest.raises(DegenerateConfig):
        equal_arm_abstraction(MarsConfig(units=(collapsed,)))

    # a heavy far payload drags the centroid outside the rotor footprint, so
    # one signed torque group is empty at the optimal yaw
    lopsided = MarsConfig(
        units=(default_unit(),), payload=PayloadSpec(mass=5.0, position=(5.0, 0.0, -0.1))
    )
    with pytest.raises(DegenerateConfig):
        equal_arm_abstraction(lopsided)


def test_virtual_c_z_weighted_mean():
    config = build_grid_config(1, 2)
    assert_allclose(virtual_c_z(config), 0.06, rtol=1e-15)
    forces = np.array([1, 1, 1, 1, 3, 3, 3, 3], dtype=float)
    assert_allclose(virtual_c_z(config, forces), 0.06, rtol=1e-15)


def test_translation_invariance():
    # shifting the whole assembly must not change yaw, objective, or arms
    base = assembly_from_positions(L3_POSITIONS)
    moved = assembly_from_positions([(x + 2.0, y - 1.0) for x, y in L3_POSITIONS])
    ab0 = equal_arm_abstraction(base)
    ab1 = equal_arm_abstraction(moved)
    # yaw sits on a flat numerical plateau around the true maximiser, so the
    # two instances may disagree by ~1e-8 even though both are optimal
    assert_allclose(ab1.yaw, ab0.yaw, atol=1e-7)
    assert_allclose(ab1.objective, ab0.objective, rtol=1e-12)
    assert_allclose(ab1.arms(), ab0.arms(), atol=1e-7)
