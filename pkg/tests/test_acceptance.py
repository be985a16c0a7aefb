"""End-to-end acceptance checks, one numbered criterion per test.

Each test prints a single ``criterion N: PASS/FAIL - ...`` line carrying the
measured quantities; run ``pytest -s tests/test_acceptance.py`` to see the
lines while green.  Several criteria drive full closed-loop simulations and
take tens of seconds; the whole file runs in about four minutes.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.linalg import null_space
from scipy.optimize import linprog

from marskit import cli
from marskit.allocation import WrenchAllocator
from marskit.dynamics import (
    BodyParams,
    RigidState,
    WrenchCommand,
    angular_momentum_world,
    rotational_energy,
    step,
)
from marskit.equal_arm import equal_arm_abstraction, yaw_objective
from marskit.errors import TargetUnreachable
from marskit.geometry import (
    DEFAULT_SIDE,
    PayloadSpec,
    assembly_from_positions,
    build_grid_config,
    centroid,
    composite_inertia,
    mars_effectiveness,
    rotor_arrays,
    total_mass,
)
from marskit.magnetics import (
    contact_ring,
    docking_lattice,
    field_objective,
    optimize_arrangement,
    uniform_baseline,
)
from marskit.polytope import (
    approximation_error,
    full_vertex_set,
    reduced_vertex_set,
    unequal_arm_abstraction,
    virtual_vertex_wrenches,
)
from marskit.simulate import Scenario, run_simulation

S = DEFAULT_SIDE
L3_POSITIONS = [(0.0, 0.0), (S, 0.0), (0.0, S)]
T4_POSITIONS = [(0.0, 0.0), (S, 0.0), (2 * S, 0.0), (S, S)]
CIRCLE = Scenario("circle", {"radius": 1.5, "speed": 1.0, "height": 1.0})
TEN_LAPS = 10 * 2.0 * np.pi * 1.5 / 1.0  # seconds at 1 m/s on r = 1.5 m


def _report(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line, flush=True)
    assert ok, line


def _named_configs():
    return (
        ("1x1", build_grid_config(1, 1)),
        ("2x1", build_grid_config(1, 2)),
        ("3x1", build_grid_config(1, 3)),
        ("2x2", build_grid_config(2, 2)),
        ("L-3", assembly_from_positions(L3_POSITIONS)),
        ("T-4", assembly_from_positions(T4_POSITIONS)),
    )


def _hull_gap(points: np.ndarray, columns: np.ndarray) -> float:
    """Worst max-norm distance from the points to the hull of the columns.

    Deliberately a from-scratch LP rather than a call into the library, so it
    can disagree with the fit it is checking.
    """
    rows, ncols = columns.shape
    c = np.zeros(ncols + 1)
    c[-1] = 1.0
    a_ub = np.block([[columns, -np.ones((rows, 1))], [-columns, -np.ones((rows, 1))]])
    a_eq = np.zeros((1, ncols + 1))
    a_eq[0, :ncols] = 1.0
    worst = 0.0
    for p in points:
        res = linprog(
            c,
            A_ub=a_ub,
            b_ub=np.concatenate([p, -p]),
            A_eq=a_eq,
            b_eq=[1.0],
            bounds=[(0.0, None)] * (ncols + 1),
            method="highs",
        )
        assert res.status == 0, res.message
        worst = max(worst, float(res.fun))
    return worst


def test_criterion_01_single_unit_identity():
    start = time.perf_counter()
    config = build_grid_config(1, 1)
    c = centroid(config)
    phys = rotor_arrays(config).position[:, :2] - c[:2]
    g_ref = mars_effectiveness(config)
    worst_pos = 0.0
    worst_g = 0.0
    for ab in (equal_arm_abstraction(config), unequal_arm_abstraction(config)):
        order = np.lexsort((phys[:, 1], phys[:, 0]))
        arms = ab.arms()
        v_order = np.lexsort((arms[:, 1], arms[:, 0]))
        worst_pos = max(worst_pos, float(np.abs(phys[order] - arms[v_order]).max()))
        best = min(
            float(np.abs(ab.g_v[:, list(p)] - g_ref).max())
            for p in itertools.permutations(range(4))
        )
        worst_g = max(worst_g, best)
    elapsed = time.perf_counter() - start
    ok = worst_pos < 1e-9 and worst_g < 1e-9 and elapsed < 1.0
    _report(
        1,
        ok,
        f"single unit: rotor position mismatch {worst_pos:.1e} m, effectiveness "
        f"mismatch {worst_g:.1e} after reordering, both abstractions, {elapsed:.2f} s",
    )


def test_criterion_02_torque_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for _, config in _named_configs():
        ab = equal_arm_abstraction(config)
        rot = rotor_arrays(config)
        c = centroid(config)
        neg_y = -(rot.position[:, 1] - c[1])
        x = rot.position[:, 0] - c[0]
        st, ct = np.sin(ab.yaw), np.cos(ab.yaw)
        ta = (st * neg_y + ct * x) * rot.f_max
        tb = (ct * neg_y - st * x) * rot.f_max
        phys = np.array(
            [ta[ta > 0].sum(), ta[ta < 0].sum(), tb[tb > 0].sum(), tb[tb < 0].sum()]
        )
        # the y arms carry the first component's groups, the x arms the second
        f = ab.f_sum_max / 4.0
        ya = -ab.arms()[:, 1] * f
        xb = ab.arms()[:, 0] * f
        virt = np.array(
            [ya[ya > 0].sum(), ya[ya < 0].sum(), xb[xb > 0].sum(), xb[xb < 0].sum()]
        )
        worst = max(worst, float(np.abs(phys - virt).max()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 5.0
    _report(
        2,
        ok,
        f"max-thrust grouped torque sums match across 6 assemblies, worst residual "
        f"{worst:.1e} N m, {elapsed:.2f} s",
    )


def test_criterion_03_yaw_gain():
    configs = (
        ("3x1", build_grid_config(1, 3)),
        ("L-3", assembly_from_positions(L3_POSITIONS)),
    )
    grid = np.linspace(0.0, np.pi, 3600, endpoint=False)
    ok = True
    details = []
    for name, config in configs:
        ab = equal_arm_abstraction(config)
        base = yaw_objective(config, 0.0)
        grid_best = max(yaw_objective(config, float(t)) for t in grid)
        ok = ok and ab.objective > base and ab.objective >= grid_best - 1e-9
        details.append(f"{name} +{100.0 * (ab.objective - base) / base:.2f}%")
    _report(
        3,
        ok,
        "yaw search beats zero yaw and the 3600-point scan on asymmetric "
        "assemblies: " + ", ".join(details),
    )


def test_criterion_04_polytope_containment():
    start = time.perf_counter()
    worst = 0.0
    for _, config in _named_configs():
        ab = unequal_arm_abstraction(config)
        vw = virtual_vertex_wrenches(ab.g_v, ab.f_sum_min, ab.f_sum_max)
        if config.n_units == 1:
            # only the single unit keeps per-rotor vertices with a live yaw row
            gap = _hull_gap(vw.T, full_vertex_set(config).wrenches)
        else:
            gap = _hull_gap(vw[:3].T, reduced_vertex_set(config).wrenches[:3])
        worst = max(worst, gap)
    square = approximation_error(build_grid_config(2, 2)).mean_abs_error
    ell = approximation_error(assembly_from_positions(L3_POSITIONS)).mean_abs_error
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and square < 1e-12 and ell > 0.0 and elapsed < 30.0
    _report(
        4,
        ok,
        f"all virtual vertices inside the physical hull, worst gap {worst:.1e}; "
        f"arm error 0 on the square grid ({square:.1e}) and {ell:.3f} on the "
        f"L assembly, {elapsed:.1f} s",
    )


def test_criterion_05_allocation_optimality():
    start = time.perf_counter()
    config = build_grid_config(1, 2)
    g = mars_effectiveness(config)
    rot = rotor_arrays(config)
    allocator = WrenchAllocator.from_config(config)
    basis = null_space(g)
    assert basis.shape == (8, 4)
    combos = np.array(list(itertools.product(np.linspace(-3.5, 3.5, 21), repeat=4)))
    rng = np.random.default_rng(11)
    worst_resid = 0.0
    worst_gap = -np.inf
    all_feasible = True
    for _ in range(20):
        u = g @ rng.uniform(rot.f_min, rot.f_max)
        forces, diag = allocator.allocate(u)
        all_feasible = all_feasible and diag.feasible
        worst_resid = max(worst_resid, float(np.abs(g @ forces - u).max()))
        # brute force: walk the null space of g on a 21^4 grid around the
        # solution and keep the feasible candidate of least variance
        cand = forces[None, :] + combos @ basis.T
        feasible = np.all(cand >= rot.f_min - 1e-9, axis=1) & np.all(
            cand <= rot.f_max + 1e-9, axis=1
        )
        grid_min = float(np.var(cand[feasible], axis=1).min())
        worst_gap = max(worst_gap, float(np.var(forces)) - grid_min)
    elapsed = time.perf_counter() - start
    ok = worst_resid < 1e-8 and worst_gap <= 1e-6 and all_feasible and elapsed < 60.0
    _report(
        5,
        ok,
        f"20 random wrenches: equality residual {worst_resid:.1e}, solver variance "
        f"within {worst_gap:.1e} of the grid minimum, {elapsed:.1f} s",
    )


def test_criterion_06_allocator_latency(tmp_path, capsys):
    rc = cli.main(
        [
            "bench",
            "--units",
            "1,4,9,25,50",
            "--samples",
            "200",
            "--out",
            str(tmp_path),
            "--seed",
            "7",
        ]
    )
    printed = capsys.readouterr().out
    lines = [
        ln
        for ln in (tmp_path / "bench.csv").read_text().splitlines()
        if ln and not ln.startswith("#")
    ]
    header = lines[0].split(",")
    table = {
        int(row[0]): dict(zip(header, row)) for row in (ln.split(",") for ln in lines[1:])
    }
    median50 = float(table[50]["median_ms"])
    ok = (
        rc == 0
        and sorted(table) == [1, 4, 9, 25, 50]
        and median50 <= 5.0
        and "median_ms" in printed
    )
    _report(
        6,
        ok,
        f"warm-started allocation at 50 units: median {median50:.3f} ms "
        f"(p90 {float(table[50]['p90_ms']):.3f} ms), size table on stdout and in bench.csv",
    )


def test_criterion_07_circle_tracking_and_hover():
    start = time.perf_counter()
    ok = True
    details = []
    for name, config in (
        ("1x1", build_grid_config(1, 1)),
        ("2x1", build_grid_config(1, 2)),
        ("2x2", build_grid_config(2, 2)),
    ):
        rep = run_simulation(config, "equal", CIRCLE, duration=TEN_LAPS, seed=0)
        mae = rep.metrics["mean_abs_position_error_m"]
        ok = ok and rep.error is None and mae <= 0.15
        details.append(f"{name} {1000.0 * mae:.1f} mm")
    hover = run_simulation(
        build_grid_config(1, 2),
        "equal",
        Scenario("hover", {"position": (0.0, 0.0, 1.0)}),
        duration=10.0,
        seed=0,
    )
    hover_mean = hover.metrics["mean_abs_position_error_m"]
    settle = run_simulation(
        build_grid_config(1, 2),
        "equal",
        Scenario("hover", {"position": (0.0, 0.0, 1.0), "offset": (0.5, 0.0, 0.0)}),
        duration=4.5,
        seed=0,
    )
    final = float(np.linalg.norm(settle.rows[-1, 1:4] - np.array([0.0, 0.0, 1.0])))
    elapsed = time.perf_counter() - start
    ok = ok and hover_mean < 1e-3 and final < 1e-3 and elapsed < 180.0
    _report(
        7,
        ok,
        f"10-lap circle MAE {', '.join(details)} (limit 150 mm); hover mean error "
        f"{1000.0 * hover_mean:.2e} mm; 0.5 m offset settles to "
        f"{1e6 * final:.1f} um; {elapsed:.0f} s",
    )


def test_criterion_08_payload_circle():
    start = time.perf_counter()
    config = build_grid_config(
        1, 2, payload=PayloadSpec(mass=0.6, position=(0.325, 0.0, 0.0))
    )
    rep = run_simulation(config, "equal", CIRCLE, duration=TEN_LAPS, seed=0)
    col = rep.columns.index("alloc_feasible")
    infeasible = int(np.sum(rep.rows[:, col] < 0.5))
    mae = rep.metrics["mean_abs_position_error_m"]
    elapsed = time.perf_counter() - start
    ok = rep.error is None and infeasible == 0 and mae <= 0.25
    _report(
        8,
        ok,
        f"0.6 kg payload under one unit: {infeasible} infeasible allocation steps, "
        f"circle MAE {1000.0 * mae:.1f} mm (limit 250 mm), {elapsed:.0f} s",
    )


def test_criterion_09_tumble_conservation():
    config = build_grid_config(2, 2)
    params = BodyParams(mass=total_mass(config), inertia=composite_inertia(config))
    state = RigidState(
        position=np.zeros(3),
        quaternion=np.array([1.0, 0.0, 0.0, 0.0]),
        velocity=np.zeros(3),
        angular_velocity=np.array([2.0, -1.0, 1.5]),
    )
    wrench = WrenchCommand(thrust=0.0, torque=np.zeros(3))
    h0 = angular_momentum_world(state, params)
    e0 = rotational_energy(state, params)
    h_drift = e_drift = q_drift = 0.0
    for _ in range(2500):
        state = step(state, wrench, params, dt=0.002)
        h_now = angular_momentum_world(state, params)
        h_drift = max(h_drift, float(np.linalg.norm(h_now - h0) / np.linalg.norm(h0)))
        e_drift = max(e_drift, abs(rotational_energy(state, params) - e0) / e0)
        q_drift = max(q_drift, abs(float(np.linalg.norm(state.quaternion)) - 1.0))
    ok = h_drift < 1e-6 and e_drift < 1e-6 and q_drift < 1e-9
    _report(
        9,
        ok,
        f"5 s torque-free tumble: momentum drift {h_drift:.1e}, energy drift "
        f"{e_drift:.1e}, quaternion norm drift {q_drift:.1e}",
    )


def test_criterion_10_magnet_gain():
    start = time.perf_counter()
    lattice = docking_lattice(7, 6, 0.02, 0.006)
    observations = contact_ring(7, 0.02, 0.006)
    baseline = field_objective(uniform_baseline(lattice), observations)
    with pytest.raises(TargetUnreachable) as first:
        optimize_arrangement(lattice, observations, b_desired=float("inf"), seed=3)
    history = np.asarray(first.value.history, dtype=float)
    arrangement = first.value.arrangement
    with pytest.raises(TargetUnreachable) as second:
        optimize_arrangement(lattice, observations, b_desired=float("inf"), seed=3)
    elapsed = time.perf_counter() - start
    gain = 100.0 * (history[-1] / baseline - 1.0)
    ok = (
        history.size == 7
        and bool(np.all(np.diff(history) >= -1e-12))
        and history[-1] > baseline
        and np.array_equal(history, np.asarray(second.value.history, dtype=float))
        and abs(field_objective(arrangement.magnets, observations) - history[-1]) < 1e-9
        and elapsed < 120.0
    )
    _report(
        10,
        ok,
        f"7-layer arrangement beats the uniform-axis baseline by {gain:.2f}% "
        f"({history[-1]:.3f} vs {baseline:.3f}), history non-decreasing and "
        f"seed-stable, {elapsed:.1f} s",
    )
