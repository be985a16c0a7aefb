"""Command line front end: abstract, simulate, allocate, magnets, bench.

Every command writes delimited output into --out (CSV is the interchange
format and is byte-stable for a fixed seed); --format report additionally
renders PNG figures next to the CSV.  Exit codes: 0 success, 2 validation
failure (bad flags, malformed or inconsistent config), 3 solver failure,
4 infeasible scenario.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .allocation import WrenchAllocator
from .apc import ApcSettings, ApcWeights
from .equal_arm import equal_arm_abstraction
from .errors import MarskitError, ParseError, TargetUnreachable, ValidationError
from .geometry import MarsConfig, build_grid_config, load_config, mars_effectiveness, rotor_arrays
from .magnetics import (
    contact_ring,
    docking_lattice,
    field_objective,
    optimize_arrangement,
    uniform_baseline,
)
from .polytope import unequal_arm_abstraction
from .simulate import Scenario, config_digest, run_simulation, write_run_csv

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_INFEASIBLE = 4

# Everything not listed is a solver failure.
_ERROR_CODES = {
    "ParseError": EXIT_VALIDATION,
    "ValidationError": EXIT_VALIDATION,
    "TooManyUnits": EXIT_VALIDATION,
    "CoincidentPoint": EXIT_VALIDATION,
    "DegenerateConfig": EXIT_INFEASIBLE,
    "InfeasibleAbstraction": EXIT_INFEASIBLE,
    "InfeasibleWrench": EXIT_INFEASIBLE,
    "TargetUnreachable": EXIT_INFEASIBLE,
}


def _exit_code(name: str) -> int:
    return _ERROR_CODES.get(name, EXIT_SOLVER)


def _parse_vector(text: str, n: int, flag: str) -> tuple[float, ...]:
    parts = text.split(",")
    if len(parts) != n:
        raise ValidationError(f"{flag} needs {n} comma-separated numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ValidationError(f"{flag} needs numbers, got {text!r}") from exc


def _resolve_config(args) -> tuple[MarsConfig, ApcWeights | None, ApcSettings | None]:
    """Assembly plus optional controller overrides from the config document."""
    if args.config is not None and args.grid is not None:
        raise ValidationError("--config and --grid are mutually exclusive")
    if args.grid is not None:
        try:
            cols_str, rows_str = args.grid.lower().split("x")
            cols, rows_n = int(cols_str), int(rows_str)
        except ValueError as exc:
            raise ValidationError(f"--grid must look like 2x1, got {args.grid!r}") from exc
        return build_grid_config(rows_n, cols), None, None
    if args.config is None:
        raise ValidationError("one of --config or --grid is required")
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config {args.config!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}") from exc
    config = load_config(doc)
    ctl = doc.get("controller")
    if ctl is None:
        return config, None, None
    if not isinstance(ctl, dict):
        raise ValidationError("controller must be a JSON object")
    unknown = set(ctl) - {"weights", "settings"}
    if unknown:
        raise ValidationError(f"unknown controller keys {sorted(unknown)}")
    weights = settings = None
    try:
        if "weights" in ctl:
            weights = ApcWeights(
                **{k: tuple(v) if isinstance(v, list) else v for k, v in ctl["weights"].items()}
            )
        if "settings" in ctl:
            settings = ApcSettings(**ctl["settings"])
    except TypeError as exc:
        raise ValidationError(f"bad controller section: {exc}") from exc
    return config, weights, settings


def _write_table(path: str, header_lines: list[str], rows: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        for row in rows:
            fh.write(",".join(
                repr(float(v)) if isinstance(v, float) else str(v) for v in row
            ) + "\n")


def _cmd_abstract(args) -> int:
    config, _, _ = _resolve_config(args)
    absn = equal_arm_abstraction(config) if args.mode == "equal" else unequal_arm_abstraction(config)
    digest = config_digest(config)
    rows: list[tuple] = [("field", "value"), ("n_units", config.n_units),
                         ("mass", float(absn.mass))]
    for k, name in enumerate(("centroid_x", "centroid_y", "centroid_z")):
        rows.append((name, float(absn.centroid[k])))
    if args.mode == "equal":
        rows += [("yaw", float(absn.yaw)), ("objective", float(absn.objective))]
    else:
        rows.append(("arm_total", float(absn.arm_total)))
    rows += [("c_vz", float(absn.c_vz)),
             ("f_sum_min", float(absn.f_sum_min)), ("f_sum_max", float(absn.f_sum_max))]
    for k in range(4):
        rows.append((f"virtual_rotor_{k + 1}_x", float(absn.virtual_rotors[k, 0])))
        rows.append((f"virtual_rotor_{k + 1}_y", float(absn.virtual_rotors[k, 1])))
    for i in range(4):
        for j in range(4):
            rows.append((f"g_v_{i}_{j}", float(absn.g_v[i, j])))
    path = os.path.join(args.out, "abstract.csv")
    _write_table(path, [
        "# marskit-abstract v1",
        f"# config: sha256:{digest}",
        f"# mode: {args.mode}",
    ], rows)
    arms = absn.arms()
    print(f"{args.mode} abstraction of {config.n_units} unit(s), mass {absn.mass:.3f} kg")
    print(f"  thrust range [{absn.f_sum_min:.2f}, {absn.f_sum_max:.2f}] N, c_vz {absn.c_vz:.4f}")
    print("  virtual arms (m): " + "  ".join(f"({a[0]:+.4f}, {a[1]:+.4f})" for a in arms))
    print(f"wrote {path}")
    if args.format == "report":
        from . import report as _report

        for p in _report.render_abstract(config, absn, args.out):
            print(f"wrote {p}")
    return EXIT_OK


def _scenario_from_args(args) -> Scenario:
    params: dict = {}
    for key in ("radius", "speed", "height"):
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    if args.center is not None:
        params["center"] = _parse_vector(args.center, 2, "--center")
    for key in ("position", "start", "direction", "offset"):
        value = getattr(args, key)
        if value is not None:
            params[key] = _parse_vector(value, 3, f"--{key}")
    return Scenario(args.scenario, params)


def _cmd_simulate(args) -> int:
    config, weights, settings = _resolve_config(args)
    scenario = _scenario_from_args(args)
    report = run_simulation(
        config,
        mode=args.mode,
        scenario=scenario,
        duration=args.duration,
        seed=args.seed,
        weights=weights,
        settings=settings,
    )
    path = os.path.join(args.out, "run.csv")
    write_run_csv(report, path)
    print(f"{scenario.label} ({args.mode}), config sha256:{report.config_digest[:12]}...")
    print(f"  {report.rows.shape[0]} rows at dt {report.dt} s")
    for key in sorted(report.metrics):
        print(f"  {key}: {report.metrics[key]:.6g}")
    print(f"wrote {path}")
    if args.format == "report" and report.rows.shape[0]:
        from . import report as _report

        for p in _report.render_run(report, args.out):
            print(f"wrote {p}")
    if report.error is not None:
        print(f"error at step {report.error_step}: {report.error}", file=sys.stderr)
        return _exit_code(report.error.split(":", 1)[0])
    return EXIT_OK


def _cmd_allocate(args) -> int:
    config, _, _ = _resolve_config(args)
    u_phys = np.array(_parse_vector(args.wrench, 4, "--wrench"))
    allocator = WrenchAllocator.from_config(config)
    u_alloc = np.array([u_phys[0], -u_phys[1], -u_phys[2], u_phys[3]])
    forces, diag = allocator.allocate(u_alloc)
    rows: list[tuple] = [("field", "value")]
    rows += [(f"f_{i + 1}", float(forces[i])) for i in range(forces.size)]
    rows += [
        ("residual_max", float(np.max(np.abs(diag.residual)))),
        ("variance", float(diag.variance)),
        ("iterations", int(diag.iterations)),
        ("feasible", int(diag.feasible)),
        ("beta", float(diag.beta)),
    ]
    path = os.path.join(args.out, "allocation.csv")
    _write_table(path, [
        "# marskit-allocate v1",
        f"# config: sha256:{config_digest(config)}",
        f"# wrench: {','.join(repr(float(v)) for v in u_phys)}",
    ], rows)
    print(f"allocated {config.n_rotors} rotor forces, variance {diag.variance:.6g}")
    if not diag.feasible:
        print(f"  wrench infeasible: torques scaled by beta {diag.beta:.4f}")
    print("  f = [" + ", ".join(f"{v:.4f}" for v in forces) + "]")
    print(f"wrote {path}")
    return EXIT_OK if diag.feasible else EXIT_INFEASIBLE


def _cmd_magnets(args) -> int:
    lattice = docking_lattice(args.layers, args.per_layer, args.radius, args.pitch)
    observations = contact_ring(args.layers, args.radius, args.pitch)
    target = float("inf") if args.b_desired is None else args.b_desired
    reached = True
    try:
        arrangement, history = optimize_arrangement(
            lattice, observations, target, seed=args.seed
        )
    except TargetUnreachable as exc:
        arrangement, history = exc.arrangement, exc.history
        reached = False
    baseline = field_objective(uniform_baseline(lattice[: arrangement.layers]), observations)
    best = float(history[-1])
    gain = 100.0 * (best - baseline) / baseline
    hist_path = os.path.join(args.out, "magnets_history.csv")
    _write_table(hist_path, [
        "# marskit-magnets v1",
        f"# seed: {args.seed}",
        f"# lattice: layers={args.layers} per_layer={args.per_layer} "
        f"radius={args.radius!r} pitch={args.pitch!r}",
    ], [("layers", "objective")] + [(k + 1, float(v)) for k, v in enumerate(history)])
    layer_of = {}
    for l, (first, second) in enumerate(arrangement.groups):
        for idx in first + second:
            layer_of[idx] = l
    arr_path = os.path.join(args.out, "magnets_arrangement.csv")
    _write_table(arr_path, [
        "# marskit-magnets v1",
        f"# seed: {args.seed}",
    ], [("magnet", "layer", "x", "y", "z", "mx", "my", "mz")] + [
        (i + 1, layer_of[i], *(float(v) for v in m.position), *(float(v) for v in m.moment))
        for i, m in enumerate(arrangement.magnets)
    ])
    print(f"searched up to {history.size} layer(s), best objective {best:.6g} T")
    print(f"  uniform +z baseline {baseline:.6g} T, gain {gain:+.2f}%")
    if args.b_desired is not None:
        print(f"  target {target:.6g} T " + ("reached" if reached else "NOT reached"))
    print(f"wrote {hist_path}")
    print(f"wrote {arr_path}")
    if args.format == "report":
        from . import report as _report

        for p in _report.render_magnets(
            arrangement, history, args.out,
            baseline=baseline, target=None if args.b_desired is None else target,
        ):
            print(f"wrote {p}")
    if args.b_desired is not None and not reached:
        print(f"error: target {target!r} unreachable with {args.layers} layer(s)",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _near_square(n: int) -> tuple[int, int]:
    rows = int(np.sqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def _cmd_bench(args) -> int:
    if args.config is not None or args.grid is not None:
        configs = [_resolve_config(args)[0]]
    else:
        sizes = sorted({int(s) for s in args.units.split(",")})
        if any(s < 1 for s in sizes):
            raise ValidationError(f"--units must be positive integers, got {args.units!r}")
        configs = [build_grid_config(*_near_square(n)) for n in sizes]
    rng = np.random.default_rng(args.seed)
    table = []
    for config in configs:
        allocator = WrenchAllocator.from_config(config)
        g = mars_effectiveness(config)
        rot = rotor_arrays(config)
        span = rot.f_max - rot.f_min
        forces = rng.uniform(rot.f_min, rot.f_max)
        samples = np.empty(args.samples)
        for k in range(args.samples + 5):
            forces = np.clip(
                forces + 0.05 * span * rng.standard_normal(forces.size),
                rot.f_min, rot.f_max,
            )
            u = g @ forces
            tic = time.perf_counter()
            allocator.allocate(u)
            if k >= 5:
                samples[k - 5] = 1e3 * (time.perf_counter() - tic)
        table.append((
            config.n_units, config.n_rotors,
            float(np.median(samples)), float(np.percentile(samples, 90.0)),
        ))
    print(f"{'units':>6} {'rotors':>7} {'median_ms':>10} {'p90_ms':>8}")
    for n, m, med, p90 in table:
        print(f"{n:>6} {m:>7} {med:>10.4f} {p90:>8.4f}")
    path = os.path.join(args.out, "bench.csv")
    _write_table(path, [
        "# marskit-bench v1",
        f"# seed: {args.seed} samples: {args.samples}",
    ], [("n_units", "n_rotors", "median_ms", "p90_ms")] + table)
    print(f"wrote {path}")
    if args.format == "report":
        from . import report as _report

        for p in _report.render_bench(np.array(table, dtype=float), args.out):
            print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marskit",
        description="Docked multirotor assemblies: abstraction, simulation, "
        "allocation, magnet arrays, benchmarks.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=int, default=0, help="record tag and RNG seed")
    common.add_argument("--format", choices=("csv", "report"), default="csv",
                        help="report also renders PNG figures next to the CSV")
    cfg = argparse.ArgumentParser(add_help=False)
    cfg.add_argument("--config", help="assembly JSON document")
    cfg.add_argument("--grid", help="grid assembly shortcut COLSxROWS, "
                     "e.g. 2x1 is two units along +x")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("abstract", parents=[common, cfg],
                       help="collapse an assembly into its virtual quadrotor")
    p.add_argument("--mode", choices=("equal", "unequal"), default="equal")
    p.set_defaults(func=_cmd_abstract)

    p = sub.add_parser("simulate", parents=[common, cfg],
                       help="fly a scenario closed loop and record it")
    p.add_argument("--mode", choices=("equal", "unequal"), default="equal")
    p.add_argument("--scenario", choices=("hover", "circle", "line", "figure8"),
                   default="hover")
    p.add_argument("--duration", type=float, default=10.0, help="seconds (default 10)")
    p.add_argument("--radius", type=float, help="circle/figure8 radius in m")
    p.add_argument("--speed", type=float, help="path speed in m/s")
    p.add_argument("--height", type=float, help="path height in m")
    p.add_argument("--center", help="circle/figure8 center X,Y")
    p.add_argument("--position", help="hover point X,Y,Z")
    p.add_argument("--start", help="line start X,Y,Z")
    p.add_argument("--direction", help="line direction X,Y,Z")
    p.add_argument("--offset", help="initial position offset X,Y,Z")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("allocate", parents=[common, cfg],
                       help="split one wrench into balanced rotor forces")
    p.add_argument("--wrench", required=True,
                   help="collective thrust and body torques F,Mx,My,Mz")
    p.set_defaults(func=_cmd_allocate)

    p = sub.add_parser("magnets", parents=[common],
                       help="search docking magnet orientations layer by layer")
    p.add_argument("--layers", type=int, default=7, help="lattice depth to search")
    p.add_argument("--per-layer", type=int, default=6, dest="per_layer",
                   help="magnets per ring (even, default 6)")
    p.add_argument("--radius", type=float, default=0.02, help="ring radius in m")
    p.add_argument("--pitch", type=float, default=0.006, help="layer spacing in m")
    p.add_argument("--b-desired", type=float, dest="b_desired",
                   help="target mean field norm in T; omitted means survey all layers")
    p.set_defaults(func=_cmd_magnets)

    p = sub.add_parser("bench", parents=[common, cfg],
                       help="allocator latency against assembly size")
    p.add_argument("--units", default="1,2,4,9,16,25,36,50",
                   help="comma-separated unit counts (default 1..50)")
    p.add_argument("--samples", type=int, default=200, help="timed solves per size")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.func(args)
    except MarskitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(type(exc).__name__)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
