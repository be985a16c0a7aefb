"""Closed-loop runs at 500 Hz and their on-disk delimited record.

run_simulation wires the full stack together: abstract the assembly once,
solve the tracking controller each step, split the commanded wrench into
rotor forces, rebuild the wrench those forces actually deliver, and integrate
the plant with it.  The rebuilt wrench is what the log stores, so replaying
the F/Mx/My/Mz columns open loop through the integrator reproduces the state
columns.

The CSV writer serializes every float with repr, which round-trips exactly in
Python 3; two runs with the same config, scenario, and seed therefore produce
byte-identical files, and metrics recomputed from a parsed file match the
in-memory report bit for bit.  Wall-clock solve-time percentiles are the one
exception: they live only in the in-memory report, never in the file.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .allocation import WrenchAllocator, per_unit_commands, recompose_wrench
from .apc import (
    ApcSettings,
    ApcWeights,
    ReferenceWindow,
    WrenchBounds,
    actuator_bounds,
    generate_reference,
    solve_apc,
)
from .dynamics import DEFAULT_DT, BodyParams, RigidState, WrenchCommand, step
from .equal_arm import equal_arm_abstraction
from .errors import DegenerateConfig, MarskitError, ParseError, ValidationError
from .geometry import MarsConfig, config_to_dict
from .polytope import unequal_arm_abstraction

CSV_VERSION = "marskit-run v1"
SCENARIO_KINDS = ("hover", "circle", "line", "figure8")
MODES = ("equal", "unequal")

# Columns before the per-rotor force block plus the two diagnostics after it.
_FIXED_COLS = 20


def _plain(value):
    """Coerce a scenario parameter to a JSON-stable float or list of floats."""
    if isinstance(value, (bool, str)):
        raise ValidationError(f"scenario parameters must be numeric, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"scenario parameter {value!r} is not numeric") from exc
    return arr.tolist()


@dataclass(frozen=True)
class Scenario:
    """A named trajectory plus its parameters.

    ``params`` accepts the keys the reference generator documents for the
    kind (radius, speed, height, center, position, start, direction) and one
    simulation-only extra: ``offset``, a 3-vector added to the initial
    position so regulation transients can be provoked without editing the
    trajectory itself.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValidationError(
                f"unknown scenario kind {self.kind!r}; choose from {SCENARIO_KINDS}"
            )
        raw = dict(self.params or {})
        for key in raw:
            if not isinstance(key, str):
                raise ValidationError(f"scenario parameter names must be strings, got {key!r}")
        object.__setattr__(self, "params", {k: _plain(v) for k, v in raw.items()})

    @property
    def label(self) -> str:
        """Stable one-line identifier, e.g. ``circle {"radius": 1.5}``."""
        if not self.params:
            return self.kind
        return f"{self.kind} {json.dumps(self.params, sort_keys=True)}"

    def reference_params(self) -> dict:
        """Parameters for the reference generator, without simulation extras."""
        p = dict(self.params)
        p.pop("offset", None)
        return p

    def initial_offset(self) -> np.ndarray:
        off = np.asarray(self.params.get("offset", (0.0, 0.0, 0.0)), dtype=float)
        if off.shape != (3,):
            raise ValidationError("scenario offset must be a 3-vector")
        return off


@dataclass(frozen=True)
class RunReport:
    """Everything a closed-loop run produced.

    rows is an (n, 20 + 4n_units) float matrix in the column order given by
    ``columns``; on a clean run n equals round(duration / dt) + 1 and the
    terminal row repeats the last applied wrench and rotor forces.  When a
    step failed, ``error`` holds the condition, ``error_step`` the zero-based
    step index, and rows keeps everything logged before the failure.
    """

    scenario: Scenario
    mode: str
    config_digest: str
    seed: int
    duration: float
    dt: float
    columns: tuple[str, ...]
    rows: np.ndarray
    metrics: dict
    controller: dict
    error: str | None = None
    error_step: int | None = None


def config_digest(config: MarsConfig) -> str:
    """sha256 hex digest of the canonical JSON form of the assembly."""
    doc = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()


def run_columns(n_rotors: int) -> tuple[str, ...]:
    names = [
        "t",
        "px", "py", "pz",
        "qw", "qx", "qy", "qz",
        "vx", "vy", "vz",
        "wx", "wy", "wz",
        "F", "Mx", "My", "Mz",
    ]
    names += [f"f_{i + 1}" for i in range(n_rotors)]
    names += ["alloc_feasible", "alloc_iters"]
    return tuple(names)


def _quat_err_angle_deg(q: np.ndarray, q_ref: np.ndarray) -> np.ndarray:
    """Rowwise angle of q_ref^-1 * q in degrees, in [0, 180]."""
    # conjugate of the reference, then Hamilton product
    w1, x1, y1, z1 = q_ref[:, 0], -q_ref[:, 1], -q_ref[:, 2], -q_ref[:, 3]
    w2, x2, y2, z2 = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rw = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2
    rx = w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2
    ry = w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2
    rz = w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2
    vec = np.sqrt(rx * rx + ry * ry + rz * rz)
    return np.degrees(2.0 * np.arctan2(vec, np.abs(rw)))


def compute_metrics(rows: np.ndarray, scenario: Scenario, dt: float = DEFAULT_DT) -> dict:
    """Summary tracking metrics for logged rows.

    The reference is regenerated from the scenario on the same time grid the
    run used, so calling this on rows parsed back from a record file returns
    the report's stored values bit for bit.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < _FIXED_COLS:
        raise ValidationError("rows must be a nonempty row matrix from a run")
    ref = generate_reference(
        scenario.kind,
        scenario.reference_params(),
        0.0,
        ApcSettings(horizon=max(rows.shape[0] - 1, 2), dt=dt),
    )
    m = ref.matrix[: rows.shape[0]]
    errs = np.linalg.norm(rows[:, 1:4] - m[:, 0:3], axis=1)
    ang = _quat_err_angle_deg(rows[:, 4:8], m[:, 3:7])
    return {
        "mean_abs_position_error_m": float(np.mean(errs)),
        "max_abs_position_error_m": float(np.max(errs)),
        "mean_abs_attitude_error_deg": float(np.mean(ang)),
    }


def _physical_bounds(b: WrenchBounds) -> WrenchBounds:
    """Map allocator-frame wrench limits to the integrator's torque signs.

    The effectiveness rows measure moments as (-(y - c_y), x - c_x), the
    mirror of the body x/y torques the plant integrates, so the roll and
    pitch intervals swap ends and negate.
    """
    lo = np.array([b.lo[0], -b.hi[1], -b.hi[2], b.lo[3]])
    hi = np.array([b.hi[0], -b.lo[1], -b.lo[2], b.hi[3]])
    return WrenchBounds(lo=lo, hi=hi)


def run_simulation(
    config: MarsConfig,
    mode: str = "equal",
    scenario: Scenario | str = "hover",
    duration: float = 10.0,
    seed: int = 0,
    *,
    weights: ApcWeights | None = None,
    settings: ApcSettings | None = None,
) -> RunReport:
    """Fly the assembly closed loop at 500 Hz and collect a RunReport.

    mode picks how the assembly is collapsed for the controller: "equal"
    fits the torque-balanced virtual quadrotor, "unequal" the polytope fit.
    The allocator always works against the physical effectiveness matrix.

    Each step re-solves the tracking controller against a reference window
    that slides by one simulation step (the prediction grid is strided over
    the fine 500 Hz grid), warm-started with the previous plan.  Controller
    and allocator failures are not raised; they land in the report with the
    failing step index and whatever rows were logged before the failure.

    The loop itself is deterministic.  ``seed`` only tags the record so
    downstream tooling can group repeats.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    if isinstance(scenario, str):
        scenario = Scenario(scenario)
    duration = float(duration)
    if not np.isfinite(duration) or duration <= 0.0:
        raise ValidationError(f"duration must be positive, got {duration}")
    weights = weights if weights is not None else ApcWeights()
    settings = (settings if settings is not None else ApcSettings()).validated()

    n_steps = int(round(duration / DEFAULT_DT))
    if n_steps < 1:
        raise ValidationError("duration must cover at least one simulation step")
    stride = int(round(settings.dt / DEFAULT_DT))
    if stride < 1 or abs(stride * DEFAULT_DT - settings.dt) > 1e-12:
        raise ValidationError(
            f"prediction step must be a whole multiple of the {DEFAULT_DT} s simulation step"
        )
    win = settings.horizon * stride + 1

    if mode == "equal":
        absn = equal_arm_abstraction(config)
    else:
        absn = unequal_arm_abstraction(config)
        if np.linalg.matrix_rank(absn.g_v, tol=1e-10) < 4:
            raise DegenerateConfig(
                "the polytope fit has no authority on some torque axis (unit "
                "centres are collinear); use equal mode for this assembly"
            )
    body = BodyParams(mass=absn.mass, inertia=absn.inertia, gravity=config.gravity)
    bounds = _physical_bounds(actuator_bounds(absn.g_v, absn.f_sum_min, absn.f_sum_max))
    allocator = WrenchAllocator.from_config(config)
    controller = {
        "weights": {
            k: list(v) if isinstance(v, tuple) else v
            for k, v in dataclasses.asdict(weights).items()
        },
        "settings": dataclasses.asdict(settings),
        "wrench_lo": [float(v) for v in bounds.lo],
        "wrench_hi": [float(v) for v in bounds.hi],
        "mass": float(absn.mass),
        "inertia_diag": [float(absn.inertia[i, i]) for i in range(3)],
    }

    fine = generate_reference(
        scenario.kind,
        scenario.reference_params(),
        0.0,
        ApcSettings(horizon=n_steps + win - 1, dt=DEFAULT_DT),
    )
    fmat, ftimes = fine.matrix, fine.timestamps

    n_rotors = config.n_rotors
    n_cols = _FIXED_COLS + n_rotors
    rows = np.empty((n_steps + 1, n_cols))
    solve_ms = np.empty(n_steps)
    state = RigidState(
        position=fmat[0, 0:3] + scenario.initial_offset(),
        quaternion=np.array([1.0, 0.0, 0.0, 0.0]),
        velocity=fmat[0, 7:10].copy(),
        angular_velocity=np.zeros(3),
    )
    plan = None
    error = None
    error_step = None
    logged = 0
    for j in range(n_steps):
        window = ReferenceWindow(
            matrix=fmat[j : j + win : stride], timestamps=ftimes[j : j + win : stride]
        )
        try:
            tic = time.perf_counter()
            cmd, plan, diag = solve_apc(
                state,
                window,
                body,
                weights=weights,
                bounds=bounds,
                settings=settings,
                warm_start=plan,
            )
            u_alloc = np.array([cmd.thrust, -cmd.torque[0], -cmd.torque[1], cmd.torque[2]])
            forces, adiag = allocator.allocate(u_alloc)
            rec = recompose_wrench(per_unit_commands(forces, config), config)
            solve_ms[j] = 1e3 * (time.perf_counter() - tic)
            phys = np.array([rec[0], -rec[1], -rec[2], rec[3]])
            rows[j, 0] = ftimes[j]
            rows[j, 1:14] = state.as_vector()
            rows[j, 14:18] = phys
            rows[j, 18 : 18 + n_rotors] = forces
            rows[j, 18 + n_rotors] = 1.0 if adiag.feasible else 0.0
            rows[j, 19 + n_rotors] = float(adiag.iterations)
            logged = j + 1
            state = step(state, WrenchCommand(thrust=phys[0], torque=phys[1:4]), body, dt=DEFAULT_DT)
        except MarskitError as exc:
            error = f"{type(exc).__name__}: {' '.join(str(exc).split())}"
            error_step = j
            break
    else:
        rows[n_steps, 0] = ftimes[n_steps]
        rows[n_steps, 1:14] = state.as_vector()
        rows[n_steps, 14:] = rows[n_steps - 1, 14:]
        logged = n_steps + 1
    rows = rows[:logged]

    metrics = compute_metrics(rows, scenario) if logged else {}
    n_solves = min(logged, n_steps)
    if n_solves:
        p50, p90, p99 = np.percentile(solve_ms[:n_solves], [50.0, 90.0, 99.0])
        metrics["solve_ms_p50"] = float(p50)
        metrics["solve_ms_p90"] = float(p90)
        metrics["solve_ms_p99"] = float(p99)

    return RunReport(
        scenario=scenario,
        mode=mode,
        config_digest=config_digest(config),
        seed=int(seed),
        duration=duration,
        dt=DEFAULT_DT,
        columns=run_columns(n_rotors),
        rows=rows,
        metrics=metrics,
        controller=controller,
        error=error,
        error_step=error_step,
    )


def replay_states(rows: np.ndarray, body: BodyParams, dt: float = DEFAULT_DT) -> np.ndarray:
    """Integrate the logged wrench columns open loop from the first row's state.

    Returns an (n, 13) state matrix aligned with the log; row k should match
    columns 1:14 of the log's row k up to integrator reproduction error.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < _FIXED_COLS:
        raise ValidationError("rows must be a nonempty row matrix from a run")
    out = np.empty((rows.shape[0], 13))
    out[0] = rows[0, 1:14]
    state = RigidState.from_vector(out[0])
    for k in range(rows.shape[0] - 1):
        wrench = WrenchCommand(thrust=float(rows[k, 14]), torque=rows[k, 15:18].copy())
        state = step(state, wrench, body, dt=dt)
        out[k + 1] = state.as_vector()
    return out


def write_run_csv(report: RunReport, path) -> None:
    """Write a run record; identical runs produce identical bytes.

    Header comments carry the scenario, mode, config digest, seed, horizon,
    and the controller parameters that produced the rows.  Summary metrics
    are not stored; read_run_csv recomputes the deterministic ones.
    """
    n_rotors = len(report.columns) - _FIXED_COLS
    int_cols = (18 + n_rotors, 19 + n_rotors)
    lines = [
        f"# {CSV_VERSION}",
        f"# scenario: {report.scenario.label}",
        f"# mode: {report.mode}",
        f"# config: sha256:{report.config_digest}",
        f"# seed: {report.seed}",
        f"# duration: {report.duration!r}",
        f"# dt: {report.dt!r}",
        f"# controller: {json.dumps(report.controller, sort_keys=True)}",
        "# terminal row repeats the last applied wrench and rotor forces",
    ]
    if report.error is not None:
        lines.append(f"# error: step {report.error_step} {report.error}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write(",".join(report.columns) + "\n")
        for row in report.rows:
            cells = [
                str(int(row[i])) if i in int_cols else repr(float(row[i]))
                for i in range(row.size)
            ]
            fh.write(",".join(cells) + "\n")


def read_run_csv(path) -> RunReport:
    """Parse a run record back into a RunReport.

    Tracking metrics are recomputed from the parsed rows; solve-time
    percentiles are wall-clock measurements and do not survive the trip.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# {CSV_VERSION}":
        raise ParseError(f"{path}: not a {CSV_VERSION} record")
    meta: dict[str, str] = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, sep, val = lines[i][1:].strip().partition(": ")
        if sep:
            meta[key] = val
        i += 1
    if i >= len(lines):
        raise ParseError(f"{path}: record has no column header")
    columns = tuple(lines[i].split(","))
    if len(columns) < _FIXED_COLS + 1 or columns[0] != "t":
        raise ParseError(f"{path}: unexpected column header {columns[:3]}...")
    try:
        data = [
            [float(c) for c in ln.split(",")] for ln in lines[i + 1 :] if ln
        ]
        rows = (
            np.array(data, dtype=float) if data else np.empty((0, len(columns)))
        )
        kind, _, rest = meta["scenario"].partition(" ")
        scenario = Scenario(kind, json.loads(rest) if rest else {})
        mode = meta["mode"]
        digest = meta["config"].removeprefix("sha256:")
        seed = int(meta["seed"])
        duration = float(meta["duration"])
        dt = float(meta["dt"])
        controller = json.loads(meta["controller"])
        error = None
        error_step = None
        if "error" in meta:
            _, step_str, message = meta["error"].split(" ", 2)
            error_step = int(step_str)
            error = message
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: malformed run record: {exc!r}") from exc
    if rows.size and rows.shape[1] != len(columns):
        raise ParseError(f"{path}: row width does not match the column header")
    metrics = compute_metrics(rows, scenario, dt) if rows.shape[0] else {}
    return RunReport(
        scenario=scenario,
        mode=mode,
        config_digest=digest,
        seed=seed,
        duration=duration,
        dt=dt,
        columns=columns,
        rows=rows,
        metrics=metrics,
        controller=controller,
        error=error,
        error_step=error_step,
    )
