"""Figure rendering for run records and search results.

Every renderer writes PNG files next to the delimited output and returns the
paths it wrote.  The Agg backend is forced at import so the module works in
headless environments; import it lazily if matplotlib startup cost matters.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .apc import ApcSettings, generate_reference
from .dynamics import DEFAULT_DT
from .geometry import MarsConfig, centroid, rotor_arrays
from .simulate import _FIXED_COLS, RunReport

DPI = 130


def _save(fig, out_dir, name: str) -> str:
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def _reference_positions(report: RunReport) -> np.ndarray:
    n = report.rows.shape[0]
    ref = generate_reference(
        report.scenario.kind,
        report.scenario.reference_params(),
        0.0,
        ApcSettings(horizon=max(n - 1, 2), dt=report.dt),
    )
    return ref.matrix[:n, 0:3]


def render_run(report: RunReport, out_dir: str, stem: str = "run") -> list[str]:
    """Trajectory, tracking error, and input figures for one run record."""
    if report.rows.shape[0] < 1:
        return []
    rows = report.rows
    t = rows[:, 0]
    pos = rows[:, 1:4]
    ref = _reference_positions(report)
    n_rotors = len(report.columns) - _FIXED_COLS
    paths = []

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.0, 4.2))
    ax1.plot(ref[:, 0], ref[:, 1], "k--", lw=1.0, label="reference")
    ax1.plot(pos[:, 0], pos[:, 1], lw=1.2, label="flown")
    ax1.plot(pos[0, 0], pos[0, 1], "o", ms=5, color="tab:green", label="start")
    ax1.set_xlabel("x [m]")
    ax1.set_ylabel("y [m]")
    ax1.set_title("top view")
    ax1.set_aspect("equal", adjustable="datalim")
    ax1.legend(loc="best", fontsize=8)
    ax2.plot(t, ref[:, 2], "k--", lw=1.0)
    ax2.plot(t, pos[:, 2], lw=1.2)
    ax2.set_xlabel("t [s]")
    ax2.set_ylabel("z [m]")
    ax2.set_title("altitude")
    fig.suptitle(f"{report.scenario.label} ({report.mode})", fontsize=10)
    paths.append(_save(fig, out_dir, f"{stem}_trajectory.png"))

    err = np.linalg.norm(pos - ref, axis=1)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8.0, 5.2), sharex=True)
    ax1.plot(t, 1e3 * err, lw=1.0)
    ax1.set_ylabel("position error [mm]")
    mean_mm = 1e3 * report.metrics.get("mean_abs_position_error_m", float(np.mean(err)))
    ax1.axhline(mean_mm, color="tab:red", lw=0.8, ls=":", label=f"mean {mean_mm:.2f} mm")
    ax1.legend(loc="best", fontsize=8)
    qw = np.clip(np.abs(rows[:, 4]), -1.0, 1.0)
    ax2.plot(t, np.degrees(2.0 * np.arccos(qw)), lw=1.0)
    ax2.set_ylabel("attitude error [deg]")
    ax2.set_xlabel("t [s]")
    paths.append(_save(fig, out_dir, f"{stem}_errors.png"))

    fig, axes = plt.subplots(3, 1, figsize=(8.0, 7.0), sharex=True)
    axes[0].plot(t, rows[:, 14], lw=1.0)
    axes[0].set_ylabel("thrust [N]")
    for k, name in enumerate(("Mx", "My", "Mz")):
        axes[1].plot(t, rows[:, 15 + k], lw=0.9, label=name)
    axes[1].set_ylabel("torque [N m]")
    axes[1].legend(loc="best", fontsize=8, ncol=3)
    for k in range(n_rotors):
        axes[2].plot(t, rows[:, 18 + k], lw=0.7, alpha=0.8)
    axes[2].set_ylabel("rotor forces [N]")
    axes[2].set_xlabel("t [s]")
    bad = rows[:, 18 + n_rotors] < 0.5
    if np.any(bad):
        axes[0].plot(t[bad], rows[bad, 14], ".", ms=2, color="tab:red", label="scaled")
        axes[0].legend(loc="best", fontsize=8)
    paths.append(_save(fig, out_dir, f"{stem}_inputs.png"))
    return paths


def render_abstract(config: MarsConfig, absn, out_dir: str, stem: str = "abstract") -> list[str]:
    """Top view of the physical rotor layout and the fitted virtual rotors."""
    rot = rotor_arrays(config)
    c = centroid(config)
    fig, ax = plt.subplots(figsize=(5.6, 5.6))
    ccw = rot.spin > 0
    ax.scatter(rot.position[ccw, 0], rot.position[ccw, 1], s=70, facecolors="none",
               edgecolors="tab:blue", label="rotor (ccw)")
    ax.scatter(rot.position[~ccw, 0], rot.position[~ccw, 1], s=70, facecolors="none",
               edgecolors="tab:orange", label="rotor (cw)")
    for unit in config.units:
        ax.plot(unit.position[0], unit.position[1], "s", ms=4, color="0.6")
    vr = absn.virtual_rotors
    ax.scatter(vr[:, 0], vr[:, 1], s=110, marker="*", color="k", label="virtual rotor", zorder=5)
    for k in range(4):
        ax.plot([c[0], vr[k, 0]], [c[1], vr[k, 1]], "-", lw=0.7, color="0.4")
    ax.plot(c[0], c[1], "+", ms=10, color="tab:red")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"mass {absn.mass:.2f} kg, thrust range "
                 f"[{absn.f_sum_min:.1f}, {absn.f_sum_max:.1f}] N", fontsize=9)
    ax.legend(loc="best", fontsize=8)
    return [_save(fig, out_dir, f"{stem}.png")]


def render_magnets(arrangement, history: np.ndarray, out_dir: str, stem: str = "magnets",
                   baseline: float | None = None, target: float | None = None) -> list[str]:
    """Objective history per layer count plus a 3D view of the found array."""
    paths = []
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    layer_counts = np.arange(1, history.size + 1)
    ax.plot(layer_counts, history, "o-", lw=1.2)
    if baseline is not None:
        ax.axhline(baseline, color="0.5", lw=0.9, ls="--", label="uniform baseline")
    if target is not None and np.isfinite(target):
        ax.axhline(target, color="tab:red", lw=0.9, ls=":", label="target")
    ax.set_xlabel("layers")
    ax.set_ylabel("mean contact-ring field norm [T]")
    if baseline is not None or (target is not None and np.isfinite(target)):
        ax.legend(loc="best", fontsize=8)
    ax.set_xticks(layer_counts)
    paths.append(_save(fig, out_dir, f"{stem}_history.png"))

    fig = plt.figure(figsize=(6.0, 5.4))
    ax = fig.add_subplot(projection="3d")
    pos = arrangement.positions()
    mom = arrangement.moments()
    scale = 0.35 * float(np.max(np.ptp(pos, axis=0)) or 1.0) / max(
        float(np.max(np.linalg.norm(mom, axis=1))), 1e-12
    )
    ax.quiver(pos[:, 0], pos[:, 1], pos[:, 2],
              scale * mom[:, 0], scale * mom[:, 1], scale * mom[:, 2],
              color="tab:blue", lw=1.0)
    ax.scatter(pos[:, 0], pos[:, 1], pos[:, 2], s=12, color="k")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("z [m]")
    ax.set_title(f"{arrangement.layers} layers, {len(arrangement.magnets)} magnets", fontsize=9)
    paths.append(_save(fig, out_dir, f"{stem}_arrangement.png"))
    return paths


def render_bench(table: np.ndarray, out_dir: str, stem: str = "bench") -> list[str]:
    """Latency against assembly size; table columns are (n_units, n_rotors, median_ms, p90_ms)."""
    table = np.asarray(table, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.loglog(table[:, 0], table[:, 2], "o-", lw=1.2, label="median")
    ax.loglog(table[:, 0], table[:, 3], "s--", lw=0.9, label="p90")
    ax.set_xlabel("units")
    ax.set_ylabel("warm allocate [ms]")
    ax.grid(True, which="both", lw=0.3, alpha=0.5)
    ax.legend(loc="best", fontsize=8)
    return [_save(fig, out_dir, f"{stem}.png")]
