"""Assembly geometry: unit/rotor configuration, mass properties, rotor mixing.

Conventions used throughout the package:

- world/body axes are x forward, y left, z up; thrust acts along +z of the
  rotor plane,
- every unit carries exactly four rotors, numbered j = 1..4 with the quadrant
  layout (+x,+y), (-x,-y), (+x,-y), (-x,+y) and spin signs (-1, -1, +1, +1),
- torque columns follow the effectiveness convention
  [F; tau_x; tau_y; tau_z] = [1; -(p_y - c_y); (p_x - c_x); spin * c_z] * f
  where p is the rotor position and c the assembly centroid.  Roll/pitch rows
  are lever arms about the centroid; the yaw row is the drag-torque
  coefficient with the rotor's spin sign.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

# rotor planes must agree in height to this tolerance (m)
COPLANARITY_TOL = 1e-9

# spin pattern required of every unit, rotor index j = 1..4
SPIN_PATTERN = (-1, -1, 1, 1)

# quadrant sign layout (x, y) required of virtual rotors and of the default
# physical rotor template, rotor index j = 1..4
QUADRANT_SIGNS = ((1, 1), (-1, -1), (1, -1), (-1, 1))

DEFAULT_GRAVITY = 9.81

# Template unit values: 1.5 kg frame of 0.65 m side, rotors on the x layout a
# quarter side from the centre, 7 N max thrust per rotor, drag-to-thrust
# coefficient 0.06 m.
DEFAULT_UNIT_MASS = 1.5
DEFAULT_SIDE = 0.65
DEFAULT_F_MAX = 7.0
DEFAULT_C_Z = 0.06
DEFAULT_UNIT_INERTIA = (0.0347, 0.0459, 0.0977)


@dataclass(frozen=True)
class RotorSpec:
    """One rotor: mount offset in the unit frame, spin direction and force model."""

    offset: tuple[float, float, float]
    spin_sign: int
    f_min: float = 0.0
    f_max: float = DEFAULT_F_MAX
    c_z: float = DEFAULT_C_Z


@dataclass(frozen=True)
class UnitSpec:
    """One rigid quadrotor unit of the assembly."""

    mass: float
    position: tuple[float, float, float]
    rotors: tuple[RotorSpec, ...]
    inertia: tuple[tuple[float, ...], ...] = ()  # 3x3 about own centre; default template

    def inertia_matrix(self) -> np.ndarray:
        if not self.inertia:
            return np.diag(DEFAULT_UNIT_INERTIA).astype(float)
        return np.asarray(self.inertia, dtype=float)


@dataclass(frozen=True)
class PayloadSpec:
    """Rigidly attached point-mass payload."""

    mass: float
    position: tuple[float, float, float]


@dataclass(frozen=True)
class MarsConfig:
    """A docked assembly: units, optional payload, gravity."""

    units: tuple[UnitSpec, ...]
    payload: PayloadSpec | None = None
    gravity: float = DEFAULT_GRAVITY

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_rotors(self) -> int:
        return 4 * len(self.units)


@dataclass(frozen=True)
class RotorArrays:
    """Flat per-rotor arrays in unit-major order (unit 0 rotors 1..4, ...)."""

    position: np.ndarray  # (4n, 3) world positions
    offset: np.ndarray  # (4n, 3) offsets in the owning unit's frame
    spin: np.ndarray  # (4n,) +-1
    c_z: np.ndarray  # (4n,) drag torque coefficients, m
    f_min: np.ndarray  # (4n,) N
    f_max: np.ndarray  # (4n,) N
    unit_index: np.ndarray  # (4n,) owning unit


def default_unit(
    position: tuple[float, float, float] = (0.0, 0.0, 0.0),
    mass: float = DEFAULT_UNIT_MASS,
    side: float = DEFAULT_SIDE,
    f_min: float = 0.0,
    f_max: float = DEFAULT_F_MAX,
    c_z: float = DEFAULT_C_Z,
) -> UnitSpec:
    """Template unit: four rotors on the x layout at (+-side/4, +-side/4).

    Rotor order follows the quadrant convention: rotor 1 at (+side/4, +side/4),
    rotor 2 at (-side/4, -side/4), rotor 3 at (+side/4, -side/4), rotor 4 at
    (-side/4, +side/4).
    """
    arm = side / 4.0
    rotors = tuple(
        RotorSpec(
            offset=(sx * arm, sy * arm, 0.0),
            spin_sign=SPIN_PATTERN[j],
            f_min=f_min,
            f_max=f_max,
            c_z=c_z,
        )
        for j, (sx, sy) in enumerate(QUADRANT_SIGNS)
    )
    return UnitSpec(mass=mass, position=tuple(float(v) for v in position), rotors=rotors)


def build_grid_config(
    rows: int,
    cols: int,
    spacing: float = DEFAULT_SIDE,
    mass: float = DEFAULT_UNIT_MASS,
    payload: PayloadSpec | None = None,
    gravity: float = DEFAULT_GRAVITY,
    f_max: float = DEFAULT_F_MAX,
) -> MarsConfig:
    """Rectangular rows x cols assembly, centred so the equal-mass centroid is
    at the origin.  Columns advance along +x, rows along +y."""
    if rows < 1 or cols < 1:
        raise ValidationError(f"grid must be at least 1x1, got {rows}x{cols}")
    if spacing <= 0.0:
        raise ValidationError(f"grid spacing must be positive, got {spacing}")
    units = []
    for r in range(rows):
        for c in range(cols):
            x = (c - (cols - 1) / 2.0) * spacing
            y = (r - (rows - 1) / 2.0) * spacing
            units.append(default_unit(position=(x, y, 0.0), mass=mass, side=spacing, f_max=f_max))
    return validate(MarsConfig(units=tuple(units), payload=payload, gravity=gravity))


def assembly_from_positions(
    positions,
    spacing: float = DEFAULT_SIDE,
    mass: float = DEFAULT_UNIT_MASS,
    payload: PayloadSpec | None = None,
    gravity: float = DEFAULT_GRAVITY,
    f_max: float = DEFAULT_F_MAX,
) -> MarsConfig:
    """Assembly of template units at the given (x, y) or (x, y, z) positions.

    Convenience for irregular shapes (L, T, ...) that the grid builder cannot
    express.
    """
    units = []
    for p in positions:
        p = tuple(float(v) for v in p)
        if len(p) == 2:
            p = (p[0], p[1], 0.0)
        units.append(default_unit(position=p, mass=mass, side=spacing, f_max=f_max))
    return validate(MarsConfig(units=tuple(units), payload=payload, gravity=gravity))


def _parse_rotor(obj: dict, where: str) -> RotorSpec:
    try:
        offset = tuple(float(v) for v in obj["offset"])
        spin = int(obj["spin_sign"])
        f_min = float(obj.get("f_min", 0.0))
        f_max = float(obj["f_max"])
        c_z = float(obj["c_z"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad rotor entry in {where}: {exc!r}") from exc
    if len(offset) != 3:
        raise ParseError(f"rotor offset in {where} must have 3 components, got {len(offset)}")
    return RotorSpec(offset=offset, spin_sign=spin, f_min=f_min, f_max=f_max, c_z=c_z)


def _parse_unit(obj: dict, index: int) -> UnitSpec:
    where = f"units[{index}]"
    try:
        mass = float(obj["mass"])
        position = tuple(float(v) for v in obj["position"])
        rotor_objs = obj["rotors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad unit entry {where}: {exc!r}") from exc
    if len(position) != 3:
        raise ParseError(f"{where}.position must have 3 components")
    rotors = tuple(_parse_rotor(r, f"{where}.rotors[{j}]") for j, r in enumerate(rotor_objs))
    inertia: tuple = ()
    if "inertia" in obj:
        raw = obj["inertia"]
        try:
            arr = np.asarray(raw, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{where}.inertia is not numeric: {exc!r}") from exc
        if arr.shape == (3,):
            arr = np.diag(arr)
        if arr.shape != (3, 3):
            raise ParseError(f"{where}.inertia must be a 3-vector diagonal or 3x3 matrix")
        inertia = tuple(tuple(row) for row in arr)
    return UnitSpec(mass=mass, position=position, rotors=rotors, inertia=inertia)


def load_config(source) -> MarsConfig:
    """Load and validate an assembly document.

    ``source`` may be a path to a JSON file, a JSON string, or an
    already-parsed dict.  Raises ParseError for malformed documents and
    ValidationError for physically inconsistent ones.
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = None
        source = str(source)
        if source.lstrip().startswith("{"):
            text = source
        else:
            try:
                with open(source, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ParseError(f"cannot read config {source!r}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("config document must be a JSON object")
    if "units" not in doc or not isinstance(doc["units"], list) or not doc["units"]:
        raise ParseError("config must contain a non-empty 'units' list")
    units = tuple(_parse_unit(u, i) for i, u in enumerate(doc["units"]))
    payload = None
    if doc.get("payload") is not None:
        p = doc["payload"]
        try:
            payload = PayloadSpec(
                mass=float(p["mass"]), position=tuple(float(v) for v in p["position"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad payload entry: {exc!r}") from exc
        if len(payload.position) != 3:
            raise ParseError("payload.position must have 3 components")
    gravity = float(doc.get("gravity", DEFAULT_GRAVITY))
    return validate(MarsConfig(units=units, payload=payload, gravity=gravity))


def validate(config: MarsConfig) -> MarsConfig:
    """Check structural and physical invariants; returns the config unchanged."""
    if not config.units:
        raise ValidationError("assembly has no units")
    if config.gravity <= 0.0:
        raise ValidationError(f"gravity must be positive, got {config.gravity}")
    plane_z = None
    for i, unit in enumerate(config.units):
        if unit.mass <= 0.0:
            raise ValidationError(f"units[{i}].mass must be positive, got {unit.mass}")
        if len(unit.rotors) != 4:
            raise ValidationError(f"units[{i}] must have exactly 4 rotors, got {len(unit.rotors)}")
        inertia = unit.inertia_matrix()
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ValidationError(f"units[{i}].inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(inertia) <= 0.0):
            raise ValidationError(f"units[{i}].inertia must be positive definite")
        for j, rotor in enumerate(unit.rotors):
            if rotor.spin_sign != SPIN_PATTERN[j]:
                raise ValidationError(
                    f"units[{i}].rotors[{j}] spin_sign must be {SPIN_PATTERN[j]:+d} "
                    f"(pattern -,-,+,+), got {rotor.spin_sign:+d}"
                )
            if not 0.0 <= rotor.f_min < rotor.f_max:
                raise ValidationError(
                    f"units[{i}].rotors[{j}] needs 0 <= f_min < f_max, "
                    f"got [{rotor.f_min}, {rotor.f_max}]"
                )
            if rotor.c_z <= 0.0:
                raise ValidationError(f"units[{i}].rotors[{j}].c_z must be positive")
            z = unit.position[2] + rotor.offset[2]
            if plane_z is None:
                plane_z = z
            elif abs(z - plane_z) > COPLANARITY_TOL:
                raise ValidationError(
                    f"rotor planes are not coplanar: units[{i}].rotors[{j}] sits at "
                    f"z={z!r} but the first rotor at z={plane_z!r} "
                    f"(tolerance {COPLANARITY_TOL})"
                )
    if config.payload is not None and config.payload.mass <= 0.0:
        raise ValidationError(f"payload.mass must be positive, got {config.payload.mass}")
    return config


def config_to_dict(config: MarsConfig) -> dict:
    """Inverse of load_config, for round-tripping configs to JSON."""
    doc: dict = {
        "units": [
            {
                "mass": u.mass,
                "position": list(u.position),
                "inertia": [list(row) for row in u.inertia_matrix()],
                "rotors": [
                    {
                        "offset": list(r.offset),
                        "spin_sign": r.spin_sign,
                        "f_min": r.f_min,
                        "f_max": r.f_max,
                        "c_z": r.c_z,
                    }
                    for r in u.rotors
                ],
            }
            for u in config.units
        ],
        "gravity": config.gravity,
    }
    if config.payload is not None:
        doc["payload"] = {"mass": config.payload.mass, "position": list(config.payload.position)}
    return doc


def rotor_arrays(config: MarsConfig) -> RotorArrays:
    """Flatten the assembly's rotors into unit-major numpy arrays."""
    pos, off, spin, c_z, f_min, f_max, owner = [], [], [], [], [], [], []
    for i, unit in enumerate(config.units):
        base = np.asarray(unit.position, dtype=float)
        for rotor in unit.rotors:
            o = np.asarray(rotor.offset, dtype=float)
            off.append(o)
            pos.append(base + o)
            spin.append(rotor.spin_sign)
            c_z.append(rotor.c_z)
            f_min.append(rotor.f_min)
            f_max.append(rotor.f_max)
            owner.append(i)
    return RotorArrays(
        position=np.asarray(pos),
        offset=np.asarray(off),
        spin=np.asarray(spin, dtype=float),
        c_z=np.asarray(c_z),
        f_min=np.asarray(f_min),
        f_max=np.asarray(f_max),
        unit_index=np.asarray(owner, dtype=int),
    )


def total_mass(config: MarsConfig) -> float:
    """Assembly mass including any payload."""
    m = sum(u.mass for u in config.units)
    if config.payload is not None:
        m += config.payload.mass
    return float(m)


def centroid(config: MarsConfig) -> np.ndarray:
    """Mass-weighted mean of unit centres and payload position."""
    m_total = total_mass(config)
    acc = np.zeros(3)
    for u in config.units:
        acc += u.mass * np.asarray(u.position, dtype=float)
    if config.payload is not None:
        acc += config.payload.mass * np.asarray(config.payload.position, dtype=float)
    return acc / m_total


def composite_inertia(config: MarsConfig, about: np.ndarray | None = None) -> np.ndarray:
    """Inertia tensor of the rigid assembly about ``about`` (default: centroid).

    Each unit contributes its own tensor plus the parallel-axis term
    m * (|d|^2 I - d d^T); the payload is a point mass.
    """
    if about is None:
        about = centroid(config)
    about = np.asarray(about, dtype=float)
    total = np.zeros((3, 3))
    for u in config.units:
        d = np.asarray(u.position, dtype=float) - about
        total += u.inertia_matrix() + u.mass * (float(d @ d) * np.eye(3) - np.outer(d, d))
    if config.payload is not None:
        d = np.asarray(config.payload.position, dtype=float) - about
        total += config.payload.mass * (float(d @ d) * np.eye(3) - np.outer(d, d))
    return total


def mars_effectiveness(config: MarsConfig) -> np.ndarray:
    """Effectiveness matrix G mapping rotor forces to the assembly wrench.

    Columns are rotors in unit-major order; rows are
    [F; tau_x; tau_y; tau_z] with lever arms measured about the assembly
    centroid and the yaw row spin_sign * c_z.
    """
    rot = rotor_arrays(config)
    c = centroid(config)
    g = np.empty((4, rot.position.shape[0]))
    g[0] = 1.0
    g[1] = -(rot.position[:, 1] - c[1])
    g[2] = rot.position[:, 0] - c[0]
    g[3] = rot.spin * rot.c_z
    return g
