"""Dipole-model field evaluation and layer-wise docking-magnet arrangement search.

The docking interface carries rings of identical cube magnets recessed into
the contact cylinder, so each moment points along one of the six signed
lattice axes.  Every ring (layer) is split into two equal groups holding
exactly opposite moments; the free choice per layer is therefore a single
signed axis.

The arrangement objective averages, over a set of observation points just
outside the contact surface, the sum of the individual dipole field norms
(not the norm of the superposed field, which is reported separately).  Since
``||B||`` is even in the moment, the objective decomposes into independent
per-layer sums, which is what lets the exhaustive path below scan layers one
at a time instead of walking all 6^L joint assignments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoincidentPoint, TargetUnreachable, ValidationError

MU0_OVER_4PI = 1e-7  # T m^3 / (A m^2)
DEFAULT_MOMENT = 1.0  # A m^2; the objective scales linearly, only geometry matters
OBS_SAMPLES_PER_LAYER = 32
OBS_CLEARANCE = 1e-3  # m, observation ring offset outside the contact surface
EXHAUSTIVE_LAYER_LIMIT = 7  # 6^L joint assignments stay enumerable up to here
HILL_CLIMB_RESTARTS = 16
COINCIDENT_TOL = 1e-12

# signed lattice axes in fixed order; ties in the search resolve to the
# earliest entry, so the positive variant of an axis wins its mirror
AXIS_CHOICES = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)


@dataclass(frozen=True)
class Magnet:
    """One cube magnet: centre position and axis-aligned moment."""

    position: np.ndarray  # (3,) m
    moment: np.ndarray  # (3,) A m^2, exactly one nonzero component

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float)
        moment = np.asarray(self.moment, dtype=float)
        if position.shape != (3,) or moment.shape != (3,):
            raise ValidationError("magnet position and moment must be 3-vectors")
        if not (np.all(np.isfinite(position)) and np.all(np.isfinite(moment))):
            raise ValidationError("magnet position and moment must be finite")
        if np.count_nonzero(moment) != 1:
            raise ValidationError(
                f"moment must point along exactly one lattice axis, got {moment}"
            )
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "moment", moment)

    @property
    def magnitude(self) -> float:
        return float(np.abs(self.moment).max())


@dataclass(frozen=True)
class MagnetArrangement:
    """A full docking array: magnets plus the per-layer two-group structure.

    ``groups[l]`` holds the magnet indices of the two halves of layer ``l``;
    the halves are equal in number and carry exactly opposite moments.
    """

    magnets: tuple[Magnet, ...]
    layers: int
    groups: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]

    def __post_init__(self):
        if self.layers < 1 or len(self.groups) != self.layers:
            raise ValidationError("need one group pair per layer")
        seen: set[int] = set()
        magnitude = self.magnets[0].magnitude if self.magnets else 0.0
        for m in self.magnets:
            if abs(m.magnitude - magnitude) > 1e-15 * max(1.0, magnitude):
                raise ValidationError("all magnets must share one moment magnitude")
        for first, second in self.groups:
            if len(first) != len(second) or not first:
                raise ValidationError("layer groups must be nonempty and equal in size")
            for idx in (*first, *second):
                if idx in seen or not 0 <= idx < len(self.magnets):
                    raise ValidationError("groups must partition the magnet list")
                seen.add(idx)
            lead = self.magnets[first[0]].moment
            for idx in first:
                if not np.array_equal(self.magnets[idx].moment, lead):
                    raise ValidationError("first group moments must all match")
            for idx in second:
                if not np.array_equal(self.magnets[idx].moment, -lead):
                    raise ValidationError("second group moments must oppose the first")
        if len(seen) != len(self.magnets):
            raise ValidationError("groups must cover every magnet")

    def positions(self) -> np.ndarray:
        return np.array([m.position for m in self.magnets])

    def moments(self) -> np.ndarray:
        return np.array([m.moment for m in self.magnets])


@dataclass(frozen=True)
class ObservationSet:
    """Field sampling points near the contact surface."""

    points: np.ndarray  # (k, 3) m

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
            raise ValidationError("observation set must be a nonempty (k, 3) array")
        object.__setattr__(self, "points", points)


def dipole_field(c, d, r) -> np.ndarray:
    """Magnetic field of a point dipole with moment ``d`` at ``c``, seen at ``r``."""
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    rel = np.asarray(r, dtype=float) - c
    dist = float(np.linalg.norm(rel))
    if dist < COINCIDENT_TOL:
        raise CoincidentPoint(f"observation point {r} coincides with magnet at {c}")
    return MU0_OVER_4PI * (3.0 * rel * (d @ rel) / dist**5 - d / dist**3)


def _field_norms(positions: np.ndarray, moments: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Per-magnet, per-point dipole field norms, (n_magnets, n_points)."""
    rel = points[None, :, :] - positions[:, None, :]
    dist = np.linalg.norm(rel, axis=2)
    if np.any(dist < COINCIDENT_TOL):
        raise CoincidentPoint("an observation point coincides with a magnet position")
    proj = np.einsum("ijk,ik->ij", rel, moments)
    field = 3.0 * rel * (proj / dist**5)[:, :, None] - moments[:, None, :] / dist[:, :, None] ** 3
    return MU0_OVER_4PI * np.linalg.norm(field, axis=2)


def _magnet_arrays(magnets) -> tuple[np.ndarray, np.ndarray]:
    seq = magnets.magnets if isinstance(magnets, MagnetArrangement) else tuple(magnets)
    positions = np.array([m.position for m in seq])
    moments = np.array([m.moment for m in seq])
    return positions, moments


def field_objective(magnets, observations: ObservationSet) -> float:
    """Mean over observation points of the summed per-magnet field norms.

    Accepts a MagnetArrangement or any bare sequence of magnets (the uniform
    baseline has no two-group structure).
    """
    positions, moments = _magnet_arrays(magnets)
    norms = _field_norms(positions, moments, observations.points)
    return float(norms.sum() / observations.points.shape[0])


def superposed_field_norm(magnets, observations: ObservationSet) -> float:
    """Mean norm of the vector-summed field; secondary reporting metric only.

    The arrangement objective sums per-magnet norms instead, so opposite
    moments do not cancel there; this metric is where they would.
    """
    positions, moments = _magnet_arrays(magnets)
    points = observations.points
    rel = points[None, :, :] - positions[:, None, :]
    dist = np.linalg.norm(rel, axis=2)
    if np.any(dist < COINCIDENT_TOL):
        raise CoincidentPoint("an observation point coincides with a magnet position")
    proj = np.einsum("ijk,ik->ij", rel, moments)
    field = 3.0 * rel * (proj / dist**5)[:, :, None] - moments[:, None, :] / dist[:, :, None] ** 3
    total = MU0_OVER_4PI * field.sum(axis=0)
    return float(np.linalg.norm(total, axis=1).mean())


def docking_lattice(layers: int, magnets_per_layer: int, radius: float, pitch: float) -> np.ndarray:
    """Magnet slot positions on the docking cylinder, (layers, per_layer, 3).

    Each layer is a ring of equally spaced slots at height ``l * pitch``;
    the per-layer count must be even so the two opposite groups can split it.
    """
    if layers < 1:
        raise ValidationError("need at least one layer")
    if magnets_per_layer < 2 or magnets_per_layer % 2 != 0:
        raise ValidationError("magnets per layer must be even and at least 2")
    if radius <= 0.0 or pitch <= 0.0:
        raise ValidationError("radius and pitch must be positive")
    angles = 2.0 * np.pi * np.arange(magnets_per_layer) / magnets_per_layer
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros_like(angles)], axis=1)
    lattice = np.tile(ring, (layers, 1, 1))
    lattice[:, :, 2] += pitch * np.arange(layers)[:, None]
    return lattice


def contact_ring(
    layers: int,
    radius: float,
    pitch: float,
    samples_per_layer: int = OBS_SAMPLES_PER_LAYER,
    clearance: float = OBS_CLEARANCE,
) -> ObservationSet:
    """Observation ring just outside the contact surface, one per layer height."""
    if layers < 1:
        raise ValidationError("need at least one layer")
    if samples_per_layer < 1:
        raise ValidationError("need at least one sample per layer")
    if clearance <= 0.0:
        raise ValidationError("clearance must be positive")
    angles = 2.0 * np.pi * np.arange(samples_per_layer) / samples_per_layer
    ring = np.stack(
        [
            (radius + clearance) * np.cos(angles),
            (radius + clearance) * np.sin(angles),
            np.zeros_like(angles),
        ],
        axis=1,
    )
    points = np.concatenate([ring + [0.0, 0.0, pitch * l] for l in range(layers)])
    return ObservationSet(points=points)


def uniform_baseline(lattice: np.ndarray, axis=(0.0, 0.0, 1.0), magnitude: float = DEFAULT_MOMENT) -> tuple[Magnet, ...]:
    """Every slot filled with the same moment; the reference the search must beat."""
    moment = magnitude * np.asarray(axis, dtype=float)
    return tuple(Magnet(position=p, moment=moment) for p in lattice.reshape(-1, 3))


def _arrangement_from_choices(lattice: np.ndarray, choices, magnitude: float) -> MagnetArrangement:
    """Build the two-group arrangement for per-layer signed-axis choices.

    Within a ring, alternating slots go to opposite groups (even indices carry
    the chosen moment, odd ones its negation), mirroring the pole-alternation
    of the physical interface.
    """
    layers, per_layer, _ = lattice.shape
    magnets = []
    groups = []
    for l in range(layers):
        moment = magnitude * AXIS_CHOICES[choices[l]]
        first = tuple(range(l * per_layer, (l + 1) * per_layer, 2))
        second = tuple(range(l * per_layer + 1, (l + 1) * per_layer, 2))
        for k in range(per_layer):
            sign = 1.0 if k % 2 == 0 else -1.0
            magnets.append(Magnet(position=lattice[l, k], moment=sign * moment))
        groups.append((first, second))
    return MagnetArrangement(magnets=tuple(magnets), layers=layers, groups=tuple(groups))


def _layer_axis_scores(lattice: np.ndarray, observations: ObservationSet, magnitude: float) -> np.ndarray:
    """Objective contribution of each layer under each signed axis, (layers, 6).

    The norm is even in the moment, so a layer's contribution ignores the
    group split and the mirrored axis scores pairwise equal; both facts are
    relied on by the searches below.
    """
    layers, per_layer, _ = lattice.shape
    flat = lattice.reshape(-1, 3)
    scores = np.empty((layers, 6))
    for a in range(3):
        moments = np.tile(magnitude * AXIS_CHOICES[2 * a], (flat.shape[0], 1))
        norms = _field_norms(flat, moments, observations.points)
        per_layer_sum = norms.reshape(layers, per_layer, -1).sum(axis=(1, 2))
        scores[:, 2 * a] = per_layer_sum / observations.points.shape[0]
        scores[:, 2 * a + 1] = scores[:, 2 * a]
    return scores


def _climb(scores: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Coordinate-ascent over per-layer signed choices from a random start."""
    layers = scores.shape[0]
    choices = rng.integers(0, 6, size=layers)
    improved = True
    while improved:
        improved = False
        for l in range(layers):
            best = int(np.argmax(scores[l]))
            if scores[l, best] > scores[l, choices[l]]:
                choices[l] = best
                improved = True
    return choices


def optimize_arrangement(
    lattice: np.ndarray,
    observations: ObservationSet,
    b_desired: float,
    seed: int = 0,
    magnitude: float = DEFAULT_MOMENT,
) -> tuple[MagnetArrangement, np.ndarray]:
    """Grow the array layer by layer until the objective reaches ``b_desired``.

    For each layer count L the per-layer orientation search is exhaustive
    while the joint space 6^L stays within the enumeration limit (the
    decomposition makes the per-layer scan equal to the joint scan), and a
    seeded 16-restart hill-climb past it.  Returns the arrangement of the
    first sufficient L together with the best-objective history per L; raises
    TargetUnreachable carrying both when the lattice runs out.
    """
    lattice = np.asarray(lattice, dtype=float)
    if lattice.ndim != 3 or lattice.shape[2] != 3 or lattice.shape[1] % 2 != 0:
        raise ValidationError("lattice must be (layers, even_per_layer, 3)")
    if b_desired < 0.0:
        raise ValidationError("desired field strength must be nonnegative")
    rng = np.random.default_rng(seed)
    max_layers = lattice.shape[0]
    scores = _layer_axis_scores(lattice, observations, magnitude)
    history = []
    arrangement = None
    for n_layers in range(1, max_layers + 1):
        layer_scores = scores[:n_layers]
        if n_layers <= EXHAUSTIVE_LAYER_LIMIT:
            choices = np.argmax(layer_scores, axis=1)
        else:
            best_choices, best_value = None, -np.inf
            for _ in range(HILL_CLIMB_RESTARTS):
                cand = _climb(layer_scores, rng)
                value = float(layer_scores[np.arange(n_layers), cand].sum())
                if value > best_value:
                    best_choices, best_value = cand, value
            choices = best_choices
        arrangement = _arrangement_from_choices(lattice[:n_layers], choices, magnitude)
        history.append(field_objective(arrangement, observations))
        if history[-1] >= b_desired:
            return arrangement, np.array(history)
    raise TargetUnreachable(
        f"objective reached {history[-1]:.3e} T of the desired {b_desired:.3e} T "
        f"with all {max_layers} layers",
        arrangement=arrangement,
        history=np.array(history),
    )
