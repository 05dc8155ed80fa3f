"""Landmark shapes, labeling patterns, cluster partitions, and the
inter-ocular normalized error computations.

Coordinates live in normalized patch units: the 50x50 face patch spans
[0, 1] x [0, 1], x right, y down. Landmark indices are 0-based throughout
the API; the shipped cluster table file uses 1-based indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ContractViolation, DegenerateFaceError, ShapeError

SUPPORTED_PATTERNS = (5, 29, 68)

# (pattern, cluster_count); eye-center derivation per pattern is below
_PATTERN_CLUSTER_COUNT = {5: 4, 29: 5, 68: 7}

# dedicated eye-center landmarks (0-based) where the pattern has them
_EYE_CENTER_POINTS = {5: (0, 1), 29: (10, 15)}

# eye-outline landmark sets whose centroid defines the eye center
_EYE_OUTLINE_SETS = {68: (tuple(range(36, 42)), tuple(range(42, 48)))}


def n_landmarks(pattern: int) -> int:
    if pattern not in SUPPORTED_PATTERNS:
        raise ContractViolation(
            f"unsupported labeling pattern {pattern}; expected one of "
            f"{SUPPORTED_PATTERNS}")
    return pattern


@dataclass(frozen=True)
class Shape:
    """2n interleaved landmark coordinates (x1, y1, ..., xn, yn)."""

    coords: np.ndarray
    pattern: int

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        n = n_landmarks(self.pattern)
        if coords.shape != (2 * n,):
            raise ShapeError(
                f"pattern {self.pattern} needs {2 * n} coordinates, "
                f"got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ContractViolation("shape coordinates must be finite")

    @property
    def n(self) -> int:
        return self.pattern

    def points(self) -> np.ndarray:
        """(n, 2) array of (x, y) rows."""
        return self.coords.reshape(-1, 2)

    @classmethod
    def from_points(cls, points: np.ndarray, pattern: int) -> "Shape":
        return cls(np.asarray(points, dtype=np.float64).reshape(-1), pattern)


@dataclass(frozen=True)
class ClusterPartition:
    """Disjoint landmark index sets covering 0..n-1, in head order."""

    pattern: int
    names: tuple
    clusters: tuple  # tuple of int ndarrays, 0-based, sorted
    complements: tuple = field(init=False)

    def __post_init__(self):
        n = n_landmarks(self.pattern)
        seen = np.zeros(n, dtype=bool)
        for idx in self.clusters:
            if len(idx) == 0:
                raise ContractViolation("clusters must be nonempty")
            if seen[idx].any():
                raise ContractViolation("clusters overlap")
            seen[idx] = True
        if not seen.all():
            raise ContractViolation("clusters do not cover all landmarks")
        full = np.arange(n)
        comps = tuple(np.setdiff1d(full, idx) for idx in self.clusters)
        object.__setattr__(self, "complements", comps)

    @property
    def m(self) -> int:
        return len(self.clusters)

    def index_of(self, name: str) -> int:
        return self.names.index(name)


def _load_cluster_tables():
    text = (resources.files("facealign") / "data" / "cluster_tables.txt") \
        .read_text(encoding="utf-8")
    tables: dict[int, list[tuple[str, np.ndarray]]] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        pattern_s, name, idx_s = line.split()
        indices = np.array(sorted(int(t) - 1 for t in idx_s.split(",")),
                           dtype=np.intp)
        tables.setdefault(int(pattern_s), []).append((name, indices))
    return {
        pattern: ClusterPartition(
            pattern,
            tuple(name for name, _ in rows),
            tuple(idx for _, idx in rows),
        )
        for pattern, rows in tables.items()
    }


_CLUSTER_TABLES = _load_cluster_tables()


def clusters_for_pattern(pattern: int) -> ClusterPartition:
    """The fixed semantic partition for a labeling pattern (head order)."""
    n_landmarks(pattern)
    part = _CLUSTER_TABLES[pattern]
    assert part.m == _PATTERN_CLUSTER_COUNT[pattern]
    return part


def eye_centers(gt: Shape) -> tuple[np.ndarray, np.ndarray]:
    """(left, right) eye centers: dedicated landmarks where the pattern
    has them, otherwise the centroid of the eye-outline points."""
    pts = gt.points()
    if gt.pattern in _EYE_CENTER_POINTS:
        li, ri = _EYE_CENTER_POINTS[gt.pattern]
        return pts[li], pts[ri]
    left_set, right_set = _EYE_OUTLINE_SETS[gt.pattern]
    return pts[list(left_set)].mean(axis=0), pts[list(right_set)].mean(axis=0)


def interocular_distance(gt: Shape) -> float:
    """Euclidean distance between the eye centers of the ground truth."""
    left, right = eye_centers(gt)
    d = float(np.hypot(*(right - left)))
    if d == 0.0:
        raise DegenerateFaceError(
            "coincident eye centers; normalization undefined")
    return d


def per_landmark_errors(pred: Shape, gt: Shape) -> np.ndarray:
    """Per-landmark Euclidean distances normalized by the ground-truth
    inter-ocular distance (fractions, not percent)."""
    if pred.pattern != gt.pattern:
        raise ShapeError(
            f"pattern mismatch: pred {pred.pattern} vs gt {gt.pattern}")
    d = interocular_distance(gt)
    diff = pred.points() - gt.points()
    return np.hypot(diff[:, 0], diff[:, 1]) / d


_FLIP_MAPS_1BASED = {
    5: {1: 2, 4: 5},
    29: {1: 6, 2: 5, 3: 4, 7: 14, 8: 13, 9: 12, 10: 15, 11: 16,
         18: 19, 21: 24, 22: 23, 25: 26, 27: 29},
    68: {**{j: 18 - j for j in range(1, 9)},
         18: 27, 19: 26, 20: 25, 21: 24, 22: 23,
         32: 36, 33: 35,
         37: 46, 38: 45, 39: 44, 40: 43, 41: 48, 42: 47,
         49: 55, 50: 54, 51: 53, 56: 60, 57: 59,
         61: 65, 62: 64, 66: 68},
}


def flip_index_map(pattern: int) -> np.ndarray:
    """Involutive permutation (0-based) exchanging left/right counterparts;
    midline landmarks map to themselves."""
    n = n_landmarks(pattern)
    perm = np.arange(n, dtype=np.intp)
    for a, b in _FLIP_MAPS_1BASED[pattern].items():
        perm[a - 1] = b - 1
        perm[b - 1] = a - 1
    return perm


def flip_shape(shape: Shape) -> Shape:
    """Mirror a shape about the patch's vertical midline and relabel
    left/right counterparts."""
    pts = shape.points()[flip_index_map(shape.pattern)].copy()
    pts[:, 0] = 1.0 - pts[:, 0]
    return Shape.from_points(pts, shape.pattern)
