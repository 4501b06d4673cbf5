"""Point-cloud data model and geometric primitives.

A cloud is n points, each carrying a 3-vector spatial position plus a
c-vector of additional per-point features (reflection intensity, unit
normals, ...). Every transform in the package consumes and produces
these immutable-by-convention value objects; functions return new
clouds and never mutate their inputs.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import fps_indices


class DegenerateFeatureError(ValueError):
    """Raised when unit normalization meets a zero-norm feature vector."""


@dataclass(frozen=True)
class GuardMode:
    """Feature sanitizer applied after a shift.

    ``clip`` maps each component into [lo, hi]; ``unit`` rescales each
    per-point feature vector to L2 norm 1. Both are idempotent.
    """

    kind: str
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("clip", "unit"):
            raise ValueError(f"unknown guard kind: {self.kind!r}")
        if self.kind == "clip" and not self.lo < self.hi:
            raise ValueError(f"clip guard requires lo < hi, got [{self.lo}, {self.hi}]")

    @staticmethod
    def clip(lo=0.0, hi=1.0):
        return GuardMode("clip", float(lo), float(hi))

    @staticmethod
    def unit():
        return GuardMode("unit")

    def to_dict(self):
        if self.kind == "clip":
            return {"kind": "clip", "lo": self.lo, "hi": self.hi}
        return {"kind": "unit"}

    @staticmethod
    def from_dict(d):
        if d["kind"] == "clip":
            return GuardMode.clip(d["lo"], d["hi"])
        return GuardMode.unit()


@dataclass
class PointCloud:
    positions: np.ndarray  # (n, 3) float64
    features: np.ndarray  # (n, c) float64

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (n, 3), got {self.positions.shape}")
        if self.features.ndim != 2:
            raise ValueError(f"features must be (n, c), got {self.features.shape}")
        if self.positions.shape[0] != self.features.shape[0]:
            raise ValueError(
                f"positions/features row mismatch: "
                f"{self.positions.shape[0]} vs {self.features.shape[0]}"
            )
        if self.positions.shape[0] < 1:
            raise ValueError("cloud must contain at least one point")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite position entries")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature entries")

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def c(self):
        return self.features.shape[1]

    def copy(self):
        return PointCloud(self.positions.copy(), self.features.copy())

    def take(self, indices):
        """New cloud from a row index array; positions and features stay paired."""
        return PointCloud(self.positions[indices], self.features[indices])


@dataclass
class LabeledCloud:
    cloud: PointCloud
    label: int

    def __post_init__(self):
        self.label = int(self.label)
        if self.label < 0:
            raise ValueError(f"label must be nonnegative, got {self.label}")


def fps_select(cloud, w, start=0):
    """Farthest point sampling over spatial positions.

    Greedy max-min: after the seed, each new index maximizes (over the
    unselected points) the minimum Euclidean distance to the selected
    set, ties broken by lowest index. Deterministic given
    (cloud, w, start); pass a seeded random start index for the
    randomized variant.

    Returns an int64 index array of length w with distinct entries.
    """
    n = cloud.n
    w = int(w)
    start = int(start)
    if w < 1 or w > n:
        raise ValueError(f"subset size w must satisfy 1 <= w <= n={n}, got {w}")
    if start < 0 or start >= n:
        raise ValueError(f"start index {start} out of range for n={n}")
    return fps_indices(cloud.positions, w, start)


def apply_guard(features, guard):
    """Sanitize a feature vector or an (m, c) block of feature rows.

    clip: componentwise min(max(v, lo), hi).
    unit: each row divided by its L2 norm; zero-norm rows are an error.
    """
    arr = np.asarray(features, dtype=np.float64)
    if guard.kind == "clip":
        return np.clip(arr, guard.lo, guard.hi)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateFeatureError("cannot unit-normalize a zero feature vector")
    return arr / norms


def center_and_scale(cloud):
    """Translate to zero centroid and scale the max radius to 1.

    The scale step is a no-op when all points coincide. Features pass
    through untouched.
    """
    centered = cloud.positions - cloud.positions.mean(axis=0)
    radius = np.max(np.linalg.norm(centered, axis=1))
    if radius > 0.0:
        centered = centered / radius
    return PointCloud(centered, cloud.features.copy())


def resample(cloud, m, seed=0):
    """Resize a cloud to m points, keeping positions and features paired.

    m <= n uses farthest point sampling (start index 0); m > n draws
    uniformly with replacement from a generator seeded by ``seed``.
    """
    m = int(m)
    if m < 1:
        raise ValueError(f"target size must be >= 1, got {m}")
    if m <= cloud.n:
        idx = fps_select(cloud, m, start=0)
    else:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, cloud.n, size=m)
    return cloud.take(idx)
