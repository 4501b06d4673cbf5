"""Preprocessing operations applied to training samples.

All seven ops target the spatial positions; the feature rows of
surviving points are bit-identical before and after every op. That
exact preservation is load-bearing for the feature-shift trigger's
robustness and is pinned by tests.

Pipeline randomness is derived from (pipeline seed, sample index,
epoch) so augmentation differs across epochs but replays exactly.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import knn_mean_dist
from .cloud import PointCloud

OP_KINDS = ("sor", "rotation", "rotation3d", "scaling", "shift", "dropout", "jitter")


@dataclass(frozen=True)
class PreprocessOp:
    kind: str
    params: tuple  # sorted (name, value) pairs; hashable for config round-trips

    def to_dict(self):
        return {"kind": self.kind, **dict(self.params)}

    @staticmethod
    def from_dict(d):
        kind = d["kind"]
        params = {k: v for k, v in d.items() if k != "kind"}
        return _CONSTRUCTORS[kind](**params)


def _op(kind, **params):
    return PreprocessOp(kind, tuple(sorted(params.items())))


def sor(k=30, delta=2.0):
    if k < 1:
        raise ValueError("sor needs k >= 1")
    if delta <= 0:
        raise ValueError("sor needs delta > 0")
    return _op("sor", k=int(k), delta=float(delta))


def rotation(max_deg=20.0):
    if max_deg < 0:
        raise ValueError("rotation needs max_deg >= 0")
    return _op("rotation", max_deg=float(max_deg))


def rotation3d(max_deg=360.0):
    if max_deg < 0:
        raise ValueError("rotation3d needs max_deg >= 0")
    return _op("rotation3d", max_deg=float(max_deg))


def scaling(lo=0.5, hi=1.5):
    if lo > hi:
        raise ValueError("scaling needs lo <= hi")
    return _op("scaling", lo=float(lo), hi=float(hi))


def shift(extent=0.1):
    if extent < 0:
        raise ValueError("shift needs extent >= 0")
    return _op("shift", extent=float(extent))


def dropout(max_frac=0.5):
    if not 0 <= max_frac < 1:
        raise ValueError("dropout needs 0 <= max_frac < 1")
    return _op("dropout", max_frac=float(max_frac))


def jitter(sigma=0.02):
    if sigma < 0:
        raise ValueError("jitter needs sigma >= 0")
    return _op("jitter", sigma=float(sigma))


_CONSTRUCTORS = {
    "sor": sor,
    "rotation": rotation,
    "rotation3d": rotation3d,
    "scaling": scaling,
    "shift": shift,
    "dropout": dropout,
    "jitter": jitter,
}


def full_defense_ops():
    """All seven ops at their standard settings, in canonical order."""
    return (sor(30, 2.0), rotation(20.0), rotation3d(360.0), scaling(0.5, 1.5),
            shift(0.1), dropout(0.5), jitter(0.02))


@dataclass(frozen=True)
class Pipeline:
    ops: tuple = ()
    seed: int = 0

    def prefix(self, length):
        return Pipeline(self.ops[:length], self.seed)

    def to_dict(self):
        return {"seed": self.seed, "ops": [op.to_dict() for op in self.ops]}

    @staticmethod
    def from_dict(d):
        return Pipeline(
            ops=tuple(PreprocessOp.from_dict(o) for o in d.get("ops", [])),
            seed=int(d.get("seed", 0)),
        )


def sor_filter(cloud, k=30, delta=2.0):
    """Statistical outlier removal.

    Removes points whose mean distance to their k nearest neighbors
    exceeds mean + delta * std of those per-point means. If the rule
    were ever to empty the cloud, the point with the smallest mean
    distance is kept.
    """
    if cloud.n <= k:
        raise ValueError(f"sor needs n > k, got n={cloud.n}, k={k}")
    d = knn_mean_dist(cloud.positions, int(k))
    threshold = d.mean() + float(delta) * d.std()
    keep = np.flatnonzero(d <= threshold)
    if keep.size == 0:
        keep = np.array([int(np.argmin(d))])
    return cloud.take(keep)


def rotation_matrix(ax, ay, az):
    """Rotation about x, then y, then z, angles in radians."""
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def random_rotation(cloud, max_deg, axes, rng, rotate_unit_features=False):
    """Rotate positions by uniform angles in [-max_deg, +max_deg] per
    enabled axis.

    Features pass through untouched by default, including 3-channel
    normals; set ``rotate_unit_features`` for the strict-geometry
    variant that co-rotates them.
    """
    bound = np.deg2rad(float(max_deg))
    angles = [rng.uniform(-bound, bound) if on else 0.0 for on in axes]
    rot = rotation_matrix(*angles)
    positions = cloud.positions @ rot.T
    if rotate_unit_features and cloud.c == 3:
        return PointCloud(positions, cloud.features @ rot.T)
    return PointCloud(positions, cloud.features.copy())


def random_scaling(cloud, lo, hi, rng):
    factor = rng.uniform(float(lo), float(hi))
    return PointCloud(cloud.positions * factor, cloud.features.copy())


def random_shift(cloud, extent, rng):
    offset = rng.uniform(-float(extent), float(extent), size=3)
    return PointCloud(cloud.positions + offset, cloud.features.copy())


def random_dropout(cloud, max_frac, rng):
    frac = rng.uniform(0.0, float(max_frac))
    n_drop = min(int(frac * cloud.n), cloud.n - 1)
    if n_drop == 0:
        return cloud.copy()
    drop = rng.choice(cloud.n, size=n_drop, replace=False)
    keep = np.setdiff1d(np.arange(cloud.n), drop, assume_unique=True)
    return cloud.take(keep)


def random_jitter(cloud, sigma, rng):
    noise = rng.normal(0.0, float(sigma), size=cloud.positions.shape)
    return PointCloud(cloud.positions + noise, cloud.features.copy())


def apply_op(cloud, op, rng):
    p = dict(op.params)
    if op.kind == "sor":
        return sor_filter(cloud, p["k"], p["delta"])
    if op.kind == "rotation":
        return random_rotation(cloud, p["max_deg"], (True, False, False), rng)
    if op.kind == "rotation3d":
        return random_rotation(cloud, p["max_deg"], (True, True, True), rng)
    if op.kind == "scaling":
        return random_scaling(cloud, p["lo"], p["hi"], rng)
    if op.kind == "shift":
        return random_shift(cloud, p["extent"], rng)
    if op.kind == "dropout":
        return random_dropout(cloud, p["max_frac"], rng)
    if op.kind == "jitter":
        return random_jitter(cloud, p["sigma"], rng)
    raise ValueError(f"unknown op kind: {op.kind!r}")


def pipeline_rng(pipeline, sample_index, epoch):
    return np.random.default_rng(
        np.random.SeedSequence((int(pipeline.seed), int(sample_index), int(epoch)))
    )


def pipeline_apply(cloud, pipeline, sample_index=0, epoch=0):
    """Apply the ops in order with the (seed, sample, epoch)-derived stream."""
    rng = pipeline_rng(pipeline, sample_index, epoch)
    for op in pipeline.ops:
        cloud = apply_op(cloud, op, rng)
    return cloud
