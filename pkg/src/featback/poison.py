"""Poisoned-cloud and poisoned-dataset construction.

The feature-shift trigger adds a uniform c-vector shift to the
additional features of a farthest-point-sampled (or seeded-random)
subset of points, then reapplies the guard so values stay in range.
Spatial positions are never touched, which is what makes the trigger
survive position-targeting preprocessing.

A spherical cluster of appended points is included as a contrast
baseline whose trigger lives purely in the spatial domain.
"""

import math
from dataclasses import dataclass

import numpy as np

from .cloud import GuardMode, LabeledCloud, PointCloud, apply_guard, fps_select
from .data import Dataset


@dataclass(frozen=True)
class Trigger:
    shift: np.ndarray  # (c,)
    bounds: np.ndarray  # (c, 2) search box, per-component [lo, hi]

    def __post_init__(self):
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2))
        if self.bounds.shape[0] != self.shift.shape[0]:
            raise ValueError("bounds must provide one [lo, hi] pair per shift component")
        if not np.all(np.isfinite(self.shift)):
            raise ValueError("trigger shift must be finite")
        if np.any(self.shift < self.bounds[:, 0]) or np.any(self.shift > self.bounds[:, 1]):
            raise ValueError("trigger shift outside its search box")

    @property
    def c(self):
        return self.shift.shape[0]


@dataclass(frozen=True)
class PoisonSpec:
    trigger: Trigger
    w: int  # points shifted per cloud
    guard: GuardMode
    target: int = 0
    rate: float = 0.05
    mode: str = "all_to_one"
    selection: str = "fps"
    selection_seed: int = 0

    def __post_init__(self):
        if self.w < 1:
            raise ValueError(f"subset size w must be >= 1, got {self.w}")
        if not 0.0 < self.rate < 1.0:
            raise ValueError(f"poison rate must lie in (0, 1), got {self.rate}")
        if self.mode not in ("all_to_one", "all_to_all"):
            raise ValueError(f"unknown attack mode: {self.mode!r}")
        if self.selection not in ("fps", "random"):
            raise ValueError(f"unknown selection mode: {self.selection!r}")
        if self.target < 0:
            raise ValueError("target label must be nonnegative")

    def to_dict(self):
        return {
            "shift": [float(v) for v in self.trigger.shift],
            "bounds": [[float(lo), float(hi)] for lo, hi in self.trigger.bounds],
            "w": self.w,
            "guard": self.guard.to_dict(),
            "target": self.target,
            "rate": self.rate,
            "mode": self.mode,
            "selection": self.selection,
            "selection_seed": self.selection_seed,
        }

    @staticmethod
    def from_dict(d):
        return PoisonSpec(
            trigger=Trigger(np.array(d["shift"]), np.array(d["bounds"])),
            w=int(d["w"]),
            guard=GuardMode.from_dict(d["guard"]),
            target=int(d["target"]),
            rate=float(d["rate"]),
            mode=d.get("mode", "all_to_one"),
            selection=d.get("selection", "fps"),
            selection_seed=int(d.get("selection_seed", 0)),
        )


def implant_trigger(cloud, spec, rng=None):
    """Shift the features of the selected subset and reapply the guard.

    Positions and unselected feature rows are bit-identical to the
    input. ``rng`` only matters for random selection; FPS is a pure
    function of the cloud geometry.
    """
    if spec.w > cloud.n:
        raise ValueError(f"w={spec.w} exceeds cloud size n={cloud.n}")
    if spec.selection == "fps":
        idx = fps_select(cloud, spec.w, start=0)
    else:
        if rng is None:
            rng = np.random.default_rng(spec.selection_seed)
        idx = rng.choice(cloud.n, size=spec.w, replace=False)
    features = cloud.features.copy()
    features[idx] = apply_guard(features[idx] + spec.trigger.shift, spec.guard)
    return PointCloud(cloud.positions.copy(), features)


def all_to_all_target(y, K):
    """Cyclic next-label mapping, a bijection on {0..K-1}."""
    y, K = int(y), int(K)
    if K < 2:
        raise ValueError("all-to-all mapping needs K >= 2")
    if y < 0 or y >= K:
        raise ValueError(f"label {y} out of range for K={K}")
    return (y + 1) % K


def poison_count(rate, N):
    """M = round(rate * N), ties rounding half-up."""
    return int(math.floor(rate * N + 0.5))


def _pick_victims(dataset, rate, mode, target, seed):
    labels = dataset.labels()
    N = len(dataset)
    M = poison_count(rate, N)
    if mode == "all_to_one":
        eligible = np.flatnonzero(labels != target)
    else:
        eligible = np.arange(N)
    if M > eligible.size:
        raise ValueError(
            f"need {M} poison victims but only {eligible.size} eligible clouds"
        )
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x9015)))
    chosen = rng.choice(eligible, size=M, replace=False)
    return np.sort(chosen)


def poison_dataset(dataset, spec, seed):
    """Poison exactly M = round(rate * N) clouds of the dataset.

    all_to_one draws victims from clouds whose label differs from the
    target and relabels them to it; all_to_all draws from everything
    and relabels each victim to the next class cyclically. Unpoisoned
    clouds are carried over untouched. Returns the poisoned dataset and
    the sorted victim index list.
    """
    if spec.mode == "all_to_one" and spec.target >= dataset.K:
        raise ValueError(f"target {spec.target} out of range for K={dataset.K}")
    chosen = _pick_victims(dataset, spec.rate, spec.mode, spec.target, seed)
    chosen_set = set(int(i) for i in chosen)
    clouds = []
    for i, lc in enumerate(dataset.clouds):
        if i in chosen_set:
            rng = np.random.default_rng(np.random.SeedSequence((spec.selection_seed, i)))
            poisoned = implant_trigger(lc.cloud, spec, rng=rng)
            label = spec.target if spec.mode == "all_to_one" else all_to_all_target(lc.label, dataset.K)
            clouds.append(LabeledCloud(poisoned, label))
        else:
            clouds.append(lc)
    meta = {"kind": "feature_shift", "spec": spec.to_dict(), "indices": [int(i) for i in chosen]}
    return Dataset(clouds, K=dataset.K, c=dataset.c, n=dataset.n, poison_meta=meta), chosen


def implant_ball_trigger(cloud, center, radius, count, seed=0):
    """Append ``count`` points sampled uniformly inside a ball.

    Appended points take the cloud's mean feature vector, so this
    baseline perturbs only the spatial domain. Original points are
    bit-identical in the output.
    """
    radius = float(radius)
    count = int(count)
    if radius <= 0.0:
        raise ValueError(f"ball radius must be positive, got {radius}")
    if count < 1:
        raise ValueError(f"ball point count must be >= 1, got {count}")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = radius * rng.uniform(size=(count, 1)) ** (1.0 / 3.0)
    ball = center + dirs * radii
    fill = np.tile(cloud.features.mean(axis=0), (count, 1))
    return PointCloud(
        np.concatenate([cloud.positions, ball]),
        np.concatenate([cloud.features, fill]),
    )


@dataclass(frozen=True)
class BallSpec:
    """Parameters of the appended-sphere contrast baseline."""

    center: tuple = (1.2, 1.2, 1.2)
    radius: float = 0.4
    count: int = 30
    target: int = 0
    rate: float = 0.05

    def to_dict(self):
        return {
            "center": [float(v) for v in self.center],
            "radius": self.radius,
            "count": self.count,
            "target": self.target,
            "rate": self.rate,
        }

    @staticmethod
    def from_dict(d):
        return BallSpec(
            center=tuple(d.get("center", (1.2, 1.2, 1.2))),
            radius=float(d.get("radius", 0.4)),
            count=int(d.get("count", 30)),
            target=int(d.get("target", 0)),
            rate=float(d.get("rate", 0.05)),
        )


def poison_dataset_ball(dataset, spec, seed):
    """All-to-one poisoning with the appended-ball baseline trigger."""
    if spec.target >= dataset.K:
        raise ValueError(f"target {spec.target} out of range for K={dataset.K}")
    chosen = _pick_victims(dataset, spec.rate, "all_to_one", spec.target, seed)
    chosen_set = set(int(i) for i in chosen)
    clouds = []
    for i, lc in enumerate(dataset.clouds):
        if i in chosen_set:
            poisoned = implant_ball_trigger(
                lc.cloud, spec.center, spec.radius, spec.count, seed=(seed, i)
            )
            clouds.append(LabeledCloud(poisoned, spec.target))
        else:
            clouds.append(lc)
    meta = {"kind": "ball", "spec": spec.to_dict(), "indices": [int(i) for i in chosen]}
    return Dataset(clouds, K=dataset.K, c=dataset.c, n=dataset.n, poison_meta=meta), chosen
