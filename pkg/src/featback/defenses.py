"""Detection defenses and the optimal-transport stealth metric.

Wasserstein distance uses ground cost = Euclidean distance in the
concatenated (position, feature) space, solved exactly by optimal
assignment for small clouds and by entropic regularization above the
size cutoff, normalized by the point count.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cloud import PointCloud, apply_guard, fps_select, resample
from .model import _softmax, forward

EXACT_WD_MAX_POINTS = 512


def _cost_matrix(a, b):
    va = np.concatenate([a.positions, a.features], axis=1)
    vb = np.concatenate([b.positions, b.features], axis=1)
    diff = va[:, None, :] - vb[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def _sinkhorn_cost(cost, epsilon, max_iter=5000, tol=1e-9):
    """Entropic-OT transport cost with uniform marginals, log-domain."""
    n, m = cost.shape
    log_a = -math.log(n)
    log_b = -math.log(m)
    f = np.zeros(n)
    g = np.zeros(m)
    for _ in range(max_iter):
        f_new = epsilon * (log_a - _logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g_new = epsilon * (log_b - _logsumexp((f_new[:, None] - cost) / epsilon, axis=0))
        if np.max(np.abs(f_new - f)) < tol and np.max(np.abs(g_new - g)) < tol:
            f, g = f_new, g_new
            break
        f, g = f_new, g_new
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    return float(np.sum(plan * cost))


def _logsumexp(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def wasserstein_distance(a, b, method="auto", epsilon=None):
    """1-Wasserstein distance between two clouds, normalized by n.

    Unequal point counts are reconciled by resampling the larger cloud
    down to the smaller one. ``method``: "exact" (optimal assignment),
    "sinkhorn" (entropic regularization), or "auto" (exact up to
    EXACT_WD_MAX_POINTS points).
    """
    if a.c != b.c:
        raise ValueError(f"feature dimensionality mismatch: {a.c} vs {b.c}")
    if a.n != b.n:
        if a.n > b.n:
            a = resample(a, b.n)
        else:
            b = resample(b, a.n)
    cost = _cost_matrix(a, b)
    if method == "auto":
        method = "exact" if a.n <= EXACT_WD_MAX_POINTS else "sinkhorn"
    if method == "exact":
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum() / a.n)
    if method == "sinkhorn":
        if epsilon is None:
            epsilon = max(0.01 * float(np.mean(cost)), 1e-12)
        # uniform 1/n marginals make the transport cost already the
        # per-point mean, matching the exact solver's normalization
        return _sinkhorn_cost(cost, epsilon)
    raise ValueError(f"unknown method: {method!r}")


def prediction_entropy(params, cloud):
    probs = _softmax(forward(params, cloud)[0])
    nz = probs[probs > 0]
    return float(-np.sum(nz * np.log(nz)))


def strip_score(params, suspect, pool, overlays=8, rng=None):
    """Mean prediction entropy of the suspect superimposed with benign
    pool clouds.

    Each overlay unions n/2 farthest-point-sampled points from the
    suspect with n/2 from a randomly drawn pool cloud. Consistently low
    entropy marks a trigger that survives superimposition.
    """
    if overlays < 1:
        raise ValueError("need at least one overlay")
    if len(pool) == 0:
        raise ValueError("benign pool is empty")
    if rng is None:
        rng = np.random.default_rng(0)
    half = max(suspect.n // 2, 1)
    other = max(suspect.n - half, 1)
    sus_part = suspect.take(fps_select(suspect, min(half, suspect.n)))
    entropies = []
    for _ in range(overlays):
        donor = pool[int(rng.integers(len(pool)))]
        donor_part = donor.take(fps_select(donor, min(other, donor.n)))
        mixed = PointCloud(
            np.concatenate([sus_part.positions, donor_part.positions]),
            np.concatenate([sus_part.features, donor_part.features]),
        )
        entropies.append(prediction_entropy(params, mixed))
    return float(np.mean(entropies))


def _spectral_from_latents(latents):
    centered = latents - latents.mean(axis=0)
    if not np.any(centered):
        return np.zeros(latents.shape[0])
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return np.abs(centered @ vt[0])


def spectral_scores(params, clouds):
    """|projection| of each centered latent onto the top singular
    direction of the centered latent matrix."""
    if len(clouds) < 2:
        raise ValueError("need at least two clouds")
    latents = np.stack([forward(params, c)[1] for c in clouds])
    return _spectral_from_latents(latents)


def adaptive_noise(cloud, sigma, guard, rng=None):
    """Add one per-cloud Gaussian draw to every point's features, then
    reapply the guard. Positions are untouched."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if rng is None:
        rng = np.random.default_rng(0)
    eps = rng.normal(0.0, sigma, size=cloud.c) if sigma > 0 else np.zeros(cloud.c)
    return PointCloud(cloud.positions.copy(), apply_guard(cloud.features + eps, guard))


def auc_score(scores, flags):
    """Rank-based AUC of scores against binary flags (ties averaged)."""
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    pos = int(flags.sum())
    neg = int(flags.size - pos)
    if pos == 0 or neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(flags.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    rank = 1.0
    while i < flags.size:
        j = i
        while j + 1 < flags.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (rank + rank + (j - i))
        rank += j - i + 1
        i = j + 1
    return float((ranks[flags].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


@dataclass
class DetectionReport:
    scores: np.ndarray
    threshold: float
    flagged: np.ndarray  # indices the rule marks suspicious
    auc: float
    suspicious: str  # "low" or "high"
    flag_frac: float

    def to_dict(self):
        return {
            "scores": [float(v) for v in self.scores],
            "threshold": self.threshold,
            "flagged": [int(i) for i in self.flagged],
            "auc": self.auc,
            "suspicious": self.suspicious,
            "flag_frac": self.flag_frac,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def detection_report(scores, poison_flags, flag_frac=0.15, suspicious="high"):
    """Score summary against ground truth.

    AUC is oriented so 1.0 means the scores perfectly separate poisons
    in the suspicious direction. The rule flags exactly
    ceil(flag_frac * count) samples from the suspicious end.
    """
    scores = np.asarray(scores, dtype=np.float64)
    poison_flags = np.asarray(poison_flags, dtype=bool)
    if scores.shape != poison_flags.shape:
        raise ValueError("scores and flags must have the same length")
    if suspicious not in ("low", "high"):
        raise ValueError("suspicious must be 'low' or 'high'")
    oriented = scores if suspicious == "high" else -scores
    auc = auc_score(oriented, poison_flags)
    n_flag = math.ceil(flag_frac * scores.size)
    order = np.argsort(-oriented, kind="mergesort")
    flagged = np.sort(order[:n_flag])
    threshold = float(scores[order[n_flag - 1]]) if n_flag > 0 else float("nan")
    return DetectionReport(scores, threshold, flagged, auc, suspicious, flag_frac)
