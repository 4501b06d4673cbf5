"""Hot geometric kernels: numba versions plus pure-numpy fallbacks.

Both variants of each kernel are kept importable so the benchmark and
the tests can compare them directly; normal callers go through the
dispatching wrappers at the bottom, which honor ``FEATBACK_NUMBA``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit


def fps_numpy(positions, w, start):
    """Greedy max-min farthest point sampling over (n, 3) positions.

    Ties resolve to the lowest index (np.argmax picks the first max).
    Already-selected points are masked with -1 so duplicate positions
    can never be selected twice.
    """
    n = positions.shape[0]
    selected = np.empty(w, dtype=np.int64)
    selected[0] = start
    d2 = np.sum((positions - positions[start]) ** 2, axis=1)
    d2[start] = -1.0
    for t in range(1, w):
        nxt = int(np.argmax(d2))
        selected[t] = nxt
        d2 = np.minimum(d2, np.sum((positions - positions[nxt]) ** 2, axis=1))
        d2[nxt] = -1.0
    return selected


@njit(cache=True)
def fps_numba(positions, w, start):  # pragma: no cover - jitted
    n = positions.shape[0]
    selected = np.empty(w, dtype=np.int64)
    selected[0] = start
    d2 = np.empty(n, dtype=np.float64)
    for i in range(n):
        dx = positions[i, 0] - positions[start, 0]
        dy = positions[i, 1] - positions[start, 1]
        dz = positions[i, 2] - positions[start, 2]
        d2[i] = dx * dx + dy * dy + dz * dz
    d2[start] = -1.0
    for t in range(1, w):
        best = 0
        best_val = d2[0]
        for i in range(1, n):
            if d2[i] > best_val:
                best_val = d2[i]
                best = i
        selected[t] = best
        for i in range(n):
            dx = positions[i, 0] - positions[best, 0]
            dy = positions[i, 1] - positions[best, 1]
            dz = positions[i, 2] - positions[best, 2]
            v = dx * dx + dy * dy + dz * dz
            if v < d2[i]:
                d2[i] = v
        d2[best] = -1.0
    return selected


def knn_mean_dist_numpy(positions, k):
    """Mean Euclidean distance from each point to its k nearest neighbors
    (self excluded), via the full pairwise distance matrix."""
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dist, np.inf)
    knn = np.partition(dist, k - 1, axis=1)[:, :k]
    return knn.mean(axis=1)


@njit(cache=True)
def knn_mean_dist_numba(positions, k):  # pragma: no cover - jitted
    n = positions.shape[0]
    out = np.empty(n, dtype=np.float64)
    row = np.empty(n, dtype=np.float64)
    for i in range(n):
        for j in range(n):
            dx = positions[i, 0] - positions[j, 0]
            dy = positions[i, 1] - positions[j, 1]
            dz = positions[i, 2] - positions[j, 2]
            row[j] = np.sqrt(dx * dx + dy * dy + dz * dz)
        row[i] = np.inf
        # partial selection sort of the k smallest
        acc = 0.0
        for t in range(k):
            m = t
            for j in range(t + 1, n):
                if row[j] < row[m]:
                    m = j
            tmp = row[t]
            row[t] = row[m]
            row[m] = tmp
            acc += row[t]
        out[i] = acc / k
    return out


def fps_indices(positions, w, start):
    if USE_NUMBA:
        return fps_numba(positions, w, start)
    return fps_numpy(positions, w, start)


def knn_mean_dist(positions, k):
    if USE_NUMBA:
        return knn_mean_dist_numba(positions, k)
    return knn_mean_dist_numpy(positions, k)
