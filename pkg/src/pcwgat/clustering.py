"""k-means partitioning of per-point feature vectors."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteFeature, ShapeMismatch, TooFewPoints


@dataclass
class ClusterSet:
    assignments: np.ndarray  # (N,) int
    centroids: np.ndarray    # (k, d)
    k: int
    final_error: float
    iterations_run: int
    error_history: list = field(default_factory=list)

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


def clustering_error(features, assignments, centroids) -> float:
    """Sum over clusters of squared distances from members to their centroid."""
    X = np.asarray(features, dtype=np.float64)
    a = np.asarray(assignments)
    T = np.asarray(centroids, dtype=np.float64)
    if X.ndim != 2 or T.ndim != 2 or X.shape[1] != T.shape[1] or a.shape != (X.shape[0],):
        raise ShapeMismatch(f"features {X.shape}, assignments {a.shape}, centroids {T.shape}")
    if a.size and (a.min() < 0 or a.max() >= T.shape[0]):
        raise ShapeMismatch("assignment index outside the centroid range")
    diff = X - T[a]
    return float(np.einsum("ij,ij->", diff, diff))


def _assign(X, T):
    # expanded form via BLAS, then exact distances wherever the best two are close
    d = (X * X).sum(1)[:, None] - 2.0 * (X @ T.T) + (T * T).sum(1)[None, :]
    if T.shape[0] == 1:
        return np.zeros(X.shape[0], dtype=np.intp)
    two = np.partition(d, 1, axis=1)[:, :2]
    scale = 1.0 + (X * X).sum(1) + (T * T).sum(1).max()
    close = np.flatnonzero(two[:, 1] - two[:, 0] <= 1e-9 * scale)
    if close.size:
        diff = X[close, None, :] - T[None, :, :]
        d[close] = np.einsum("ijk,ijk->ij", diff, diff)
    # argmin returns the first minimum: ties go to the lowest centroid index
    return np.argmin(d, axis=1)


def _means(X, a, k):
    counts = np.bincount(a, minlength=k)
    sums = np.column_stack([np.bincount(a, X[:, c], minlength=k) for c in range(X.shape[1])])
    return sums, counts


def _plus_plus_init(X, k, rng):
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    closest = ((X - X[centers[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining mass sits on chosen centres; take unused points in order
            unused = np.setdiff1d(np.arange(n), centers)
            centers.append(int(unused[0]))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            centers.append(min(idx, n - 1))
        closest = np.minimum(closest, ((X - X[centers[-1]]) ** 2).sum(1))
    return X[centers].copy()


def _reseed_empty(X, a, T, k):
    """Move each empty centroid onto the point currently farthest from its own centroid."""
    counts = np.bincount(a, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return a, T
    a = a.copy()
    T = T.copy()
    for c in empty:
        dist = ((X - T[a]) ** 2).sum(1)
        # only donate from clusters that keep at least one member
        counts = np.bincount(a, minlength=k)
        dist[counts[a] <= 1] = -1.0
        j = int(np.argmax(dist))
        a[j] = c
        T[c] = X[j]
    return a, T


def kmeans(features, k: int, seed: int = 0, max_iter: int = 100) -> ClusterSet:
    """Lloyd's k-means with k-means++ seeding.

    Deterministic for fixed ``(features, k, seed, max_iter)``.
    ``error_history`` holds the clustering error after initial assignment
    and after every iteration.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatch(f"features must be 2-D, got shape {X.shape}")
    n = X.shape[0]
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise TooFewPoints(f"k={k} exceeds the number of points ({n})")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("features contain NaN or infinity")

    rng = np.random.default_rng(seed)
    T = _plus_plus_init(X, k, rng)
    a = _assign(X, T)
    a, T = _reseed_empty(X, a, T, k)
    history = [clustering_error(X, a, T)]
    it = 0
    for it in range(1, max_iter + 1):
        sums, counts = _means(X, a, k)
        T = sums / np.maximum(counts, 1)[:, None]
        new_a = _assign(X, T)
        new_a, T = _reseed_empty(X, new_a, T, k)
        if np.array_equal(new_a, a):
            history.append(clustering_error(X, a, T))
            break
        a = new_a
        history.append(clustering_error(X, a, T))
    # centroids consistent with the final assignment
    sums, counts = _means(X, a, k)
    T = sums / np.maximum(counts, 1)[:, None]
    err = clustering_error(X, a, T)
    return ClusterSet(a, T, k, err, it, history)


def write_cluster_csv(clusters: ClusterSet, fp) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["point_index", "cluster_index"])
    for i, c in enumerate(clusters.assignments):
        w.writerow([i, int(c)])
