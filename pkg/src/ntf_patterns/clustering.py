"""Clustering of users by their component memberships.

Points are rows of the membership matrix rescaled to unit sum (see
:func:`membership_shares`). k-medoids (PAM swap) is the primary method and
k-means is kept for comparison. Distances are Euclidean throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

__all__ = [
    "ClusteringResult",
    "membership_shares",
    "kmedoids",
    "kmeans",
    "silhouette",
    "elbow_curve",
]

log = logging.getLogger(__name__)


@dataclass
class ClusteringResult:
    """Labels in ``0..k-1``; ``centers`` holds medoid row indices for
    k-medoids and centroid coordinates for k-means. ``total_cost`` is the sum
    of point-to-center distances (k-medoids) or squared distances (k-means)."""

    labels: NDArray[np.int64]
    centers: NDArray
    total_cost: float
    method: str
    seed: int | None
    n_iter: int = 0

    @property
    def k(self) -> int:
        return len(self.centers)

    def cluster_sizes(self) -> NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.k)


def membership_shares(A: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Rows of ``A`` divided by their sums.

    Rows summing to zero (users with no activity) get the uniform share
    vector and are flagged in the returned mask.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("membership matrix must be 2-D")
    if np.any(A < 0):
        raise ValueError("membership matrix must be non-negative")
    sums = A.sum(axis=1)
    inactive = sums <= 0
    shares = np.empty_like(A)
    shares[~inactive] = A[~inactive] / sums[~inactive, None]
    shares[inactive] = 1.0 / A.shape[1]
    return shares, inactive


def _as_points(points: ArrayLike) -> NDArray[np.float64]:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    return X


def _check_k(k: int, n: int) -> None:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points n={n}")


def _assign(D: NDArray, medoids: NDArray) -> tuple[NDArray, NDArray]:
    # argmin returns the first minimum, so ties go to the lowest cluster id.
    sub = D[medoids]
    labels = np.argmin(sub, axis=0)
    return labels, sub[labels, np.arange(D.shape[0])]


def kmedoids(points: ArrayLike, k: int, seed: int | None = 0, max_iter: int = 1000) -> ClusteringResult:
    """PAM k-medoids started from ``k`` distinct seeded random points.

    Each iteration evaluates every (medoid, non-medoid) swap and applies the
    one that lowers the total distance the most; it stops when no swap
    improves the cost.
    """
    X = _as_points(points)
    n = X.shape[0]
    _check_k(k, n)
    rng = np.random.default_rng(seed)
    medoids = np.sort(rng.choice(n, size=k, replace=False))
    D = cdist(X, X)
    scale = float(D.max()) if n > 1 else 0.0

    labels, near = _assign(D, medoids)
    cost = float(near.sum())
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        if k == n:
            break
        sub = D[medoids]
        if k > 1:
            second = np.partition(sub, 1, axis=0)[1]
        else:
            second = np.full(n, np.inf)
        is_medoid = np.zeros(n, dtype=bool)
        is_medoid[medoids] = True

        # delta[i, h]: change in cost when medoid i is replaced by point h.
        gain_other = np.minimum(D - near[None, :], 0.0)
        delta = np.empty((k, n))
        for i in range(k):
            own = labels == i
            d_own = np.minimum(D[:, own], second[own][None, :]) - near[own][None, :]
            delta[i] = gain_other[:, ~own].sum(axis=1) + d_own.sum(axis=1)
        delta[:, is_medoid] = np.inf

        i_best, h_best = np.unravel_index(np.argmin(delta), delta.shape)
        if not delta[i_best, h_best] < -1e-12 * max(scale, 1.0):
            break
        medoids[i_best] = h_best
        order = np.argsort(medoids)
        medoids = medoids[order]
        labels, near = _assign(D, medoids)
        new_cost = float(near.sum())
        if not new_cost < cost:
            break
        cost = new_cost
    else:
        log.warning("k-medoids hit max_iter=%d", max_iter)

    labels, near = _assign(D, medoids)
    return ClusteringResult(labels, medoids, float(near.sum()), "kmedoids", seed, n_iter)


def kmeans(points: ArrayLike, k: int, seed: int | None = 0, max_iter: int = 300) -> ClusteringResult:
    """Lloyd's k-means seeded with the same sampled points as :func:`kmedoids`.

    An empty cluster is re-seeded at the point farthest from its centroid.
    """
    X = _as_points(points)
    n = X.shape[0]
    _check_k(k, n)
    rng = np.random.default_rng(seed)
    centroids = X[np.sort(rng.choice(n, size=k, replace=False))].copy()

    labels = np.full(n, -1)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = cdist(X, centroids, "sqeuclidean")
        new_labels = np.argmin(d2, axis=1)
        own = d2[np.arange(n), new_labels]
        for c in range(k):
            if not np.any(new_labels == c):
                # Only donors from clusters that keep at least one point.
                sizes = np.bincount(new_labels, minlength=k)
                cand = np.where(sizes[new_labels] > 1, own, -np.inf)
                far = int(np.argmax(cand))
                new_labels[far] = c
                own[far] = -np.inf
                log.debug("k-means cluster %d empty; reseeded at point %d", c, far)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = np.stack([X[labels == c].mean(axis=0) for c in range(k)])

    cost = float(((X - centroids[labels]) ** 2).sum())
    return ClusteringResult(labels, centroids, cost, "kmeans", seed, n_iter)


def silhouette(points: ArrayLike, labels: ArrayLike) -> tuple[NDArray[np.float64], float]:
    """Per-point silhouette coefficients and their mean.

    ``s = (b - a) / max(a, b)`` with ``a`` the mean distance to the rest of the
    point's own cluster and ``b`` the smallest mean distance to another
    cluster. Points alone in their cluster score 0; ``a = b = 0`` scores 0.
    """
    X = _as_points(points)
    labels = np.asarray(labels)
    if labels.shape[0] != X.shape[0]:
        raise ValueError("labels and points differ in length")
    ids, inv = np.unique(labels, return_inverse=True)
    if ids.size < 2:
        raise ValueError("silhouette needs at least two clusters")
    D = cdist(X, X)
    sizes = np.bincount(inv)
    sums = np.stack([D[:, inv == c].sum(axis=1) for c in range(ids.size)], axis=1)
    n = X.shape[0]
    own_size = sizes[inv]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = sums[np.arange(n), inv] / (own_size - 1)
        means = sums / sizes[None, :]
    means[np.arange(n), inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own_size == 1] = 0.0
    return s, float(s.mean())


def elbow_curve(points: ArrayLike, k_range, seed: int | None = 0) -> list[tuple[int, float]]:
    """k-medoids cost for each ``k`` in ``k_range``, reported as computed."""
    X = _as_points(points)
    out = []
    for k in k_range:
        res = kmedoids(X, int(k), seed)
        out.append((int(k), res.total_cost))
    return out
