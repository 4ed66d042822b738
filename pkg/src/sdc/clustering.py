"""KMeans, minimum-cost assignment, prototype alignment, and K estimation."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .numerics import check_matrix, l2_normalize_rows

__all__ = [
    "KMeansResult",
    "Assignment",
    "kmeans",
    "hungarian",
    "align_prototypes",
    "estimate_k",
]


@dataclass
class KMeansResult:
    centers: np.ndarray  # k x d
    assignments: np.ndarray  # n, cluster index per point
    inertia: float  # sum of squared distances to assigned centers
    n_iter: int
    inertia_history: list = field(default_factory=list)

    def cluster_sizes(self):
        return np.bincount(self.assignments, minlength=self.centers.shape[0])


def _sq_dists(X, centers):
    # (x - c)^2 expanded; clip tiny negatives from cancellation.
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        - 2.0 * X @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    first = rng.integers(n)
    centers[0] = X[first]
    closest = _sq_dists(X, centers[:1]).ravel()
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[c] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[c : c + 1]).ravel())
    return centers


def kmeans(X, k, max_iters=100, tol=1e-6, seed=0):
    """Lloyd iterations from k-means++ seeding, deterministic given the seed.

    Stops when the largest center movement drops below `tol` or after
    `max_iters` iterations. Inertia is recorded after every assignment step
    and is non-increasing. Empty clusters are re-seeded at the point farthest
    from its assigned center.
    """
    X = check_matrix(X, name="X")
    n = X.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(X, k, rng)

    history = []
    assignments = None
    for it in range(max_iters):
        d2 = _sq_dists(X, centers)
        assignments = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), assignments]
        history.append(float(point_d2.sum()))

        new_centers = centers.copy()
        counts = np.bincount(assignments, minlength=k)
        for c in range(k):
            if counts[c] > 0:
                new_centers[c] = X[assignments == c].mean(axis=0)
        # Re-seed empties at the currently worst-fit point.
        spare = point_d2.copy()
        for c in np.flatnonzero(counts == 0):
            far = int(spare.argmax())
            new_centers[c] = X[far]
            spare[far] = -np.inf

        movement = np.linalg.norm(new_centers - centers, axis=1).max()
        centers = new_centers
        if movement < tol:
            break

    d2 = _sq_dists(X, centers)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assignments].sum())
    history.append(inertia)
    return KMeansResult(
        centers=centers,
        assignments=assignments,
        inertia=inertia,
        n_iter=len(history) - 1,
        inertia_history=history,
    )


@dataclass
class Assignment:
    mapping: np.ndarray  # target index per source index, injective
    total_cost: float


def hungarian(cost):
    """Minimum-total-cost matching of rows to columns.

    Square matrices yield a perfect matching. Rectangular input is treated as
    if padded to square with a large constant, so every row (m <= n) or every
    column's worth of rows (m > n) is matched optimally; the mapping covers
    the first min(m, n) sources.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    mapping = np.full(cost.shape[0], -1, dtype=np.int64)
    mapping[rows] = cols
    total = float(cost[rows, cols].sum())
    if cost.shape[0] == cost.shape[1]:
        return Assignment(mapping=mapping, total_cost=total)
    return Assignment(mapping=mapping[rows], total_cost=total)


def align_prototypes(centers, labeled_centroids):
    """Order cluster centers so known categories occupy the prefix.

    Labeled-class centroids are matched to cluster centers by maximum cosine
    similarity (Hungarian on 1 - cosine). Matched centers take indices
    0..M-1 in centroid order; the remaining centers follow in ascending
    original index. All output rows are unit-normalized.
    """
    centers = l2_normalize_rows(check_matrix(centers, name="centers"))
    k = centers.shape[0]
    if labeled_centroids is None or len(labeled_centroids) == 0:
        return centers
    centroids = l2_normalize_rows(
        check_matrix(labeled_centroids, name="labeled_centroids")
    )
    m = centroids.shape[0]
    if k < m:
        raise ValueError(f"need at least as many centers ({k}) as centroids ({m})")
    if centers.shape[1] != centroids.shape[1]:
        raise ValueError("centers and centroids must share a feature dimension")
    assn = hungarian(1.0 - centroids @ centers.T)
    matched = np.asarray(assn.mapping)
    rest = np.setdiff1d(np.arange(k), matched)
    return np.vstack([centers[matched], centers[rest]])


def estimate_k(X, k_max, drop_ratio=0.9, seed=0, max_iters=100, tol=1e-6):
    """Estimate the number of categories by over-clustering and dropping
    clusters smaller than drop_ratio * (n / k_max)."""
    X = check_matrix(X, name="X")
    n = X.shape[0]
    if not (1 <= k_max <= n):
        raise ValueError(f"need 1 <= k_max <= n, got k_max={k_max}, n={n}")
    if not (0.0 < drop_ratio < 1.0):
        raise ValueError("drop_ratio must lie in (0, 1)")
    result = kmeans(X, k_max, max_iters=max_iters, tol=tol, seed=seed)
    sizes = result.cluster_sizes()
    threshold = drop_ratio * (n / k_max)
    survivors = int(np.sum(sizes >= threshold))
    if survivors == 0:
        raise ValueError("all clusters fell below the size threshold")
    return survivors
