"""DBSCAN on particle ensembles and cluster-mean gradient sharing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "DbscanConfig",
    "ClusterAssignment",
    "dbscan",
    "cluster_means",
    "shared_gradients",
]


@dataclass(frozen=True)
class DbscanConfig:
    """DBSCAN parameters and the schedule on which it is re-applied.

    ``epsilon=None`` resolves to ``d / 2``; ``min_neighbors=None`` resolves
    to 5 for ensembles of at least 50 particles and ``max(2, M // 10)`` below.
    """

    epsilon: float | None = None
    min_neighbors: int | None = None
    burn_in: int = 10
    period: int = 10

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigurationError("DBSCAN epsilon must be positive")
        if self.min_neighbors is not None and self.min_neighbors < 1:
            raise ConfigurationError("min_neighbors must be >= 1")
        if self.period < 1 or self.burn_in < 0:
            raise ConfigurationError("DBSCAN period must be >= 1 and burn_in >= 0")

    def resolve(self, d, m):
        eps = self.epsilon if self.epsilon is not None else d / 2.0
        if self.min_neighbors is not None:
            mn = self.min_neighbors
        else:
            mn = 5 if m >= 50 else max(2, m // 10)
        return eps, mn

    def due(self, iteration):
        """Whether the clustering is recomputed at this global iteration."""
        return iteration >= self.burn_in and (iteration - self.burn_in) % self.period == 0


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    means: np.ndarray

    @property
    def n_clusters(self):
        return self.means.shape[1]

    @property
    def n_outliers(self):
        return int(np.sum(self.labels < 0))


def cluster_means(points, labels):
    points = np.asarray(points, dtype=float)
    n = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 0
    means = np.empty((points.shape[0], n))
    for k in range(n):
        means[:, k] = points[:, labels == k].mean(axis=1)
    return means


def dbscan(points, epsilon, min_neighbors):
    """Euclidean DBSCAN on the columns of ``points``.

    A point is core when at least ``min_neighbors`` points (itself included)
    lie within ``epsilon``. Clusters are grown from core points in index
    order; a border point reachable from several clusters keeps the first.
    Outliers are labelled -1.
    """
    points = np.asarray(points, dtype=float)
    m = points.shape[1]
    sq = np.sum(points**2, axis=0)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * points.T @ points, 0.0)
    # exact recheck near the boundary so the partition does not depend on rounding
    close = np.abs(dist2 - epsilon**2) <= 1e-9 * (1.0 + epsilon**2)
    if np.any(close):
        ii, jj = np.nonzero(close)
        diff = points[:, ii] - points[:, jj]
        dist2[ii, jj] = np.sum(diff**2, axis=0)
    adjacency = dist2 <= epsilon**2
    core = adjacency.sum(axis=1) >= min_neighbors

    labels = np.full(m, -1, dtype=int)
    current = 0
    for seed in np.flatnonzero(core):
        if labels[seed] >= 0:
            continue
        labels[seed] = current
        frontier = np.array([seed])
        while frontier.size:
            reach = adjacency[frontier].any(axis=0) & (labels < 0)
            new = np.flatnonzero(reach)
            labels[new] = current
            frontier = new[core[new]]
        current += 1
    return ClusterAssignment(labels, cluster_means(points, labels))


def shared_gradients(points, assignment, grad_fn):
    """Gradients where each cluster shares the gradient at its mean.

    ``grad_fn`` maps a ``(d, n)`` array to ``(d, n)`` gradients and is called
    once, on the current cluster means followed by the outliers. Returns
    the ``(d, M)`` gradient array and the number of evaluated points.
    """
    points = np.asarray(points, dtype=float)
    labels = assignment.labels
    means = cluster_means(points, labels)
    outliers = np.flatnonzero(labels < 0)
    batch = np.concatenate([means, points[:, outliers]], axis=1)
    evaluated = grad_fn(batch)
    n_clusters = means.shape[1]
    grads = np.empty_like(points)
    inlier = labels >= 0
    grads[:, inlier] = evaluated[:, labels[inlier]]
    grads[:, outliers] = evaluated[:, n_clusters:]
    return grads, batch.shape[1]
