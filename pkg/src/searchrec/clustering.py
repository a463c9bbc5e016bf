"""Ward-initialized k-means with silhouette-based selection of K.

Hierarchical agglomeration (Ward's criterion) supplies starting
assignments, Lloyd iterations refine them, and the mean silhouette
scores each candidate K. Distances are Euclidean on the weighted
normalized feature vectors; the k-means objective is the within-cluster
sum of squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

__all__ = [
    "ClusterModel",
    "ward_init",
    "kmeans",
    "silhouette",
    "sweep",
]


@dataclass
class ClusterModel:
    k: int
    labels: np.ndarray  # cluster index per point, 0-based
    centroids: np.ndarray
    silhouette: float
    within_ss: float
    n_iter: int = 0
    vehicle_ids: list[str] | None = None

    @property
    def assignments(self) -> dict[str, int]:
        if self.vehicle_ids is None:
            raise ValueError("model carries no vehicle ids")
        return {vid: int(c) for vid, c in zip(self.vehicle_ids, self.labels)}

    def to_dict(self) -> dict:
        return {
            "k": int(self.k),
            "labels": self.labels.astype(int).tolist(),
            "centroids": self.centroids.tolist(),
            "silhouette": float(self.silhouette),
            "within_ss": float(self.within_ss),
            "n_iter": int(self.n_iter),
            "vehicle_ids": self.vehicle_ids,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        return cls(
            k=int(d["k"]),
            labels=np.asarray(d["labels"], dtype=int),
            centroids=np.asarray(d["centroids"], dtype=float),
            silhouette=float(d["silhouette"]),
            within_ss=float(d["within_ss"]),
            n_iter=int(d.get("n_iter", 0)),
            vehicle_ids=d.get("vehicle_ids"),
        )


def ward_init(points: np.ndarray, k: int) -> np.ndarray:
    """Starting assignments from Ward's agglomerative criterion.

    The merge sequence minimizes the increase in within-cluster sum of
    squares at each step; cutting the tree at ``k`` clusters gives the
    initial allocation.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points ({n})")
    if k == n:
        return np.arange(n)
    tree = linkage(points, method="ward")
    labels = fcluster(tree, t=k, criterion="maxclust") - 1
    # relabel in order of first appearance for determinism
    order: dict[int, int] = {}
    out = np.empty(n, dtype=int)
    for i, lab in enumerate(labels):
        if lab not in order:
            order[lab] = len(order)
        out[i] = order[lab]
    return out


def _within_ss(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def _centroids(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    d = points.shape[1]
    out = np.zeros((k, d))
    for c in range(k):
        members = labels == c
        if members.any():
            out[c] = points[members].mean(axis=0)
    return out


def kmeans(
    points: np.ndarray,
    init: np.ndarray,
    max_iter: int = 200,
    tol: float = 1e-10,
) -> ClusterModel:
    """Lloyd iterations from the given assignments.

    The objective is checked to be non-increasing at every iteration.
    Ties in assignment go to the lowest cluster index; a cluster that
    empties is reseeded with the point farthest from its centroid.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    labels = np.asarray(init, dtype=int).copy()
    if labels.shape[0] != n:
        raise ValueError("init must assign every point")
    k = int(labels.max()) + 1
    centroids = _centroids(points, labels, k)
    ss = _within_ss(points, labels, centroids)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        # distances to centroids; argmin takes the first (lowest) index on ties
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        for c in range(k):
            if not (new_labels == c).any():
                residual = ((points - centroids[new_labels]) ** 2).sum(axis=1)
                new_labels[int(np.argmax(residual))] = c
        new_centroids = _centroids(points, new_labels, k)
        new_ss = _within_ss(points, new_labels, new_centroids)
        assert new_ss <= ss + 1e-9 * max(1.0, ss), "within-SS increased"
        shift = float(np.abs(new_centroids - centroids).max())
        converged = np.array_equal(new_labels, labels) or shift < tol
        labels, centroids, ss = new_labels, new_centroids, new_ss
        if converged:
            break
    return ClusterModel(
        k=k,
        labels=labels,
        centroids=centroids,
        silhouette=float("nan"),
        within_ss=ss,
        n_iter=n_iter,
    )


def silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over points, Euclidean distances.

    Per point: (b - a) / max(a, b) with a the mean distance to its own
    cluster (excluding itself) and b the smallest mean distance to any
    other cluster. Points in singleton clusters score 0, as does the
    0/0 case of coincident points.
    """
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels, dtype=int)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ValueError("silhouette requires at least 2 clusters")
    d = np.sqrt(
        np.maximum(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2), 0.0)
    )
    n = points.shape[0]
    sizes = {int(c): int((labels == c).sum()) for c in uniq}
    scores = np.zeros(n)
    # mean distance from each point to each cluster
    mean_to = np.zeros((n, uniq.size))
    for j, c in enumerate(uniq):
        mean_to[:, j] = d[:, labels == c].mean(axis=1)
    for i in range(n):
        own = int(np.where(uniq == labels[i])[0][0])
        size = sizes[int(labels[i])]
        if size == 1:
            scores[i] = 0.0
            continue
        a = mean_to[i, own] * size / (size - 1)  # exclude self from the mean
        b = np.min(np.delete(mean_to[i], own))
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def sweep(
    points: np.ndarray,
    k_range=range(3, 11),
    seed: int = 0,
    vehicle_ids: list[str] | None = None,
    max_iter: int = 200,
) -> list[ClusterModel]:
    """One fitted model per K, silhouette-scored.

    Deterministic given the seed (the pipeline is deterministic even
    without it; the seed is reserved for subsampled initialization on
    very large inputs).
    """
    ks = list(k_range)
    if not ks:
        raise ValueError("k_range is empty")
    del seed  # fitting is deterministic; kept for interface stability
    models = []
    for k in ks:
        model = kmeans(points, ward_init(points, k), max_iter=max_iter)
        model.silhouette = silhouette(points, model.labels)
        model.vehicle_ids = vehicle_ids
        models.append(model)
    return models
