"""k-means and the clustering/reconstruction metric suite."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricsReport:
    silhouette: float
    davies_bouldin: float
    calinski_harabasz: float
    rmse: float
    variance: float
    inter_centroid_distance: float
    k: int
    seed: int = 0
    arch: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sq_dists(X, np.array(centers)).min(axis=1)
        tot = d2.sum()
        idx = rng.integers(n) if tot <= 0 else rng.choice(n, p=d2 / tot)
        centers.append(X[idx])
    return np.array(centers, dtype=np.float64)


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    k = len(centers)
    labels = np.full(len(X), -1)
    for _ in range(max_iter):
        new = _sq_dists(X, centers).argmin(axis=1)
        for j in range(k):
            members = new == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its centroid
                far = _sq_dists(X, centers)[np.arange(len(X)), new].argmax()
                centers[j] = X[far]
                new[far] = j
        if np.array_equal(new, labels):
            break
        labels = new
    labels = _sq_dists(X, centers).argmin(axis=1)
    for j in range(k):
        if (labels == j).any():
            centers[j] = X[labels == j].mean(axis=0)
    wcss = float(((X - centers[labels]) ** 2).sum())
    return labels, centers, wcss


def kmeans_cluster(
    Z: np.ndarray, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by WCSS."""
    X = np.asarray(Z, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if k > len(X):
        raise ValueError(f"k={k} exceeds the number of points {len(X)}")
    if k < 1 or restarts < 1:
        raise ValueError("k and restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        res = _lloyd(X, _kmeanspp(X, k, rng), max_iter)
        if best is None or res[2] < best[2]:
            best = res
    return best[0], best[1]


def wcss(Z: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    Z = np.asarray(Z, dtype=np.float64).reshape(len(labels), -1)
    return float(((Z - centroids[labels]) ** 2).sum())


# --------------------------------------------------------------------------
# metrics


def silhouette_samples(Z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-point ``(b - a) / max(a, b)``; points in singleton clusters score 0."""
    X = np.asarray(Z, dtype=np.float64).reshape(len(labels), -1)
    D = np.sqrt(_sq_dists(X, X))
    uniq = np.unique(labels)
    s = np.zeros(len(X))
    if len(uniq) < 2:
        return s
    for i in range(len(X)):
        own = labels == labels[i]
        if own.sum() <= 1:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == u].mean() for u in uniq if u != labels[i])
        m = max(a, b)
        s[i] = 0.0 if m == 0 else (b - a) / m
    return s


def davies_bouldin(Z: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Mean over clusters of the worst ``(s_i + s_j) / d(c_i, c_j)``; +inf if two centroids coincide."""
    X = np.asarray(Z, dtype=np.float64).reshape(len(labels), -1)
    k = len(centroids)
    scatter = np.array(
        [np.linalg.norm(X[labels == j] - centroids[j], axis=1).mean() if (labels == j).any() else 0.0 for j in range(k)]
    )
    sep = np.sqrt(_sq_dists(centroids, centroids))
    worst = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if sep[i, j] == 0:
                return float("inf")
            worst[i] = max(worst[i], (scatter[i] + scatter[j]) / sep[i, j])
    return float(worst.mean())


def calinski_harabasz(Z: np.ndarray, labels: np.ndarray) -> float:
    """``[tr(B)/(k-1)] / [tr(W)/(n-k)]``; 1.0 when within-cluster scatter is zero."""
    X = np.asarray(Z, dtype=np.float64).reshape(len(labels), -1)
    n = len(X)
    uniq = np.unique(labels)
    k = len(uniq)
    mu = X.mean(axis=0)
    tr_b = tr_w = 0.0
    for u in uniq:
        m = X[labels == u]
        c = m.mean(axis=0)
        tr_b += len(m) * ((c - mu) ** 2).sum()
        tr_w += ((m - c) ** 2).sum()
    if tr_w == 0.0:
        return 1.0
    return float(tr_b * (n - k) / (tr_w * (k - 1)))


def within_cluster_variance(Z: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Pooled per-dimension within-cluster variance, ``sum ||z - c||^2 / (n D)``."""
    X = np.asarray(Z, dtype=np.float64).reshape(len(labels), -1)
    return float(((X - centroids[labels]) ** 2).sum() / X.size)


def inter_centroid_distance(centroids: np.ndarray) -> float:
    k = len(centroids)
    if k < 2:
        return 0.0
    d = np.sqrt(_sq_dists(centroids, centroids))
    iu = np.triu_indices(k, 1)
    return float(d[iu].mean())


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(target)) ** 2)))


def clustering_metrics(
    Z: np.ndarray,
    labels: np.ndarray,
    centroids: np.ndarray | None = None,
    reconstruction: tuple[np.ndarray, np.ndarray] | None = None,
    seed: int = 0,
    arch: str = "",
) -> MetricsReport:
    labels = np.asarray(labels)
    X = np.asarray(Z, dtype=np.float64).reshape(len(labels), -1)
    if centroids is None:
        k = int(labels.max()) + 1
        centroids = np.array([X[labels == j].mean(axis=0) if (labels == j).any() else np.zeros(X.shape[1]) for j in range(k)])
    k = len(centroids)
    if k < 2:
        raise ValueError("cluster-quality metrics need k >= 2")
    return MetricsReport(
        silhouette=float(silhouette_samples(X, labels).mean()),
        davies_bouldin=davies_bouldin(X, labels, centroids),
        calinski_harabasz=calinski_harabasz(X, labels),
        rmse=rmse(*reconstruction) if reconstruction is not None else float("nan"),
        variance=within_cluster_variance(X, labels, centroids),
        inter_centroid_distance=inter_centroid_distance(centroids),
        k=k,
        seed=seed,
        arch=arch,
    )


def majority_vote_accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of points whose cluster's majority true label matches their own."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    hits = 0
    for c in np.unique(pred):
        members = truth[pred == c]
        hits += np.bincount(members).max()
    return hits / len(truth)
