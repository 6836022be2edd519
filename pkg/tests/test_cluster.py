import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics as skm

from faconvlstm.cluster import (
    clustering_metrics,
    kmeans_cluster,
    majority_vote_accuracy,
    silhouette_samples,
    wcss,
)


def _var_ref(X, labels):
    # per cluster, per dimension population variance, weighted by cluster size
    tot = 0.0
    for u in np.unique(labels):
        m = X[labels == u]
        tot += len(m) * np.var(m, axis=0).mean()
    return tot / len(X)


def _icd_ref(C):
    pairs = list(itertools.combinations(range(len(C)), 2))
    return sum(math.dist(C[a], C[b]) for a, b in pairs) / len(pairs)


# ---------------------------------------------------------------- k-means


def test_kmeans_two_obvious_clusters():
    labels, cents = kmeans_cluster(np.array([0.0, 0.1, 10.0, 10.1]), 2, seed=0)
    np.testing.assert_allclose(np.sort(cents[:, 0]), [0.05, 10.05], atol=1e-12)
    assert labels[0] == labels[1] != labels[2] == labels[3]


def test_kmeans_k_equals_n_has_zero_wcss(rng):
    X = rng.normal(size=(6, 2))
    labels, cents = kmeans_cluster(X, 6, seed=3)
    assert wcss(X, labels, cents) == 0.0
    assert len(set(labels.tolist())) == 6


def test_kmeans_duplicated_data_same_centroids(rng):
    X = np.concatenate([rng.normal(size=(10, 2)), rng.normal(size=(10, 2)) + 8.0])
    _, a = kmeans_cluster(X, 2, seed=1)
    _, b = kmeans_cluster(np.concatenate([X, X]), 2, seed=1)
    key = lambda c: c[np.argsort(c[:, 0])]
    np.testing.assert_allclose(key(a), key(b), atol=1e-12)


def test_kmeans_deterministic_per_seed(rng):
    X = rng.normal(size=(30, 3))
    a = kmeans_cluster(X, 3, seed=5)
    b = kmeans_cluster(X, 3, seed=5)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_kmeans_rejects_k_above_n():
    with pytest.raises(ValueError):
        kmeans_cluster(np.zeros((3, 2)), 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 4))
def test_kmeans_not_worse_than_sklearn_lloyd_local_optimum(seed, k):
    from sklearn.cluster import KMeans

    X = np.random.default_rng(seed).normal(size=(25, 2))
    labels, cents = kmeans_cluster(X, k, seed=seed, restarts=10)
    ours = wcss(X, labels, cents)
    ref = KMeans(k, n_init=10, random_state=seed % 1000).fit(X).inertia_
    # every centroid is the mean of its members (a Lloyd fixed point)
    for j in range(k):
        if (labels == j).any():
            np.testing.assert_allclose(cents[j], X[labels == j].mean(axis=0), atol=1e-12)
    assert ours <= ref * 1.25 + 1e-12


# ---------------------------------------------------------------- metrics


def test_silhouette_hand_term():
    X = np.array([0.0, 1.0, 10.0, 11.0])[:, None]
    lab = np.array([0, 0, 1, 1])
    s = silhouette_samples(X, lab)
    assert abs(s[0] - 9.5 / 10.5) <= 1e-15
    assert round(s[0], 4) == 0.9048
    rep = clustering_metrics(X, lab)
    assert abs(rep.silhouette - s.mean()) <= 1e-15


def test_identical_points_forced_k2():
    X = np.ones((4, 2))
    rep = clustering_metrics(X, np.array([0, 0, 1, 1]))
    assert rep.silhouette == 0.0
    assert rep.davies_bouldin == math.inf


def test_single_label_silhouette_is_zero():
    assert np.all(silhouette_samples(np.arange(4.0)[:, None], np.zeros(4, int)) == 0.0)


def test_singleton_cluster_term_is_zero():
    X = np.array([0.0, 1.0, 5.0])[:, None]
    s = silhouette_samples(X, np.array([0, 0, 1]))
    assert s[2] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5), st.integers(1, 4))
def test_metrics_match_reference(seed, k, dim):
    r = np.random.default_rng(seed)
    X = r.normal(size=(k * 5, dim)) + np.repeat(r.normal(scale=3.0, size=(k, dim)), 5, axis=0)
    labels, cents = kmeans_cluster(X, k, seed=seed, restarts=2)
    if len(np.unique(labels)) < k:
        return
    pred, target = r.normal(size=(7, 3)), r.normal(size=(7, 3))
    rep = clustering_metrics(X, labels, cents, (pred, target))

    def close(a, b):
        return abs(a - b) <= 1e-9 * max(1.0, abs(b))

    assert close(rep.silhouette, skm.silhouette_score(X, labels))
    assert close(rep.davies_bouldin, skm.davies_bouldin_score(X, labels))
    assert close(rep.calinski_harabasz, skm.calinski_harabasz_score(X, labels))
    assert close(rep.rmse, math.sqrt(skm.mean_squared_error(target.ravel(), pred.ravel())))
    assert close(rep.variance, _var_ref(X, labels))
    assert close(rep.inter_centroid_distance, _icd_ref(cents))
    assert -1 <= rep.silhouette <= 1 and rep.davies_bouldin >= 0 and rep.calinski_harabasz >= 0


def test_calinski_zero_within_scatter_convention():
    X = np.array([[0.0], [0.0], [3.0], [3.0]])
    lab = np.array([0, 0, 1, 1])
    assert clustering_metrics(X, lab).calinski_harabasz == skm.calinski_harabasz_score(X, lab) == 1.0


def test_metrics_need_two_clusters():
    with pytest.raises(ValueError):
        clustering_metrics(np.zeros((3, 1)), np.zeros(3, int))


def test_majority_vote_accuracy():
    truth = np.array([0, 0, 0, 1, 1, 2])
    assert majority_vote_accuracy(np.array([5, 5, 5, 7, 7, 9]), truth) == 1.0
    assert majority_vote_accuracy(np.zeros(6, int), truth) == 0.5
    assert majority_vote_accuracy(np.array([0, 0, 1, 1, 1, 1]), truth) == 4 / 6
