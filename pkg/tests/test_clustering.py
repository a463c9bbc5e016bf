import numpy as np
import pytest

from searchrec.clustering import kmeans, silhouette, sweep, ward_init
from searchrec.rng import substream

from oracles import best_partition_ss, hand_silhouette


def planted_blobs(k, per, d=4, spread=8.0, noise=0.3, seed=0):
    rng = substream(seed, "blobs")
    centers = rng.normal(0, spread, size=(k, d))
    points = np.vstack(
        [c + noise * rng.normal(size=(per, d)) for c in centers]
    )
    labels = np.repeat(np.arange(k), per)
    return points, labels


def same_partition(a, b):
    mapping = {}
    for x, y in zip(a, b):
        if x in mapping and mapping[x] != y:
            return False
        mapping[x] = y
    return len(set(mapping.values())) == len(mapping)


class TestWardInit:
    def test_two_points_two_singletons(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0]])
        labels = ward_init(pts, 2)
        assert set(labels) == {0, 1}

    def test_two_distant_pairs(self):
        pts = np.array([[0, 0], [0.1, 0], [10, 10], [10.1, 10]], dtype=float)
        labels = ward_init(pts, 2)
        assert labels[0] == labels[1] and labels[2] == labels[3]
        assert labels[0] != labels[2]

    def test_k_larger_than_n_rejected(self):
        with pytest.raises(ValueError):
            ward_init(np.zeros((3, 2)), 4)

    def test_planted_partition_recovered(self):
        pts, truth = planted_blobs(3, 10, seed=2)
        labels = ward_init(pts, 3)
        assert same_partition(labels, truth)

    def test_matches_exhaustive_best_ss_small(self):
        # 12 points, 3 planted groups: exhaustive optimum over all 3^12
        # labelings must coincide with ward followed by k-means
        pts, _ = planted_blobs(3, 4, d=2, seed=3)
        best_ss, best_labels = best_partition_ss(pts, 3)
        model = kmeans(pts, ward_init(pts, 3))
        assert same_partition(model.labels, best_labels)
        assert model.within_ss == pytest.approx(best_ss, rel=1e-9)


class TestKMeans:
    def test_fixpoint_converges_in_one_iteration(self):
        pts = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
        init = np.array([0, 0, 1, 1])
        model = kmeans(pts, init)
        assert model.n_iter == 1
        assert np.array_equal(model.labels, init)

    def test_within_ss_never_increases(self):
        rng = substream(5, "kmeans-mono")
        pts = rng.normal(size=(60, 3))
        init = rng.integers(0, 4, size=60)
        init[:4] = np.arange(4)
        model = kmeans(pts, init)  # monotonicity asserted internally
        assert model.within_ss >= 0

    def test_eight_point_global_optimum(self):
        pts, _ = planted_blobs(2, 4, d=2, seed=7)
        best_ss, best_labels = best_partition_ss(pts, 2)
        model = kmeans(pts, ward_init(pts, 2))
        assert model.within_ss == pytest.approx(best_ss, rel=1e-9)
        assert same_partition(model.labels, best_labels)

    def test_centroids_are_member_means(self):
        pts, _ = planted_blobs(3, 12, seed=9)
        model = kmeans(pts, ward_init(pts, 3))
        for c in range(3):
            members = pts[model.labels == c]
            assert np.abs(model.centroids[c] - members.mean(axis=0)).max() < 1e-9

    def test_voronoi_consistency(self):
        pts, _ = planted_blobs(4, 10, seed=11)
        model = kmeans(pts, ward_init(pts, 4))
        d2 = ((pts[:, None, :] - model.centroids[None]) ** 2).sum(axis=2)
        assert np.array_equal(np.argmin(d2, axis=1), model.labels)

    def test_empty_cluster_reseeded(self):
        pts = np.vstack([np.zeros((5, 2)), np.ones((5, 2)) * 4])
        init = np.zeros(10, dtype=int)
        init[0] = 1
        init[1] = 2  # cluster 2 will empty out under reassignment
        model = kmeans(pts, init)
        assert set(np.unique(model.labels)) == {0, 1, 2}


class TestSilhouette:
    def test_two_tight_pairs_near_one(self):
        pts = np.array([[0, 0], [0.5, 0], [10, 0], [10.5, 0]], dtype=float)
        labels = np.array([0, 0, 1, 1])
        assert silhouette(pts, labels) >= 0.9

    def test_identical_points_zero(self):
        pts = np.zeros((6, 2))
        labels = np.array([0, 0, 0, 1, 1, 1])
        assert silhouette(pts, labels) == 0.0

    def test_single_cluster_rejected(self):
        with pytest.raises(ValueError):
            silhouette(np.zeros((4, 2)), np.zeros(4, dtype=int))

    def test_singletons_score_zero(self):
        pts = np.array([[0, 0], [5, 5], [5.2, 5.0]])
        labels = np.array([0, 1, 1])
        expected = hand_silhouette(pts, labels)
        assert silhouette(pts, labels) == pytest.approx(expected, abs=1e-12)

    def test_five_point_hand_instance(self):
        pts = np.array([[0.0, 0], [1, 0], [0, 1], [6, 5], [7, 5]])
        labels = np.array([0, 0, 0, 1, 1])
        expected = hand_silhouette(pts, labels)
        assert silhouette(pts, labels) == pytest.approx(expected, abs=1e-12)


class TestSweep:
    def test_single_k(self):
        pts, _ = planted_blobs(3, 10, seed=13)
        models = sweep(pts, k_range=[3], seed=0)
        assert len(models) == 1 and models[0].k == 3

    def test_empty_range_rejected(self):
        with pytest.raises(ValueError):
            sweep(np.zeros((5, 2)), k_range=[], seed=0)

    @pytest.mark.parametrize("k_star", [3, 5, 8])
    def test_planted_k_recovered_by_silhouette(self, k_star):
        pts, _ = planted_blobs(k_star, 20, d=6, spread=10.0, noise=0.4, seed=k_star)
        models = sweep(pts, k_range=range(3, 11), seed=1)
        sil = {m.k: m.silhouette for m in models}
        assert max(sil, key=sil.get) == k_star

    def test_deterministic_across_runs(self):
        pts, _ = planted_blobs(4, 15, seed=17)
        a = sweep(pts, k_range=range(3, 7), seed=5)
        b = sweep(pts, k_range=range(3, 7), seed=5)
        for ma, mb in zip(a, b):
            assert np.array_equal(ma.labels, mb.labels)
            assert ma.silhouette == mb.silhouette
            assert ma.within_ss == mb.within_ss

    def test_planted_catalog_recovered(self):
        from searchrec.catalog import (
            feature_matrix,
            normalize,
            separable_profiles,
            synthetic_catalog,
        )

        cat, _ = synthetic_catalog(seed=8, profiles=separable_profiles(8))
        pts = feature_matrix(normalize(cat))
        models = sweep(pts, k_range=range(3, 11), seed=1)
        sil = {m.k: m.silhouette for m in models}
        assert max(sil, key=sil.get) == 8
