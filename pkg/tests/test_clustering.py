import itertools

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from ntf_patterns.clustering import elbow_curve, kmeans, kmedoids, membership_shares, silhouette
from ntf_patterns.synth import SyntheticSpec, generate_synthetic

PAIRS = np.array([[0.0], [1.0], [10.0], [11.0]])


def exhaustive_medoid_cost(X, k):
    D = cdist(X, X)
    return min(D[:, list(s)].min(axis=1).sum() for s in itertools.combinations(range(len(X)), k))


def silhouette_oracle(X, labels):
    D = cdist(X, X)
    out = []
    for i in range(len(X)):
        own = [j for j in range(len(X)) if labels[j] == labels[i] and j != i]
        if not own:
            out.append(0.0)
            continue
        a = np.mean([D[i, j] for j in own])
        b = min(
            np.mean([D[i, j] for j in range(len(X)) if labels[j] == c])
            for c in set(labels) if c != labels[i]
        )
        out.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return np.array(out)


def elbow_slowdown_at(curve, k):
    costs = dict(curve)
    return (costs[k - 1] - costs[k]) >= 2.0 * (costs[k] - costs[k + 1])


class TestShares:
    def test_rows_sum_to_one(self):
        s, inactive = membership_shares([[1.0, 3.0], [0.0, 0.0]])
        np.testing.assert_allclose(s, [[0.25, 0.75], [0.5, 0.5]])
        np.testing.assert_array_equal(inactive, [False, True])

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            membership_shares([[-1.0, 1.0]])


class TestKMedoids:
    def test_pairs(self):
        res = kmedoids(PAIRS, 2, seed=0)
        assert res.total_cost == pytest.approx(2.0)
        assert res.labels[0] == res.labels[1] != res.labels[2] == res.labels[3]
        assert res.method == "kmedoids"

    def test_k_equals_n(self, rng):
        X = rng.random((6, 2))
        res = kmedoids(X, 6)
        assert res.total_cost == 0.0
        assert sorted(res.centers) == list(range(6))

    def test_against_brute_force(self):
        hits = total = 0
        for seed in range(60):
            g = np.random.default_rng(seed)
            n, dim = int(g.integers(4, 13)), int(g.integers(1, 3))
            k = int(g.integers(1, min(4, n) + 1))
            X = g.random((n, dim))
            best = exhaustive_medoid_cost(X, k)
            res = kmedoids(X, k, seed=seed)
            assert res.total_cost >= best - 1e-12
            hits += res.total_cost <= best + 1e-12
            total += 1
        assert hits / total >= 0.9

    def test_random_50x3(self, rng):
        X = rng.random((50, 3))
        res = kmedoids(X, 3, seed=1)
        D = cdist(X, X)
        assert res.total_cost == pytest.approx(D[:, res.centers].min(axis=1).sum())
        assert res.cluster_sizes().sum() == 50

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            kmedoids(PAIRS, 5)
        with pytest.raises(ValueError):
            kmedoids(PAIRS, 0)

    def test_deterministic(self, rng):
        X = rng.random((30, 2))
        a, b = kmedoids(X, 4, seed=3), kmedoids(X, 4, seed=3)
        np.testing.assert_array_equal(a.labels, b.labels)


class TestKMeans:
    def test_pairs(self):
        res = kmeans(PAIRS, 2, seed=0)
        assert sorted(res.centers[:, 0]) == [0.5, 10.5]
        assert res.total_cost == pytest.approx(1.0)
        assert res.method == "kmeans"

    def test_identical_points(self):
        res = kmeans(np.ones((5, 2)), 3)
        assert res.total_cost == 0.0

    def test_k_one_is_mean(self, rng):
        X = rng.random((20, 3))
        np.testing.assert_allclose(kmeans(X, 1).centers[0], X.mean(axis=0))


class TestSilhouette:
    def test_pairs_hand_value(self):
        s, mean = silhouette(PAIRS, [0, 0, 1, 1])
        assert s[0] == pytest.approx(0.904762, abs=1e-6)
        assert mean == pytest.approx(np.mean(silhouette_oracle(PAIRS, [0, 0, 1, 1])), abs=1e-12)

    def test_coincident_clusters(self):
        s, mean = silhouette([[0.0], [0.0], [1.0], [1.0]], [0, 0, 1, 1])
        np.testing.assert_allclose(s, 1.0)

    def test_swapped_labels_negative(self):
        _, mean = silhouette(PAIRS, [0, 1, 0, 1])
        assert mean < 0

    def test_singleton_zero(self):
        s, _ = silhouette(PAIRS, [0, 0, 0, 1])
        assert s[3] == 0.0

    def test_matches_oracle(self, rng):
        X = rng.random((25, 2))
        labels = rng.integers(0, 4, size=25)
        np.testing.assert_allclose(silhouette(X, labels)[0], silhouette_oracle(X, labels), atol=1e-12)

    def test_isometry_invariance(self, rng):
        X = rng.random((20, 2))
        labels = rng.integers(0, 3, size=20)
        theta = 0.7
        Q = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        np.testing.assert_allclose(silhouette(X @ Q.T + 5.0, labels)[0], silhouette(X, labels)[0], atol=1e-12)

    def test_one_cluster_rejected(self):
        with pytest.raises(ValueError):
            silhouette(PAIRS, [0, 0, 0, 0])


class TestElbow:
    def test_pairs(self):
        # Medoid 1 or 10: 1 + 0 + 9 + 10 = 20.
        assert exhaustive_medoid_cost(PAIRS, 1) == 20.0
        assert elbow_curve(PAIRS, [1, 2, 4]) == [(1, 20.0), (2, 2.0), (4, 0.0)]

    def test_planted_five_groups(self):
        data = generate_synthetic(SyntheticSpec(n_users=200, n_groups=5, noise="none", seed=0))
        shares, _ = membership_shares(data.truth.A)
        curve = elbow_curve(shares, range(1, 9), seed=0)
        assert elbow_slowdown_at(curve, 5)
