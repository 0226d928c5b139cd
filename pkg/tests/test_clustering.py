
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sum_sq_error
from pcwgat.clustering import clustering_error, kmeans, write_cluster_csv
from pcwgat.errors import NonFiniteFeature, TooFewPoints


def test_k_equals_n():
    X = np.random.default_rng(0).random((6, 4))
    cs = kmeans(X, 6)
    assert sorted(cs.assignments.tolist()) == list(range(6))
    assert cs.final_error == 0.0


def test_antipodal_pair():
    cs = kmeans(np.array([[1.0, 0], [-1.0, 0]]), 2)
    assert cs.assignments[0] != cs.assignments[1]
    assert cs.final_error == 0.0


def test_two_blobs_match_exhaustive_oracle():
    rng = np.random.default_rng(1)
    a = rng.normal(0, 1, (50, 3))
    b = rng.normal(0, 1, (50, 3)) + [10.0, 0, 0]
    X = np.vstack([a, b])
    labels = np.repeat([0, 1], 50)
    cs = kmeans(X, 2, seed=3)
    # same partition up to label names
    assert (cs.assignments == labels).all() or (cs.assignments == 1 - labels).all()
    # best error over the candidate centroids given by the two blob means
    best = min(sum_sq_error(X, labels if flip == 0 else 1 - labels,
                            [X[labels == flip].mean(0), X[labels != flip].mean(0)]) for flip in (0, 1))
    assert abs(cs.final_error - best) < 1e-6


def test_clustering_error_examples():
    assert clustering_error([[1.0, 2.0]], [0], [[1.0, 2.0]]) == 0.0
    assert clustering_error([[0.0], [2.0]], [0, 0], [[1.0]]) == 2.0


def test_clustering_error_matches_exact_oracle():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 5)) * 100
    T = rng.normal(size=(7, 5))
    a = rng.integers(0, 7, 200)
    assert abs(clustering_error(X, a, T) - sum_sq_error(X, a, T)) <= 1e-9 * max(1.0, sum_sq_error(X, a, T))


@pytest.mark.parametrize("instance", range(50))
def test_error_monotone(instance):
    rng = np.random.default_rng(100 + instance)
    n = int(rng.integers(20, 400))
    X = rng.normal(size=(n, int(rng.integers(1, 9))))
    if instance % 5 == 0:
        X = np.round(X, 1)  # plenty of duplicate points and ties
    cs = kmeans(X, int(rng.integers(2, min(n, 40))), seed=instance)
    h = cs.error_history
    assert all(b <= a for a, b in zip(h, h[1:])), h
    assert cs.final_error <= h[-1] + 1e-12 * max(h[0], 1.0)


def test_deterministic_and_nonempty():
    X = np.random.default_rng(4).random((500, 8))
    a, b = kmeans(X, 32, seed=7), kmeans(X, 32, seed=7)
    np.testing.assert_array_equal(a.assignments, b.assignments)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    assert a.sizes().min() >= 1


def test_duplicates_never_leave_empty_clusters():
    X = np.vstack([np.zeros((30, 2)), np.ones((30, 2)), [[5.0, 5.0]] * 3, [[9.0, 0.0]]])
    cs = kmeans(X, 4, seed=0)
    assert cs.sizes().min() >= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_centroids_are_member_means(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    k = int(rng.integers(2, n + 1))
    cs = kmeans(X, k, seed=seed)
    for c in range(k):
        members = X[cs.assignments == c]
        assert len(members) > 0
        np.testing.assert_allclose(cs.centroids[c], members.mean(0), atol=1e-12)


def test_errors():
    with pytest.raises(TooFewPoints):
        kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(NonFiniteFeature):
        kmeans(np.array([[0.0], [np.inf], [1.0]]), 2)
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 1)


def test_cluster_csv(tmp_path):
    cs = kmeans(np.random.default_rng(5).random((20, 3)), 3)
    with open(tmp_path / "c.csv", "w", newline="") as fp:
        write_cluster_csv(cs, fp)
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 21
