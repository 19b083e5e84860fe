import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skim import kmeans1d as km
from skim.kmeans1d import kmeans_exact_dp, kmeans_lloyd, reconstruct_row, weighted_objective


def brute_force(values, weights, k):
    """Enumerate every contiguous split of the sorted distinct values."""
    w = km.floor_weights(weights)
    order = np.argsort(values)
    v, w = np.asarray(values, float)[order], w[order]
    best = np.inf
    m = len(v)
    for cuts in itertools.combinations(range(1, m), k - 1):
        bounds = (0,) + cuts + (m,)
        cost = 0.0
        for a, b in zip(bounds, bounds[1:]):
            mu = np.sum(w[a:b] * v[a:b]) / np.sum(w[a:b])
            cost += np.sum(w[a:b] * (v[a:b] - mu) ** 2)
        best = min(best, cost)
    return best


def _check_result(values, weights, res, k):
    w = km.floor_weights(weights)
    assert res.labels.max() < k
    assert np.all(np.diff(res.centroids) > 0)
    assert res.objective == pytest.approx(weighted_objective(values, weights, res), rel=1e-9, abs=1e-12)
    for c in range(res.k):
        members = np.asarray(values)[res.labels == c]
        assert members.size > 0
        assert members.min() - 1e-12 <= res.centroids[c] <= members.max() + 1e-12
    del w


def test_two_clean_clusters():
    res = kmeans_lloyd([0, 0, 1, 1], [1, 1, 1, 1], 2)
    assert list(res.centroids) == [0, 1] and res.objective == 0


def test_k_at_least_distinct():
    res = kmeans_lloyd([3, 1, 3, 2], [1, 2, 3, 4], 5)
    assert list(res.centroids) == [1, 2, 3] and res.objective == 0
    assert np.array_equal(reconstruct_row(res), [3, 1, 3, 2])
    assert kmeans_exact_dp([3, 1, 3, 2], [1, 1, 1, 1], 3).objective == 0


def test_weighted_three_points_matches_dp():
    # {0,1}|{4}: 0.25 + 0.25 ; {0}|{1,4}: centroid 3, cost 4 + 2 = 6
    for res in (kmeans_lloyd([0, 1, 4], [1, 1, 2], 2, restarts=10), kmeans_exact_dp([0, 1, 4], [1, 1, 2], 2)):
        np.testing.assert_allclose(res.centroids, [0.5, 4.0])
        assert res.objective == pytest.approx(0.5)


def test_dp_four_points():
    res = kmeans_exact_dp([1, 2, 8, 9], [1, 1, 1, 1], 2)
    np.testing.assert_allclose(res.centroids, [1.5, 8.5])
    assert res.objective == pytest.approx(1.0)
    assert brute_force([1, 2, 8, 9], [1, 1, 1, 1], 2) == pytest.approx(1.0)


def test_dp_matches_brute_force(rng):
    for _ in range(30):
        m = int(rng.integers(2, 10)); k = int(rng.integers(1, min(m, 4) + 1))
        v = rng.standard_normal(m); w = rng.exponential(size=m)
        assert kmeans_exact_dp(v, w, k).objective == pytest.approx(brute_force(v, w, k), rel=1e-9, abs=1e-12)


def test_dp_dominates_lloyd_random12(rng):
    v = rng.standard_normal(12); w = rng.exponential(size=12)
    dp = kmeans_exact_dp(v, w, 3)
    for seed in range(10):
        assert dp.objective <= kmeans_lloyd(v, w, 3, seed=seed, restarts=1).objective * (1 + 1e-9)


def test_errors():
    with pytest.raises(ValueError):
        kmeans_lloyd([1.0], [1.0], 0)
    with pytest.raises(ValueError):
        kmeans_lloyd([], [], 2)
    with pytest.raises(ValueError):
        kmeans_exact_dp(np.arange(5000.0), np.ones(5000), 2)


def test_zero_weights_uniform_fallback():
    res = kmeans_lloyd([0, 1, 10, 11], [0, 0, 0, 0], 2)
    np.testing.assert_allclose(res.centroids, [0.5, 10.5])


def test_weighted_objective_closed_form(rng):
    v = rng.standard_normal(9)
    res = km.ClusterResult(np.zeros(9, dtype=int), np.array([v.mean()]), 0.0)
    assert weighted_objective(v, np.ones(9), res) == pytest.approx(v.var() * 9)


def test_reconstruct_constant():
    res = km.ClusterResult(np.zeros(4, dtype=int), np.array([2.5, 7.0]), 0.0)
    assert np.all(reconstruct_row(res) == 2.5)


def test_lloyd_history_monotone(rng):
    for t in range(20):
        v = rng.standard_normal(40); w = rng.exponential(size=40)
        wf = km.floor_weights(w)
        hist = []
        km._lloyd_run(v, wf, 6, np.random.default_rng(t), hist)
        assert all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(hist, hist[1:]))


def test_local_optimality(rng):
    v = rng.standard_normal(50); w = rng.exponential(size=50)
    res = kmeans_lloyd(v, w, 5, seed=3)
    assert np.array_equal(km._assign(v, res.centroids), res.labels)


small = st.integers(min_value=1, max_value=64).flatmap(
    lambda m: st.tuples(
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=m, max_size=m),
        st.lists(st.floats(0, 5, allow_nan=False), min_size=m, max_size=m),
        st.integers(1, 8),
        st.integers(0, 2**32),
    )
)


@settings(max_examples=60, deadline=None)
@given(small)
def test_properties(case):
    values, weights, k, seed = case
    v, w = np.array(values), np.array(weights)
    a = kmeans_lloyd(v, w, k, seed=seed, restarts=2)
    _check_result(v, w, a, k)
    dp = kmeans_exact_dp(v, w, k)
    assert dp.objective <= a.objective * (1 + 1e-9) + 1e-9
    b = kmeans_lloyd(v, w, k, seed=seed, restarts=2)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.centroids, b.centroids)


@pytest.mark.parametrize("factor", [0.25, 3.0, 1024.0])
def test_weight_scaling_invariance(rng, factor):
    v = rng.standard_normal(30); w = rng.exponential(size=30)
    a = kmeans_lloyd(v, w, 4, seed=5)
    b = kmeans_lloyd(v, w * factor, 4, seed=5)
    assert np.array_equal(a.labels, b.labels)
    np.testing.assert_allclose(a.centroids, b.centroids, rtol=1e-12)
    assert b.objective == pytest.approx(a.objective * factor, rel=1e-9)


def test_shift_invariance(rng):
    v = rng.standard_normal(30); w = rng.exponential(size=30)
    a = kmeans_lloyd(v, w, 4, seed=5)
    b = kmeans_lloyd(v + 8.0, w, 4, seed=5)
    assert np.array_equal(a.labels, b.labels)
    np.testing.assert_allclose(b.centroids, a.centroids + 8.0, rtol=1e-12)
    assert b.objective == pytest.approx(a.objective, rel=1e-6)
