import numpy as np
import pytest

from pipcdr.clustering import (MemoryQueue, PseudoLabeling, _assign, _update, assign_batch, cluster_pool, queue_push,
                               spherical_kmeans)
from pipcdr.errors import DimMismatch, TooFewPoints
from pipcdr.metrics import ari
from pipcdr.numerics import make_rng

from conftest import unit_rows
from helpers import orthogonal_clusters, uniform_sphere


def test_k1_centroid_is_normalized_mean(rng):
    x = unit_rows(rng, 40, 4)
    pl = spherical_kmeans(x, 1, make_rng(0))
    mean = x.mean(axis=0)
    np.testing.assert_allclose(pl.centroids[0], mean / np.linalg.norm(mean), atol=1e-12)
    assert np.all(pl.assign == 0)
    best = float(np.sum(x @ pl.centroids[0]))
    cands = uniform_sphere(rng, 1000, 4)
    assert np.all(np.sum(x @ cands.T, axis=0) <= best + 1e-12)


def test_n_equals_k_gives_singletons(rng):
    x = unit_rows(rng, 6, 4)
    pl = spherical_kmeans(x, 6, make_rng(1))
    assert pl.inertia == pytest.approx(0.0, abs=1e-12)
    assert sorted(pl.assign.tolist()) == list(range(6))
    # exhaustive check: every point is exactly its centroid
    for i in range(6):
        np.testing.assert_allclose(pl.centroids[pl.assign[i]], x[i], atol=1e-12)


def test_too_few_points(rng):
    with pytest.raises(TooFewPoints):
        spherical_kmeans(unit_rows(rng, 2, 3), 3, make_rng(0))


def test_invariants_after_fit(rng):
    x = unit_rows(rng, 60, 5)
    pl = spherical_kmeans(x, 4, make_rng(3))
    np.testing.assert_allclose(np.linalg.norm(pl.centroids, axis=1), 1.0, atol=1e-9)
    assert pl.assign.min() >= 0 and pl.assign.max() < 4
    np.testing.assert_array_equal(assign_batch(pl, x), pl.assign)
    np.testing.assert_array_equal(np.argmax(x @ pl.centroids.T, axis=1), pl.assign)


@pytest.mark.parametrize("seed", range(20))
def test_inertia_monotone(seed):
    rng = np.random.default_rng(seed)
    x = unit_rows(rng, 50, 3)
    pl = spherical_kmeans(x, 5, make_rng(seed), n_init=1)
    h = np.array(pl.history)
    assert np.all(np.diff(h) <= 1e-12)


def test_three_cluster_recovery():
    rng = np.random.default_rng(0)
    hits = 0
    for seed in range(20):
        x, y = orthogonal_clusters(rng)
        hits += ari(y, spherical_kmeans(x, 3, make_rng(seed)).assign) == 1.0
    assert hits >= 19


def test_empty_cluster_reseeded():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    cents = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    labels = np.array([0, 1, 1])
    new = _update(x, labels, cents)
    np.testing.assert_allclose(np.linalg.norm(new, axis=1), 1.0)
    assert any(np.allclose(new[2], p) for p in x)
    _, inertia_after = _assign(x, new)
    assert inertia_after <= _assign(x, cents)[1] + 1e-12


def test_assign_batch_examples(rng):
    c = np.eye(3)
    pl = PseudoLabeling(c, np.arange(3), 0.0)
    np.testing.assert_array_equal(assign_batch(pl, c), [0, 1, 2])
    pl2 = PseudoLabeling(np.eye(2), np.arange(2), 0.0)
    assert assign_batch(pl2, [[-1.0, 0.0]])[0] == 1
    with pytest.raises(DimMismatch):
        assign_batch(pl2, np.ones((1, 3)))
    cents = unit_rows(rng, 4, 5)
    x = unit_rows(rng, 30, 5)
    pl3 = PseudoLabeling(cents, np.zeros(4, int), 0.0)
    oracle = [max(range(4), key=lambda k: (x[i] @ cents[k], -k)) for i in range(30)]
    np.testing.assert_array_equal(assign_batch(pl3, x), oracle)


def test_assign_ties_to_smallest_index():
    pl = PseudoLabeling(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2, int), 0.0)
    assert assign_batch(pl, [[np.sqrt(0.5), np.sqrt(0.5)]])[0] == 0


def test_pseudo_csv_roundtrip(tmp_path, rng):
    pl = spherical_kmeans(unit_rows(rng, 20, 3), 3, make_rng(0))
    pl.save_csv(tmp_path / "c.csv", tmp_path / "a.csv")
    back = PseudoLabeling.load_csv(tmp_path / "c.csv", tmp_path / "a.csv")
    np.testing.assert_array_equal(back.centroids, pl.centroids)
    np.testing.assert_array_equal(back.assign, pl.assign)


def test_restarts_deterministic(rng):
    x = unit_rows(rng, 40, 4)
    a = spherical_kmeans(x, 4, make_rng(5))
    b = spherical_kmeans(x, 4, make_rng(5))
    np.testing.assert_array_equal(a.centroids, b.centroids)


# ---- memory queue

def test_queue_fifo(rng):
    q = MemoryQueue(4)
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 3))
    queue_push(q, a)
    queue_push(q, b)
    np.testing.assert_array_equal(q.matrix(), np.vstack([a, b])[-4:])
    assert q.ages == sorted(q.ages) and len(set(q.ages)) == 4


def test_queue_capacity_zero(rng):
    q = MemoryQueue(0)
    queue_push(q, rng.standard_normal((5, 2)))
    assert len(q) == 0


def test_queue_overflow(rng):
    q = MemoryQueue(3)
    rows = rng.standard_normal((7, 2))
    queue_push(q, rows)
    np.testing.assert_array_equal(q.matrix(), rows[-3:])


def test_cluster_pool(rng):
    batch = rng.standard_normal((2, 3))
    q = MemoryQueue(5)
    np.testing.assert_array_equal(cluster_pool(batch, q), batch)
    mem = rng.standard_normal((3, 3))
    queue_push(q, mem)
    pooled = cluster_pool(batch, q)
    assert pooled.shape == (5, 3)
    np.testing.assert_array_equal(pooled[:2], batch)
    with pytest.raises(DimMismatch):
        cluster_pool(np.ones((1, 2)), q)


def test_pooled_vs_batch_kmeans_reported():
    rng = np.random.default_rng(4)
    x, y = orthogonal_clusters(rng, per=40, max_deg=25.0)
    perm = rng.permutation(len(y))
    x, y = x[perm], y[perm]
    batch, rest = slice(0, 12), slice(12, None)
    q = MemoryQueue(len(y) - 12)
    queue_push(q, x[rest])
    solo = spherical_kmeans(x[batch], 3, make_rng(0))
    pooled = spherical_kmeans(cluster_pool(x[batch], q), 3, make_rng(0))
    a_solo = ari(y[batch], solo.assign)
    a_pool = ari(y[batch], pooled.assign[:12])
    print(f"batch-only ARI={a_solo:.3f} pooled ARI={a_pool:.3f}")
    assert -1.0 <= a_solo <= 1.0 and -1.0 <= a_pool <= 1.0
