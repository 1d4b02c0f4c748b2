"""Spherical k-means pseudo-labelling and the target-feature memory queue."""
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, TooFewPoints
from .numerics import as_matrix, fork_rng, load_matrix_csv, save_matrix_csv


@dataclass
class PseudoLabeling:
    centroids: np.ndarray
    assign: np.ndarray
    inertia: float
    history: list = field(default_factory=list)

    @property
    def K(self):
        return self.centroids.shape[0]

    def save_csv(self, centroids_path, assign_path):
        save_matrix_csv(centroids_path, self.centroids)
        np.savetxt(assign_path, self.assign, fmt="%d")

    @classmethod
    def load_csv(cls, centroids_path, assign_path):
        c = load_matrix_csv(centroids_path)
        a = np.atleast_1d(np.loadtxt(assign_path, dtype=np.int64))
        return cls(centroids=c, assign=a, inertia=float("nan"))


def _assign(x, centroids):
    sims = x @ centroids.T
    labels = np.argmax(sims, axis=1)
    inertia = float(np.sum(1.0 - sims[np.arange(x.shape[0]), labels]))
    return labels, max(inertia, 0.0)


def _kmeanspp(x, K, rng):
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = x @ x[chosen[0]]
    for _ in range(1, K):
        w = np.clip(1.0 - closest, 0.0, None)
        w[chosen] = 0.0
        total = w.sum()
        if total <= 0:
            pool = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(pool))
        else:
            idx = int(rng.choice(n, p=w / total))
        chosen.append(idx)
        closest = np.maximum(closest, x @ x[idx])
    return x[chosen].copy()


def _update(x, labels, centroids):
    K = centroids.shape[0]
    sums = np.zeros_like(centroids)
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=K)
    norms = np.linalg.norm(sums, axis=1)
    new = centroids.copy()
    ok = norms > 1e-12
    new[ok] = sums[ok] / norms[ok, None]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        # re-seed at the points worst served by their current centroid
        dist = 1.0 - np.sum(x * new[labels], axis=1)
        order = np.argsort(-dist, kind="stable")
        for k, p in zip(empty, order):
            new[k] = x[p]
    return new


def _single_run(x, K, rng, max_iter, tol):
    centroids = _kmeanspp(x, K, rng)
    labels, inertia = _assign(x, centroids)
    history = [inertia]
    for _ in range(max_iter):
        centroids = _update(x, labels, centroids)
        labels, new_inertia = _assign(x, centroids)
        history.append(new_inertia)
        improved = inertia - new_inertia
        inertia = new_inertia
        if inertia <= 0.0 or improved < tol * max(history[-2], 1e-300):
            break
    return PseudoLabeling(centroids=centroids, assign=labels, inertia=inertia, history=history)


def spherical_kmeans(x, K, rng, max_iter=100, tol=1e-6, n_init=5):
    """Cosine k-means on unit rows, best of ``n_init`` seeded restarts.

    Restarts draw from child generators forked off ``rng``; the winner is the
    lowest inertia, earliest restart on ties.
    """
    x = as_matrix(x)
    n = x.shape[0]
    K = int(K)
    if K < 1:
        raise ValueError("K must be at least 1")
    if n < K:
        raise TooFewPoints(f"{n} points cannot form {K} clusters")
    best = None
    for child in fork_rng(rng, max(int(n_init), 1)):
        run = _single_run(x, K, child, max_iter, tol)
        if best is None or run.inertia < best.inertia:
            best = run
    return best


def assign_batch(pseudo, x):
    x = as_matrix(x)
    if x.shape[1] != pseudo.centroids.shape[1]:
        raise DimMismatch(f"features have {x.shape[1]} dims, centroids {pseudo.centroids.shape[1]}")
    return np.argmax(x @ pseudo.centroids.T, axis=1)


class MemoryQueue:
    """FIFO store of target embeddings; the oldest entries are evicted first."""

    def __init__(self, capacity):
        self.capacity = int(capacity)
        self._entries = deque(maxlen=self.capacity)
        self._clock = 0

    def __len__(self):
        return len(self._entries)

    @property
    def ages(self):
        return [age for _, age in self._entries]

    def push(self, rows):
        for row in as_matrix(rows):
            self._entries.append((row.copy(), self._clock))
            self._clock += 1
        return self

    def matrix(self, dim=None):
        if not self._entries:
            return np.zeros((0, dim or 0))
        return np.stack([e for e, _ in self._entries])


def queue_push(q, batch_target_embeddings):
    return q.push(batch_target_embeddings)


def cluster_pool(batch, q):
    batch = as_matrix(batch)
    if len(q) == 0:
        return batch
    mem = q.matrix()
    if mem.shape[1] != batch.shape[1]:
        raise DimMismatch(f"queue dim {mem.shape[1]} vs batch dim {batch.shape[1]}")
    return np.vstack([batch, mem])
