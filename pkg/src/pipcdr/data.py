"""Synthetic datasets, vector-space augmentations and CSV I/O."""
import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleSeparation, LabelsMissing, ParseError, RaggedRows
from .numerics import as_matrix, save_matrix_csv

MAX_PLACEMENT_ATTEMPTS = 10_000


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray = None
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = as_matrix(self.features)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if self.labels.size != self.features.shape[0]:
                raise ValueError("labels must have one entry per row")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return 0 if self.labels is None else int(np.unique(self.labels).size)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.features[idx], None if self.labels is None else self.labels[idx],
                       self.name, dict(self.meta))

    def manifest(self, **extra):
        out = {"name": self.name, "N": self.n, "D": self.dim, "K": self.n_classes}
        out.update(self.meta)
        out.update(extra)
        return out


@dataclass(frozen=True)
class AugmentSpec:
    noise_std: float = 0.0
    mask_prob: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0 or self.scale_jitter < 0 or not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError(f"invalid augmentation spec {self}")


def _place_means(K, dim, separation, rng):
    means = []
    attempts = 0
    while len(means) < K:
        if attempts >= MAX_PLACEMENT_ATTEMPTS:
            raise InfeasibleSeparation(
                f"could not place {K} means {separation} apart in {dim} dims")
        attempts += 1
        cand = rng.standard_normal(dim)
        cand *= separation / np.linalg.norm(cand)
        if all(np.linalg.norm(cand - m) >= separation for m in means):
            means.append(cand)
    return np.array(means)


def gen_gaussian_mixture(K, per_cluster, ambient_dim, separation, noise, rng, name="gmm"):
    """Gaussian blobs pushed through a fixed random tanh network.

    Means sit on a sphere of radius ``separation`` with pairwise distance at
    least ``separation`` (rejection sampled). The squashing map
    ``tanh(x W1 / separation) W2`` is drawn from ``rng`` before the means.
    """
    K = int(K)
    if K < 1:
        raise ValueError("K must be >= 1")
    if separation <= 0:
        raise ValueError("separation must be positive")
    counts = [int(per_cluster)] * K if np.isscalar(per_cluster) else [int(c) for c in per_cluster]
    if len(counts) != K or min(counts) < 1:
        raise ValueError("need one positive count per cluster")
    D = int(ambient_dim)
    hidden = 2 * D
    W1 = rng.standard_normal((D, hidden)) / np.sqrt(D)
    W2 = rng.standard_normal((hidden, D)) / np.sqrt(hidden)
    means = _place_means(K, D, separation, rng)
    labels = np.repeat(np.arange(K), counts)
    x = means[labels] + noise * rng.standard_normal((labels.size, D))
    feats = np.tanh(x @ W1 / separation) @ W2
    meta = {"separation": separation, "noise": noise, "per_cluster": counts}
    return Dataset(feats, labels, name, meta)


def long_tail_counts(n_max, K, imbalance):
    if K == 1:
        return np.array([n_max])
    k = np.arange(K)
    return np.maximum(np.rint(n_max * imbalance ** (k / (K - 1))).astype(np.int64), 1)


def long_tail_subsample(d, imbalance, rng):
    """Keep class c (in sorted label order) at n_max * imbalance**(c/(K-1)) members."""
    if d.labels is None:
        raise LabelsMissing("long-tail subsampling needs ground-truth labels")
    if not 0.0 < imbalance <= 1.0:
        raise ValueError("imbalance must lie in (0, 1]")
    classes, sizes = np.unique(d.labels, return_counts=True)
    target = long_tail_counts(int(sizes.max()), classes.size, imbalance)
    keep = []
    for c, want, have in zip(classes, target, sizes):
        members = np.flatnonzero(d.labels == c)
        take = min(int(want), int(have))
        keep.append(np.sort(rng.permutation(members)[:take]))
    idx = np.sort(np.concatenate(keep))
    out = d.subset(idx)
    _, realized = np.unique(out.labels, return_counts=True)
    out.meta.update({"imbalance_requested": imbalance,
                     "imbalance_realized": float(realized.min() / realized.max())})
    return out


def augment(x, spec, rng):
    """x' = (1 + jitter) x + noise, then coordinates zeroed with prob ``mask_prob``.

    Accepts a single row or a batch; each row draws its own jitter.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = as_matrix(x)
    n, dim = X.shape
    jitter = rng.uniform(-spec.scale_jitter, spec.scale_jitter, size=(n, 1)) if spec.scale_jitter > 0 else 0.0
    out = (1.0 + jitter) * X
    if spec.noise_std > 0:
        out = out + spec.noise_std * rng.standard_normal((n, dim))
    if spec.mask_prob > 0:
        out = np.where(rng.random((n, dim)) < spec.mask_prob, 0.0, out)
    return out[0] if single else out


def load_csv(path, label_column=None):
    """Read a headerless numeric CSV. Row/column numbers in errors are 1-based."""
    rows = []
    with open(path, newline="") as fh:
        for r, record in enumerate(csv.reader(fh), start=1):
            if not record or all(not c.strip() for c in record):
                continue
            vals = []
            for c, cell in enumerate(record, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: non-numeric cell {cell!r} at row {r}, column {c}",
                                     row=r, col=c) from None
            if rows and len(vals) != len(rows[0]):
                raise RaggedRows(f"{path}: row {r} has {len(vals)} cells, expected {len(rows[0])}")
            rows.append(vals)
    arr = np.array(rows, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, 0)
    labels = None
    if label_column is not None:
        labels = arr[:, label_column].astype(np.int64)
        arr = np.delete(arr, label_column, axis=1)
    return Dataset(arr, labels, os.path.splitext(os.path.basename(path))[0])


def load_labels(path):
    d = load_csv(path)
    if d.features.shape[1] != 1:
        raise RaggedRows(f"{path}: label files hold a single column")
    return d.features[:, 0].astype(np.int64)


def write_dataset(d, out_dir, **manifest_extra):
    os.makedirs(out_dir, exist_ok=True)
    save_matrix_csv(os.path.join(out_dir, "features.csv"), d.features)
    if d.labels is not None:
        np.savetxt(os.path.join(out_dir, "labels.csv"), d.labels, fmt="%d")
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(d.manifest(**manifest_extra), fh, indent=2, sort_keys=True)
        fh.write("\n")
