"""Clustering and representation-quality metrics."""
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln

from .errors import EmptyReference, LengthMismatch
from .numerics import as_matrix, l2_normalize_rows


@dataclass(frozen=True)
class Partition:
    """Dense labels 0..K-1, canonicalized by first-sorted original label."""
    labels: np.ndarray
    K: int

    @classmethod
    def of(cls, labels):
        if isinstance(labels, Partition):
            return labels
        _, dense = np.unique(np.asarray(labels).ravel(), return_inverse=True)
        dense = dense.astype(np.int64)
        return cls(labels=dense, K=int(dense.max()) + 1 if dense.size else 0)

    def __len__(self):
        return self.labels.size


def _pair(a, b):
    a, b = Partition.of(a), Partition.of(b)
    if len(a) != len(b):
        raise LengthMismatch(f"partitions have {len(a)} and {len(b)} elements")
    if len(a) == 0:
        raise LengthMismatch("partitions are empty")
    return a, b


def contingency(a, b):
    a, b = _pair(a, b)
    table = np.zeros((a.K, b.K), dtype=np.int64)
    np.add.at(table, (a.labels, b.labels), 1)
    return table


def _entropy(counts):
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def _mutual_info(table):
    n = table.sum()
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    nz = table > 0
    nij = table[nz].astype(np.float64)
    outer = np.outer(rows, cols)[nz].astype(np.float64)
    return float(max(np.sum(nij / n * (np.log(nij) + math.log(n) - np.log(outer))), 0.0))


def nmi(a, b):
    """Mutual information over the arithmetic mean of the two entropies."""
    table = contingency(a, b)
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    return float(min(_mutual_info(table) / (0.5 * (ha + hb)), 1.0))


def expected_mutual_info(table):
    """E[MI] under the hypergeometric permutation model for fixed marginals."""
    n = int(table.sum())
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    emi = 0.0
    lg_n = gammaln(n + 1)
    for ai in rows:
        for bj in cols:
            lo, hi = max(1, ai + bj - n), min(ai, bj)
            if lo > hi:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            log_p = (gammaln(ai + 1) + gammaln(bj + 1) + gammaln(n - ai + 1) + gammaln(n - bj + 1)
                     - lg_n - gammaln(nij + 1) - gammaln(ai - nij + 1) - gammaln(bj - nij + 1)
                     - gammaln(n - ai - bj + nij + 1))
            term = nij / n * (np.log(n * nij) - math.log(ai * bj))
            emi += float(np.sum(term * np.exp(log_p)))
    return emi


def ami(a, b):
    table = contingency(a, b)
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    mi = _mutual_info(table)
    emi = expected_mutual_info(table)
    denom = 0.5 * (ha + hb) - emi
    if abs(denom) < 1e-15:
        return 1.0 if abs(mi - emi) < 1e-15 else 0.0
    return float((mi - emi) / denom)


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(a, b):
    table = contingency(a, b)
    n = table.sum()
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def clustering_accuracy(truth, pred):
    """Best one-to-one label matching accuracy (Hungarian on the contingency table)."""
    table = contingency(pred, truth)
    k = max(table.shape)
    padded = np.zeros((k, k), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return float(padded[rows, cols].sum() / table.sum())


def cluster_counts(pred, K_expected):
    labels = np.asarray(getattr(pred, "labels", pred)).ravel()
    _, counts = np.unique(labels, return_counts=True)
    if counts.size < K_expected:
        counts = np.concatenate([counts, np.zeros(K_expected - counts.size, dtype=counts.dtype)])
    return counts


def imbalance_ratio(pred, K_expected):
    """min/max cluster size, absent clusters counting as empty."""
    counts = cluster_counts(pred, K_expected)
    if counts.max() == 0:
        return 0.0
    return float(counts.min() / counts.max())


def std_uniformity(z):
    """Mean per-dimension std of the l2-normalized rows; ~1/sqrt(d) when uniform."""
    z = l2_normalize_rows(z)
    if z.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    return float(np.mean(np.std(z, axis=0)))


def knn_predict(queries, reference_feats, reference_labels, k=5):
    """Cosine k-NN majority vote; vote ties go to the smaller label."""
    if np.size(reference_feats) == 0:
        raise EmptyReference("reference set is empty")
    ref = l2_normalize_rows(reference_feats)
    q = l2_normalize_rows(queries)
    labels = np.asarray(getattr(reference_labels, "labels", reference_labels)).ravel()
    k = min(int(k), ref.shape[0])
    sims = q @ ref.T
    idx = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    n_labels = int(labels.max()) + 1
    votes = np.zeros((q.shape[0], n_labels), dtype=np.int64)
    np.add.at(votes, (np.repeat(np.arange(q.shape[0]), k), labels[idx].ravel()), 1)
    return np.argmax(votes, axis=1)


def preservation_rate(inputs, mixed, reference_feats, reference_labels, k=5):
    """Fraction of (input, mixed) pairs that k-NN classifies into the same class."""
    inputs, mixed = as_matrix(inputs), as_matrix(mixed)
    if inputs.shape[0] != mixed.shape[0]:
        raise LengthMismatch("inputs and mixed rows differ in count")
    if np.size(reference_feats) == 0:
        raise EmptyReference("reference set is empty")
    a = knn_predict(inputs, reference_feats, reference_labels, k)
    b = knn_predict(mixed, reference_feats, reference_labels, k)
    return float(np.mean(a == b))


def evaluate(truth, pred, K_expected=None):
    """All partition metrics as a dict."""
    pred_p = Partition.of(pred)
    K_expected = K_expected or pred_p.K
    return {
        "nmi": nmi(truth, pred),
        "ami": ami(truth, pred),
        "ari": ari(truth, pred),
        "acc": clustering_accuracy(truth, pred),
        "imbalance_ratio": imbalance_ratio(pred, K_expected),
    }


@dataclass
class MetricsReport:
    """One epoch's diagnostics. Field order is the CSV column order."""
    epoch: int
    nmi: float = float("nan")
    ami: float = float("nan")
    ari: float = float("nan")
    acc: float = float("nan")
    imbalance_ratio: float = float("nan")
    std_uniformity: float = float("nan")
    loss_pip: float = float("nan")
    loss_cdr: float = float("nan")
    lr: float = float("nan")
    kmeans_runs: int = 0

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def to_row(self):
        return [repr(float(v)) if isinstance(v, float) else str(v) for v in asdict(self).values()]

    def to_json(self):
        return json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v)
                           for k, v in asdict(self).items()})


def write_reports_csv(path, reports):
    with open(path, "w", newline="") as fh:
        fh.write(reports_csv_text(reports))


def reports_csv_text(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MetricsReport.columns())
    for r in reports:
        w.writerow(r.to_row())
    return buf.getvalue()
