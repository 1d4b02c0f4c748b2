"""Losses on unit-norm embedding batches.

Every loss returns a :class:`LossOut` holding the batch-mean value and the
gradient with respect to the online query embeddings ``za``. Target-side
arrays (``zb_target``, ``za_target``) are read-only constants. When
``za_target`` is omitted the online batch ``za`` doubles as the view-a key
bank, and the gradient then also includes the key path.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, DimMismatch, SingleCluster
from .numerics import as_matrix, l2_normalize_rows, l2_normalize_rows_backward, logsumexp, masked_softmax


@dataclass
class ViewPair:
    za: np.ndarray
    zb_target: np.ndarray
    za_target: np.ndarray = None

    def __post_init__(self):
        self.za = as_matrix(self.za)
        self.zb_target = as_matrix(self.zb_target)
        if self.za_target is not None:
            self.za_target = as_matrix(self.za_target)
        for other in (self.zb_target, self.za_target):
            if other is not None and other.shape != self.za.shape:
                raise DimMismatch(f"view shapes differ: {self.za.shape} vs {other.shape}")

    @property
    def n(self):
        return self.za.shape[0]

    def keys_a(self):
        return self.za if self.za_target is None else self.za_target

    def swapped(self, zb_online, za_target):
        """The (b -> a) direction: queries from view b, keys from the targets."""
        return ViewPair(zb_online, za_target, self.zb_target)


@dataclass
class LossOut:
    value: float
    grad_za: np.ndarray
    grad_aux: dict = None
    terms: dict = field(default_factory=dict)
    per_instance: np.ndarray = None


def _contrastive(pair, tau, pos_weight, denom_mask):
    """Shared core for the softmax-style losses.

    ``pos_weight`` (N x 2N) weights the logits pulled together; ``denom_mask``
    (N x 2N) selects the log-sum-exp support. Columns [0, N) index view-a keys,
    [N, 2N) view-b keys. Returns per-instance alignment/uniformity terms and the
    gradient of the batch mean w.r.t. ``za``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    za, ka, kb = pair.za, pair.keys_a(), pair.zb_target
    n = za.shape[0]
    logits = np.concatenate([za @ ka.T, za @ kb.T], axis=1) / tau
    align = -np.sum(pos_weight * logits, axis=1)
    uniform = logsumexp(logits, axis=1, mask=denom_mask)
    has_support = np.any(denom_mask, axis=1)
    uniform = np.where(has_support, uniform, 0.0)
    probs = masked_softmax(logits, denom_mask, axis=1)
    g_logits = (probs - pos_weight) / n
    grad = (g_logits[:, :n] @ ka + g_logits[:, n:] @ kb) / tau
    if pair.za_target is None:
        grad = grad + g_logits[:, :n].T @ za / tau
    return align, uniform, grad


def _check_batch(pair):
    if pair.n < 2:
        raise BatchTooSmall(f"need at least 2 instances, got {pair.n}")


def _pack(align, uniform, grad):
    per = align + uniform
    return LossOut(
        value=float(np.mean(per)),
        grad_za=grad,
        terms={"alignment": float(np.mean(align)), "uniformity": float(np.mean(uniform))},
        per_instance=per,
    )


def _positive_weights(labels):
    """Weight matrix of the cluster-alignment numerator.

    Row i puts 1/(2|p(i)|-1) on its own view-b key and on both view keys of
    every other member of its class.
    """
    labels = np.asarray(labels)
    n = labels.size
    same = labels[:, None] == labels[None, :]
    size = same.sum(axis=1)
    denom = (2 * size - 1).astype(np.float64)
    wa = same & ~np.eye(n, dtype=bool)
    wb = same
    return np.concatenate([wa, wb], axis=1) / denom[:, None], same


def info_nce(pair, tau):
    _check_batch(pair)
    n = pair.n
    eye = np.eye(n, dtype=bool)
    pos = np.concatenate([np.zeros((n, n)), np.eye(n)], axis=1)
    mask = np.concatenate([~eye, np.ones((n, n), dtype=bool)], axis=1)
    return _pack(*_contrastive(pair, tau, pos, mask))


def decoupled_info_nce(pair, tau):
    _check_batch(pair)
    n = pair.n
    eye = np.eye(n, dtype=bool)
    pos = np.concatenate([np.zeros((n, n)), np.eye(n)], axis=1)
    mask = np.concatenate([~eye, ~eye], axis=1)
    return _pack(*_contrastive(pair, tau, pos, mask))


def supervised_contrastive(pair, labels, tau):
    _check_batch(pair)
    labels = np.asarray(labels)
    if labels.shape != (pair.n,):
        raise DimMismatch("one label per instance required")
    if np.unique(labels).size < 2:
        raise SingleCluster("all instances share one label")
    n = pair.n
    eye = np.eye(n, dtype=bool)
    pos, _ = _positive_weights(labels)
    mask = np.concatenate([~eye, np.ones((n, n), dtype=bool)], axis=1)
    return _pack(*_contrastive(pair, tau, pos, mask))


def cdr_surrogate(pair, pseudo, tau):
    """Cluster dispersion regularizer with pseudo-label positives.

    ``pseudo`` is either a per-instance label array or an object carrying an
    ``assign`` array. Instances whose cluster spans the whole batch have no
    negatives and contribute their alignment term only.
    """
    _check_batch(pair)
    labels = np.asarray(getattr(pseudo, "assign", pseudo))
    if labels.shape != (pair.n,):
        raise DimMismatch("pseudo-labels must cover the batch")
    pos, same = _positive_weights(labels)
    mask = np.concatenate([~same, ~same], axis=1)
    return _pack(*_contrastive(pair, tau, pos, mask))


def alignment_byol(pred_out, zb_target):
    p = as_matrix(pred_out)
    z = as_matrix(zb_target)
    if p.shape != z.shape:
        raise DimMismatch(f"shapes differ: {p.shape} vs {z.shape}")
    diff = p - z
    per = np.sum(diff * diff, axis=1)
    return LossOut(value=float(per.mean()), grad_za=2.0 * diff / p.shape[0], per_instance=per)


def nearest_neighbors(za):
    """Index of each row's most cosine-similar other row; ties go to the smaller index."""
    za = as_matrix(za)
    if za.shape[0] < 2:
        raise BatchTooSmall("nearest neighbour needs at least 2 rows")
    s = za @ za.T
    np.fill_diagonal(s, -np.inf)
    return np.argmax(s, axis=1)


def nearest_neighbor_index(za, i):
    za = as_matrix(za)
    if za.shape[0] < 2:
        raise BatchTooSmall("nearest neighbour needs at least 2 rows")
    s = za @ za[i]
    s[i] = -np.inf
    return int(np.argmax(s))


def pip_mix(za, sigma, nn=None):
    """v_i = za_i + sigma * (za_nn(i) - za_i). Not renormalized."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    za = as_matrix(za)
    if nn is None:
        nn = nearest_neighbors(za)
    return (1.0 - sigma) * za + sigma * za[nn]


def psa_mix(za, sigma, rng):
    """Gaussian positive sampling baseline: v_i = za_i + sigma * eps_i."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    za = as_matrix(za)
    return za + sigma * rng.standard_normal(za.shape)


def pip_loss(predictor, za, zb_target, sigma, nn=None):
    """Mean ||normalize(g(v_i)) - zb_i||^2 with v from :func:`pip_mix`.

    ``predictor`` is an Mlp, a NetworkStack (its predictor is used) or None
    for the identity map. The neighbour indices are constants of the batch.
    ``grad_aux`` holds the predictor's parameter gradients.
    """
    predictor = getattr(predictor, "predictor", predictor)
    za = as_matrix(za)
    zb = as_matrix(zb_target)
    if za.shape != zb.shape:
        raise DimMismatch(f"shapes differ: {za.shape} vs {zb.shape}")
    if nn is None:
        nn = nearest_neighbors(za)
    v = pip_mix(za, sigma, nn)
    p = v if predictor is None else predictor.forward(v)
    q = l2_normalize_rows(p)
    out = alignment_byol(q, zb)
    dp = l2_normalize_rows_backward(p, out.grad_za)
    if predictor is None:
        dv, tape = dp, None
    else:
        dv, tape = predictor.backward(dp)
    grad = (1.0 - sigma) * dv
    np.add.at(grad, nn, sigma * dv)
    out.grad_za = grad
    out.grad_aux = tape
    return out


def combined_loss(pip, cdr, w):
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    aux = None
    if pip.grad_aux is not None:
        aux = {k: w * v for k, v in pip.grad_aux.items()}
    return LossOut(
        value=w * pip.value + (1.0 - w) * cdr.value,
        grad_za=w * pip.grad_za + (1.0 - w) * cdr.grad_za,
        grad_aux=aux,
        terms={"pip": pip.value, "cdr": cdr.value},
    )
