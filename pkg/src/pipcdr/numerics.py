"""Dense primitives on the unit hypersphere and the seeded RNG.

Matrices are plain ``float64`` numpy arrays. The random generator is
numpy's ``PCG64`` bit generator; child streams are derived with
``SeedSequence(seed, spawn_key=(stream,))`` so parallel work stays
reproducible regardless of scheduling.
"""
import numpy as np

from .errors import DimMismatch, ZeroRow

ZERO_NORM = 1e-12


def make_rng(seed, stream=None):
    """Return a PCG64-backed Generator. ``stream`` selects an independent child stream."""
    if stream is None:
        ss = np.random.SeedSequence(int(seed))
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def fork_rng(rng, n):
    """Derive ``n`` child generators from ``rng`` deterministically."""
    seeds = rng.integers(0, 2**63 - 1, size=n)
    return [np.random.Generator(np.random.PCG64(int(s))) for s in seeds]


def as_matrix(x):
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise DimMismatch(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def l2_normalize_rows(m):
    m = as_matrix(m)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= ZERO_NORM):
        bad = int(np.argmax(norms <= ZERO_NORM))
        raise ZeroRow(f"row {bad} has norm <= {ZERO_NORM}")
    return m / norms[:, None]


def l2_normalize_rows_backward(x, grad_out):
    """Gradient of ``l2_normalize_rows`` at ``x`` given upstream ``grad_out``.

    For y = x/|x|:  dx = (g - y (y.g)) / |x|.
    """
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    y = x / norms
    return (grad_out - y * np.sum(y * grad_out, axis=1, keepdims=True)) / norms


def cosine_sim(u, v):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimMismatch(f"lengths differ: {u.size} vs {v.size}")
    return float(np.clip(u @ v, -1.0, 1.0))


def pairwise_cosine(m):
    m = as_matrix(m)
    s = m @ m.T
    # symmetrize away matmul rounding
    s = 0.5 * (s + s.T)
    return np.clip(s, -1.0, 1.0)


def logsumexp(a, axis=-1, mask=None):
    """Max-shifted log-sum-exp. Entries where ``mask`` is False are excluded;
    a row with nothing left yields ``-inf``."""
    a = np.asarray(a, dtype=np.float64)
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    filled = np.where(mask, a, -np.inf)
    amax = np.max(filled, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.where(mask, np.exp(filled - safe), 0.0), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def masked_softmax(a, mask, axis=-1):
    """Softmax over masked entries; rows with an empty mask return zeros."""
    a = np.asarray(a, dtype=np.float64)
    filled = np.where(mask, a, -np.inf)
    amax = np.max(filled, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    e = np.where(mask, np.exp(filled - amax), 0.0)
    z = np.sum(e, axis=axis, keepdims=True)
    return np.divide(e, z, out=np.zeros_like(e), where=z > 0)


def save_matrix_csv(path, m):
    """Headerless CSV with round-trip precision."""
    np.savetxt(path, as_matrix(m), delimiter=",", fmt="%.17g")


def load_matrix_csv(path):
    return as_matrix(np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2))
