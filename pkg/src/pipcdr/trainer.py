"""The alternating training loop.

Each epoch optionally refreshes spherical k-means pseudo-labels on target
features (first M-step), then runs mini-batch descent on the symmetrized
PIP + CDR objective (second M-step) with an EMA target update per step.
"""
import dataclasses
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import clustering, losses, metrics
from .data import AugmentSpec, augment
from .errors import BatchTooSmall, ConfigInvalid
from .networks import MlpSpec, NetworkStack, ema_update, lr_at, save_checkpoint, sgd_step
from .numerics import make_rng

log = logging.getLogger(__name__)

# independent RNG streams off the run seed
STREAM_INIT, STREAM_DATA, STREAM_KMEANS, STREAM_EVAL = 0, 1, 2, 3


@dataclass
class TrainConfig:
    tau: float = 0.1
    sigma: float = 0.001
    w: float = 0.91
    momentum: float = 0.996
    kmeans_every: int = 1
    K: int = 10
    warmup_epochs: int = 10
    epochs: int = 100
    batch_size: int = 64
    lr_base: float = 0.05
    predictor_lr_mult: float = 10.0
    queue_capacity: int = 0
    seed: int = 0
    feature_source: str = "projector"
    hidden_dim: int = 64
    proj_dim: int = 16
    pred_hidden_dim: int = 64
    normalization: str = "none"
    use_predictor: bool = True
    noise_std: float = 0.1
    mask_prob: float = 0.1
    scale_jitter: float = 0.1
    kmeans_n_init: int = 5
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    checkpoint_every: int = 0

    def validate(self):
        problems = []
        if not self.tau > 0:
            problems.append("tau must be > 0")
        if not self.sigma >= 0:
            problems.append("sigma must be >= 0")
        if not 0.0 <= self.w <= 1.0:
            problems.append("w must lie in [0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            problems.append("momentum must lie in [0, 1)")
        if self.kmeans_every < 1:
            problems.append("kmeans_every must be >= 1")
        if self.K < 2:
            problems.append("K must be >= 2")
        if self.batch_size < 2:
            problems.append("batch_size must be >= 2")
        if self.epochs < 0 or self.warmup_epochs < 0:
            problems.append("epochs and warmup_epochs must be >= 0")
        if self.lr_base <= 0 or self.predictor_lr_mult <= 0:
            problems.append("learning rates must be > 0")
        if self.queue_capacity < 0:
            problems.append("queue_capacity must be >= 0")
        if self.feature_source not in ("encoder", "projector"):
            problems.append("feature_source must be 'encoder' or 'projector'")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self

    @property
    def lr(self):
        return self.lr_base * self.batch_size / 256.0

    @property
    def augment_spec(self):
        return AugmentSpec(self.noise_std, self.mask_prob, self.scale_jitter)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class TrainState:
    stack: NetworkStack
    pseudo: clustering.PseudoLabeling = None
    queue: clustering.MemoryQueue = None
    epoch: int = 0
    step: int = 0
    rng: np.random.Generator = None
    kmeans_rng: np.random.Generator = None
    history: list = field(default_factory=list)
    kmeans_epochs: list = field(default_factory=list)
    labels: np.ndarray = None


def _unit(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(n, 1e-12)


def init_state(in_dim, cfg):
    cfg.validate()
    rng = make_rng(cfg.seed, STREAM_INIT)
    enc = MlpSpec((in_dim, cfg.hidden_dim, cfg.hidden_dim, cfg.proj_dim), normalization=cfg.normalization)
    pred = MlpSpec((cfg.proj_dim, cfg.pred_hidden_dim, cfg.proj_dim)) if cfg.use_predictor else None
    stack = NetworkStack.build(enc, pred, rng, momentum=cfg.momentum)
    return TrainState(stack=stack, queue=clustering.MemoryQueue(cfg.queue_capacity),
                      rng=make_rng(cfg.seed, STREAM_DATA), kmeans_rng=make_rng(cfg.seed, STREAM_KMEANS))


def target_features(stack, x, source="projector"):
    """Unit-norm target-network features from the encoder or projector output."""
    net = stack.target
    upto = net.spec.n_layers - 1 if source == "encoder" else None
    return _unit(net.forward(x, upto=upto))


def online_embeddings(stack, x):
    return _unit(stack.online.forward(x))


def is_kmeans_epoch(epoch, cfg):
    return epoch >= cfg.warmup_epochs and (epoch - cfg.warmup_epochs) % cfg.kmeans_every == 0


def count_kmeans_epochs(cfg):
    if cfg.epochs <= cfg.warmup_epochs:
        return 0
    return math.ceil((cfg.epochs - cfg.warmup_epochs) / cfg.kmeans_every)


def first_m_step(state, data, cfg):
    """Refresh pseudo-labels by spherical k-means on target features of the whole dataset."""
    feats = target_features(state.stack, data.features, cfg.feature_source)
    pool = clustering.cluster_pool(feats, state.queue) if len(state.queue) else feats
    pseudo = clustering.spherical_kmeans(pool, cfg.K, state.kmeans_rng, max_iter=cfg.kmeans_max_iter,
                                         tol=cfg.kmeans_tol, n_init=cfg.kmeans_n_init)
    pseudo.assign = pseudo.assign[: data.n]
    state.pseudo = pseudo
    state.kmeans_epochs.append(state.epoch)
    return state


def _direction(predictor, query, key_pos, key_same, labels, cfg, use_cdr):
    pip = losses.pip_loss(predictor, query, key_pos, cfg.sigma)
    if not use_cdr:
        return pip, None
    cdr = losses.cdr_surrogate(losses.ViewPair(query, key_pos, key_same), labels, cfg.tau)
    return losses.combined_loss(pip, cdr, cfg.w), cdr


def symmetric_objective(stack, xa, xb, labels, cfg):
    """Symmetrized loss of one view pair and its parameter gradients.

    ``labels`` are the batch pseudo-labels, or None to train on PIP alone.
    Returns ``(LossOut, online_tape, predictor_tape)``; nothing is updated.
    """
    n = xa.shape[0]
    use_cdr = labels is not None
    raw = stack.online.forward(np.vstack([xa, xb]))
    z = _unit(raw)
    za, zb = z[:n], z[n:]
    t = _unit(stack.target.forward(np.vstack([xa, xb])))
    ta, tb = t[:n], t[n:]

    out_ab, cdr_ab = _direction(stack.predictor, za, tb, ta, labels, cfg, use_cdr)
    out_ba, cdr_ba = _direction(stack.predictor, zb, ta, tb, labels, cfg, use_cdr)

    grad_z = 0.5 * np.vstack([out_ab.grad_za, out_ba.grad_za])
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    grad_raw = (grad_z - z * np.sum(z * grad_z, axis=1, keepdims=True)) / np.maximum(norms, 1e-12)
    _, tape = stack.online.backward(grad_raw)
    ptape = None
    if stack.predictor is not None:
        ptape = {k: 0.5 * (out_ab.grad_aux[k] + out_ba.grad_aux[k]) for k in out_ab.grad_aux}

    if use_cdr:
        pip_v = 0.5 * (out_ab.terms["pip"] + out_ba.terms["pip"])
        cdr_v = 0.5 * (cdr_ab.value + cdr_ba.value)
    else:
        pip_v, cdr_v = 0.5 * (out_ab.value + out_ba.value), 0.0
    total = losses.LossOut(value=0.5 * (out_ab.value + out_ba.value), grad_za=grad_z[:n],
                           terms={"pip": pip_v, "cdr": cdr_v})
    return total, tape, ptape


def second_m_step(state, x, cfg, lr=None, views=None):
    """One symmetrized descent step on a mini-batch ``x``.

    Returns ``(state, LossOut)``; the LossOut value is the symmetrized total
    and ``terms`` carries the pip/cdr components (cdr is 0 before warmup ends).
    """
    if x.shape[0] < 2:
        raise BatchTooSmall("a training batch needs at least 2 instances")
    stack = state.stack
    if views is None:
        spec = cfg.augment_spec
        views = (augment(x, spec, state.rng), augment(x, spec, state.rng))
    use_cdr = state.epoch >= cfg.warmup_epochs and state.pseudo is not None

    labels = None
    if use_cdr or state.queue.capacity:
        clean = target_features(stack, x, cfg.feature_source)
        if use_cdr:
            labels = clustering.assign_batch(state.pseudo, clean)
        if state.queue.capacity:
            clustering.queue_push(state.queue, clean)

    total, tape, ptape = symmetric_objective(stack, views[0], views[1], labels, cfg)
    if lr is None:
        lr = cfg.lr
    sgd_step(stack.online, tape, lr)
    if ptape is not None:
        sgd_step(stack.predictor, ptape, lr * cfg.predictor_lr_mult)
    ema_update(stack)
    stack.step += 1
    state.step += 1
    return state, total


def predict(state, data, cfg):
    """Cluster assignment of every row: current pseudo-label centroids, or an
    evaluation k-means while no pseudo-labels exist yet."""
    feats = target_features(state.stack, data.features, cfg.feature_source)
    if state.pseudo is not None:
        return clustering.assign_batch(state.pseudo, feats)
    rng = make_rng(cfg.seed, STREAM_EVAL)
    return clustering.spherical_kmeans(feats, cfg.K, rng, max_iter=cfg.kmeans_max_iter,
                                       tol=cfg.kmeans_tol, n_init=1).assign


def epoch_report(state, data, cfg, pip, cdr, lr):
    pred = predict(state, data, cfg)
    state.labels = pred
    z = target_features(state.stack, data.features, "projector")
    rep = metrics.MetricsReport(
        epoch=state.epoch,
        imbalance_ratio=metrics.imbalance_ratio(pred, cfg.K),
        std_uniformity=metrics.std_uniformity(z),
        loss_pip=float(pip), loss_cdr=float(cdr), lr=float(lr),
        kmeans_runs=len(state.kmeans_epochs),
    )
    if data.labels is not None:
        m = metrics.evaluate(data.labels, pred, cfg.K)
        rep.nmi, rep.ami, rep.ari, rep.acc = m["nmi"], m["ami"], m["ari"], m["acc"]
    return rep


def batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if idx.size >= 2:
            yield idx


def steps_per_epoch(n, batch_size):
    full, rest = divmod(n, batch_size)
    return full + (1 if rest >= 2 else 0)


def train(data, cfg, state=None, on_epoch_end=None, checkpoint_dir=None, stop_epoch=None):
    """Run ``cfg.epochs`` epochs; returns ``(state, history)``.

    ``on_epoch_end(state, report)`` is called after every epoch's report.
    ``stop_epoch`` halts early (e.g. a mid-training checkpoint) without
    changing the learning-rate schedule; a later call with ``state`` resumes.
    """
    cfg.validate()
    if data.n < cfg.K:
        raise ConfigInvalid(f"dataset has {data.n} rows but K={cfg.K}")
    if state is None:
        state = init_state(data.dim, cfg)
    spe = steps_per_epoch(data.n, cfg.batch_size)
    total_steps = spe * cfg.epochs
    warmup_steps = spe * cfg.warmup_epochs
    x_all = data.features
    end = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    while state.epoch < end:
        t0 = time.perf_counter()
        if is_kmeans_epoch(state.epoch, cfg):
            first_m_step(state, data, cfg)
        pip_sum = cdr_sum = 0.0
        n_steps = 0
        lr = cfg.lr
        for idx in batches(data.n, cfg.batch_size, state.rng):
            lr = lr_at(state.step, total_steps, warmup_steps, cfg.lr)
            state, out = second_m_step(state, x_all[idx], cfg, lr=lr)
            pip_sum += out.terms["pip"]
            cdr_sum += out.terms["cdr"]
            n_steps += 1
        n_steps = max(n_steps, 1)
        rep = epoch_report(state, data, cfg, pip_sum / n_steps, cdr_sum / n_steps, lr)
        state.history.append(rep)
        log.info("epoch %d acc=%.4f nmi=%.4f std=%.4f pip=%.4f cdr=%.4f (%.2fs)", rep.epoch, rep.acc,
                 rep.nmi, rep.std_uniformity, rep.loss_pip, rep.loss_cdr, time.perf_counter() - t0)
        state.epoch += 1
        if on_epoch_end is not None:
            on_epoch_end(state, rep)
        if checkpoint_dir and cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(checkpoint_dir, f"checkpoint_{state.epoch:05d}.npz"),
                            state.stack, {"epoch": state.epoch})
    if state.labels is None and data.n:
        state.labels = predict(state, data, cfg)
    return state, state.history


def sampled_neighbors(stack, x, sigma, batch_size, rng):
    """Online embeddings of ``x`` and their PIP-interpolated neighbours,
    with neighbours searched inside shuffled mini-batches as during training."""
    z = online_embeddings(stack, x)
    mixed = z.copy()  # a dropped singleton batch keeps its own embedding
    for idx in batches(x.shape[0], batch_size, rng):
        mixed[idx] = losses.pip_mix(z[idx], sigma)
    return z, mixed
