"""Small fully-connected networks with hand-written backprop.

Each hidden block is Linear -> [batch-standardize] -> ReLU; the last layer is
a plain Linear map. ``NetworkStack`` bundles the online encoder, its EMA
target copy and the predictor head.
"""
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NoForwardState
from .numerics import as_matrix

BN_EPS = 1e-5


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "relu"
    normalization: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.normalization not in ("none", "batch-standardize"):
            raise ValueError(f"unsupported normalization {self.normalization!r}")

    @property
    def n_layers(self):
        return len(self.layer_widths) - 1

    def to_dict(self):
        return {"layer_widths": list(self.layer_widths), "activation": self.activation,
                "normalization": self.normalization}


class Mlp:
    def __init__(self, spec, rng=None, params=None):
        self.spec = spec
        if params is None:
            params = _init_params(spec, rng)
        self.params = params
        self._cache = None

    @property
    def in_dim(self):
        return self.spec.layer_widths[0]

    @property
    def out_dim(self):
        return self.spec.layer_widths[-1]

    def param_names(self):
        return list(self.params)

    def copy(self):
        return Mlp(self.spec, params={k: v.copy() for k, v in self.params.items()})

    def zero_tape(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x, upto=None):
        """Run the network on ``x`` and cache what backward needs.

        ``upto`` stops after that many layers (hidden blocks keep their
        activation), e.g. ``upto=n_layers - 1`` returns the encoder features
        feeding the final linear map.
        """
        x = as_matrix(x)
        if x.shape[1] != self.in_dim:
            raise DimMismatch(f"input has {x.shape[1]} columns, network expects {self.in_dim}")
        n_run = self.spec.n_layers if upto is None else int(upto)
        use_bn = self.spec.normalization == "batch-standardize"
        cache = []
        h = x
        for l in range(n_run):
            W, b = self.params[f"W{l}"], self.params[f"b{l}"]
            entry = {"inp": h}
            z = h @ W + b
            last = l == self.spec.n_layers - 1
            if not last:
                if use_bn:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    inv = 1.0 / np.sqrt(var + BN_EPS)
                    zhat = (z - mu) * inv
                    entry["zhat"], entry["inv"] = zhat, inv
                    z = zhat * self.params[f"gamma{l}"] + self.params[f"beta{l}"]
                entry["pre"] = z
                z = np.maximum(z, 0.0)
            h = z
            cache.append(entry)
        self._cache = cache
        return h

    __call__ = forward

    def backward(self, upstream):
        if self._cache is None:
            raise NoForwardState("backward called without a recorded forward pass")
        g = as_matrix(upstream)
        tape = self.zero_tape()
        for l in reversed(range(len(self._cache))):
            entry = self._cache[l]
            if "pre" in entry:
                g = g * (entry["pre"] > 0)
                if "zhat" in entry:
                    zhat, inv = entry["zhat"], entry["inv"]
                    tape[f"gamma{l}"] = np.sum(g * zhat, axis=0)
                    tape[f"beta{l}"] = np.sum(g, axis=0)
                    gz = g * self.params[f"gamma{l}"]
                    n = gz.shape[0]
                    g = inv / n * (n * gz - gz.sum(axis=0) - zhat * np.sum(gz * zhat, axis=0))
            tape[f"W{l}"] = entry["inp"].T @ g
            tape[f"b{l}"] = g.sum(axis=0)
            g = g @ self.params[f"W{l}"].T
        return g, tape


def _init_params(spec, rng):
    if rng is None:
        raise ValueError("an rng is required to initialize parameters")
    params = {}
    widths = spec.layer_widths
    for l in range(spec.n_layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        bound = 1.0 / math.sqrt(fan_in)
        params[f"W{l}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{l}"] = rng.uniform(-bound, bound, size=fan_out)
        if spec.normalization == "batch-standardize" and l < spec.n_layers - 1:
            params[f"gamma{l}"] = np.ones(fan_out)
            params[f"beta{l}"] = np.zeros(fan_out)
    return params


def forward(net, x, upto=None):
    return net.forward(x, upto=upto)


def backward(net, upstream_grad):
    return net.backward(upstream_grad)


def sgd_step(net, tape, lr):
    """In-place ``theta -= lr * grad``. Returns ``net``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for k, g in tape.items():
        net.params[k] -= lr * g
    return net


def add_tapes(tapes):
    """Sum shard tapes in the order given."""
    out = {k: v.copy() for k, v in tapes[0].items()}
    for t in tapes[1:]:
        for k, v in t.items():
            out[k] += v
    return out


@dataclass
class NetworkStack:
    online: Mlp
    target: Mlp
    predictor: Mlp = None
    momentum: float = 0.996
    step: int = 0

    @classmethod
    def build(cls, encoder_spec, predictor_spec, rng, momentum=0.996):
        online = Mlp(encoder_spec, rng)
        pred = Mlp(predictor_spec, rng) if predictor_spec is not None else None
        return cls(online=online, target=online.copy(), predictor=pred, momentum=momentum)

    def copy(self):
        return NetworkStack(self.online.copy(), self.target.copy(),
                            None if self.predictor is None else self.predictor.copy(),
                            self.momentum, self.step)


def ema_update(stack, momentum=None):
    """theta_target <- m * theta_target + (1 - m) * theta_online, in place."""
    m = stack.momentum if momentum is None else momentum
    if not 0.0 <= m < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    for k, p_online in stack.online.params.items():
        p_t = stack.target.params[k]
        p_t *= m
        p_t += (1.0 - m) * p_online
    return stack


def lr_at(step, total_steps, warmup_steps, base_lr, final_lr=0.0):
    """Linear warmup to ``base_lr`` then cosine decay to ``final_lr``."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min(max(step - warmup_steps, 0) / span, 1.0)
    return final_lr + 0.5 * (base_lr - final_lr) * (1.0 + math.cos(math.pi * progress))


def save_checkpoint(path, stack, extra=None):
    arrays = {}
    for prefix, net in (("online", stack.online), ("target", stack.target), ("predictor", stack.predictor)):
        if net is None:
            continue
        for k, v in net.params.items():
            arrays[f"{prefix}.{k}"] = v
    meta = {
        "online_spec": stack.online.spec.to_dict(),
        "predictor_spec": None if stack.predictor is None else stack.predictor.spec.to_dict(),
        "momentum": stack.momentum,
        "step": stack.step,
        "extra": extra or {},
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(path) as z:
        meta = json.loads(z["__meta__"].tobytes().decode("utf-8"))
        groups = {"online": {}, "target": {}, "predictor": {}}
        for key in z.files:
            if key == "__meta__":
                continue
            prefix, name = key.split(".", 1)
            groups[prefix][name] = z[key].copy()
    spec = MlpSpec(**meta["online_spec"])
    pspec = None if meta["predictor_spec"] is None else MlpSpec(**meta["predictor_spec"])
    stack = NetworkStack(
        online=Mlp(spec, params=groups["online"]),
        target=Mlp(spec, params=groups["target"]),
        predictor=None if pspec is None else Mlp(pspec, params=groups["predictor"]),
        momentum=meta["momentum"],
        step=meta["step"],
    )
    return stack, meta["extra"]
