import numpy as np
import pytest

from pipcdr.errors import DimMismatch, NoForwardState
from pipcdr.networks import (Mlp, MlpSpec, NetworkStack, add_tapes, ema_update, load_checkpoint, lr_at,
                             save_checkpoint, sgd_step)

from conftest import central_diff, rel_err


def identity_layer(d):
    return Mlp(MlpSpec((d, d)), params={"W0": np.eye(d), "b0": np.zeros(d)})


def loop_forward(net, x):
    """Per-neuron scalar evaluation, no batch-standardize."""
    out = []
    L = net.spec.n_layers
    for row in x:
        h = list(row)
        for l in range(L):
            W, b = net.params[f"W{l}"], net.params[f"b{l}"]
            nxt = []
            for j in range(W.shape[1]):
                s = b[j]
                for i in range(W.shape[0]):
                    s += h[i] * W[i, j]
                nxt.append(max(s, 0.0) if l < L - 1 else s)
            h = nxt
        out.append(h)
    return np.array(out)


def test_identity_and_relu():
    net = identity_layer(3)
    x = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(net.forward(x), x)
    relu = Mlp(MlpSpec((2, 2, 2)), params={"W0": np.eye(2), "b0": np.zeros(2),
                                             "W1": np.eye(2), "b1": np.zeros(2)})
    np.testing.assert_array_equal(relu.forward([[-1.0, 2.0]]), [[0.0, 2.0]])
    with pytest.raises(DimMismatch):
        net.forward(np.ones((1, 4)))


def test_forward_matches_loop(rng):
    net = Mlp(MlpSpec((4, 5, 3)), rng)
    x = rng.standard_normal((6, 4))
    np.testing.assert_allclose(net.forward(x), loop_forward(net, x), atol=1e-12)


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((3,))


def test_backward_needs_forward(rng):
    with pytest.raises(NoForwardState):
        Mlp(MlpSpec((2, 2)), rng).backward(np.ones((1, 2)))


def test_linear_backward_is_transpose(rng):
    net = Mlp(MlpSpec((3, 2)), rng)
    net.forward(rng.standard_normal((4, 3)))
    up = rng.standard_normal((4, 2))
    gin, _ = net.backward(up)
    np.testing.assert_allclose(gin, up @ net.params["W0"].T, atol=1e-14)


def test_relu_blocks_negative_preactivation():
    net = Mlp(MlpSpec((1, 1, 1)), params={"W0": np.array([[1.0]]), "b0": np.array([0.0]),
                                          "W1": np.array([[1.0]]), "b1": np.array([0.0])})
    net.forward([[-1.0]])
    gin, tape = net.backward([[1.0]])
    assert gin[0, 0] == 0.0 and tape["W0"][0, 0] == 0.0


@pytest.mark.parametrize("norm", ["none", "batch-standardize"])
def test_parameter_gradients_fd(rng, norm):
    net = Mlp(MlpSpec((3, 5, 4, 2), normalization=norm), rng)
    x = rng.standard_normal((6, 3))
    c = rng.standard_normal((6, 2))

    def loss():
        return float(np.sum(np.sin(net.forward(x)) * c))

    y = net.forward(x)
    gin, tape = net.backward(np.cos(y) * c)
    for k, p in net.params.items():
        assert rel_err(tape[k], central_diff(loss, p)) < 1e-4, k
    assert rel_err(gin, central_diff(loss, x)) < 1e-4


def test_ema_examples(rng):
    spec = MlpSpec((2, 2))
    stack = NetworkStack.build(spec, None, rng, momentum=0.0)
    stack.online.params["W0"] += 1.0
    ema_update(stack)
    x = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(stack.online.forward(x), stack.target.forward(x))

    scalar = MlpSpec((1, 1))
    s = NetworkStack(Mlp(scalar, params={"W0": np.array([[4.0]]), "b0": np.array([4.0])}),
                     Mlp(scalar, params={"W0": np.array([[2.0]]), "b0": np.array([2.0])}), momentum=0.5)
    ema_update(s)
    assert s.target.params["W0"][0, 0] == 3.0 and s.online.params["W0"][0, 0] == 4.0


def test_ema_geometric_decay(rng):
    stack = NetworkStack.build(MlpSpec((3, 4)), None, rng, momentum=0.996)
    stack.online = Mlp(stack.online.spec, rng)
    gap0 = np.sqrt(sum(np.sum((stack.online.params[k] - stack.target.params[k]) ** 2) for k in stack.online.params))
    for _ in range(1000):
        ema_update(stack)
    gap = np.sqrt(sum(np.sum((stack.online.params[k] - stack.target.params[k]) ** 2) for k in stack.online.params))
    assert gap <= gap0 * 0.996 ** 1000 * (1 + 1e-9)
    np.testing.assert_allclose(gap, gap0 * 0.996 ** 1000, rtol=1e-9)


def test_sgd_examples(rng):
    net = Mlp(MlpSpec((1, 1)), params={"W0": np.array([[1.0]]), "b0": np.array([0.0])})
    before = {k: v.copy() for k, v in net.params.items()}
    sgd_step(net, net.zero_tape(), 0.1)
    for k in before:
        np.testing.assert_array_equal(net.params[k], before[k])
    sgd_step(net, {"W0": np.array([[2.0]]), "b0": np.array([0.0])}, 0.1)
    assert net.params["W0"][0, 0] == pytest.approx(0.8, abs=1e-15)
    with pytest.raises(ValueError):
        sgd_step(net, net.zero_tape(), 0.0)


def test_sgd_quadratic_bowl():
    net = Mlp(MlpSpec((1, 1)), params={"W0": np.array([[1.0]]), "b0": np.array([0.0])})
    for _ in range(100):
        sgd_step(net, {"W0": net.params["W0"].copy()}, 0.1)  # grad of theta^2/2
    assert net.params["W0"][0, 0] == pytest.approx(0.9 ** 100, rel=1e-12)


def test_stop_gradient_target_untouched(rng):
    stack = NetworkStack.build(MlpSpec((3, 4, 2)), MlpSpec((2, 3, 2)), rng)
    snap = {k: v.copy() for k, v in stack.target.params.items()}
    x = rng.standard_normal((5, 3))
    y = stack.online.forward(x)
    _, tape = stack.online.backward(np.ones_like(y))
    sgd_step(stack.online, tape, 0.5)
    for k in snap:
        assert np.array_equal(stack.target.params[k], snap[k])


def test_add_tapes_in_order(rng):
    t = [{"a": np.array([1.0])}, {"a": np.array([2.0])}]
    assert add_tapes(t)["a"][0] == 3.0


def test_checkpoint_roundtrip(tmp_path, rng):
    stack = NetworkStack.build(MlpSpec((3, 4, 2), normalization="batch-standardize"), MlpSpec((2, 3, 2)), rng)
    stack.step = 17
    save_checkpoint(tmp_path / "c.npz", stack, {"epoch": 3})
    back, extra = load_checkpoint(tmp_path / "c.npz")
    assert extra == {"epoch": 3} and back.step == 17 and back.online.spec == stack.online.spec
    for a, b in ((stack.online, back.online), (stack.target, back.target), (stack.predictor, back.predictor)):
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()


def test_lr_schedule_monotone_after_warmup():
    lrs = [lr_at(s, 1000, 100, 0.5) for s in range(1000)]
    assert lrs[99] == pytest.approx(0.5)
    assert all(b <= a + 1e-15 for a, b in zip(lrs[99:], lrs[100:]))
    assert all(b >= a for a, b in zip(lrs[:99], lrs[1:100]))
