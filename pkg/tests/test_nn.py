import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from omad.nn import (
    PROB_FLOOR,
    Adam,
    Conv1D,
    Dense,
    Dropout,
    LayerKind,
    LayerSpec,
    ShapeMismatch,
    StaleCache,
    TrainConfig,
    adam_step,
    artifact_mlp,
    build,
    cnn,
    cross_entropy,
    main_mlp,
    mlp_specs,
    one_hot,
    predict,
    softmax,
    train,
)

K = LayerKind


def _loss(net, x, onehot, dropout_seed):
    probs, _ = net.forward(x, "train", np.random.default_rng(dropout_seed))
    return cross_entropy(probs, onehot)


def _check_gradients(net, x, labels, seed, eps=1e-5, samples=12):
    """Central differences against backprop on a random subset of parameters (float64)."""
    # non-zero biases keep pre-activations off the ReLU kink at exactly 0
    for layer in net.weighted_layers():
        layer.b[:] = np.random.default_rng(seed + 2).normal(0, 0.1, layer.b.shape)
    onehot = one_hot(labels, net.output_shape[0], dtype=np.float64)
    probs, cache = net.forward(x, "train", np.random.default_rng(seed))
    grads = net.backward(cache, onehot)
    pick = np.random.default_rng(seed + 1)
    worst = 0.0
    for i, layer in enumerate(net.layers):
        if not layer.weighted:
            continue
        for name, arr in layer.params().items():
            flat = arr.reshape(-1)
            for j in pick.choice(flat.size, min(samples, flat.size), replace=False):
                if name == "W" and layer.mask.reshape(-1)[j] == 0:
                    assert grads[i][name].reshape(-1)[j] == 0
                    continue
                old = flat[j]
                flat[j] = old + eps
                up = _loss(net, x, onehot, seed)
                flat[j] = old - eps
                down = _loss(net, x, onehot, seed)
                flat[j] = old
                num = (up - down) / (2 * eps)
                ana = grads[i][name].reshape(-1)[j]
                worst = max(worst, abs(num - ana) / max(1e-4, abs(num) + abs(ana)))
    return worst


@pytest.mark.parametrize("seed", range(20))
def test_mlp_gradients(seed):
    rng = np.random.default_rng(seed)
    specs = mlp_specs(6, (8, 5), dropout=0.3)
    net = build(specs, (6,), seed=seed, dtype=np.float64)
    mask = rng.random(net.weighted_layers()[0].W.shape) > 0.3
    net.weighted_layers()[0].set_mask(mask)
    x = rng.normal(size=(7, 6))
    assert _check_gradients(net, x, rng.integers(0, 2, 7), seed) < 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_cnn_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    net = cnn(3, 9, seed=seed, conv=(4, 5), hidden=6).astype(np.float64)
    net.weighted_layers()[1].set_mask(rng.random((5, 4, 3)) > 0.5)
    x = rng.normal(size=(4, 3, 9))
    assert _check_gradients(net, x, rng.integers(0, 2, 4), seed) < 1e-5


def _conv_oracle(x, W, b):
    # direct 'same' correlation, loops only
    B, C, L = x.shape
    O, _, k = W.shape
    p = k // 2
    out = np.zeros((B, O, L))
    for n in range(B):
        for o in range(O):
            for t in range(L):
                s = b[o]
                for c in range(C):
                    for j in range(k):
                        src = t + j - p
                        if 0 <= src < L:
                            s += W[o, c, j] * x[n, c, src]
                out[n, o, t] = s
    return out


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    layer = Conv1D(3, 4, 5, rng=rng, dtype=np.float64)
    layer.b = rng.normal(size=4)
    x = rng.normal(size=(2, 3, 11))
    y, _ = layer.forward(x, False, None)
    np.testing.assert_allclose(y, _conv_oracle(x, layer.W, layer.b), atol=1e-12)


@given(arrays(np.float64, (3, 4), elements=st.floats(-700, 700)), st.floats(-50, 50))
def test_softmax_properties(z, shift):
    p = softmax(z)
    assert np.all(np.isfinite(p)) and np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(z + shift), p, atol=1e-12)


def test_softmax_extremes():
    p = softmax(np.array([[1000.0, -1000.0]]))
    assert p.tolist() == [[1.0, 0.0]]


def test_cross_entropy_values():
    y = one_hot([0, 1])
    assert cross_entropy(np.array([[0.5, 0.5], [0.5, 0.5]]), y) == pytest.approx(math.log(2))
    assert cross_entropy(np.array([[0.0, 1.0], [1.0, 0.0]]), y) == pytest.approx(-math.log(PROB_FLOOR))
    assert cross_entropy(np.array([[1.0, 0.0], [0.0, 1.0]]), y) == 0.0


def test_adam_hand_computed():
    params = {"w": np.array([1.0])}
    state = {}
    adam_step(params, {"w": np.array([0.5])}, state, lr=0.1, t=1)
    # the first bias-corrected step has magnitude lr regardless of gradient scale
    assert params["w"][0] == pytest.approx(0.9, abs=1e-8)
    w1 = float(params["w"][0])
    adam_step(params, {"w": np.array([-1.0])}, state, lr=0.1, t=2)
    m = 0.9 * 0.05 + 0.1 * -1.0
    v = 0.999 * 0.00025 + 0.001 * 1.0
    expected = w1 - 0.1 * (m / (1 - 0.9**2)) / (math.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert params["w"][0] == pytest.approx(expected, abs=1e-12)
    assert params["w"][0] == pytest.approx(0.93661, abs=1e-5)
    with pytest.raises(ValueError):
        adam_step(params, {"w": np.array([1.0])}, state, lr=0.1, t=0)


def test_adam_respects_masks():
    params = {"w": np.ones(4)}
    adam_step(params, {"w": np.ones(4)}, {}, lr=0.1, t=1, masks={"w": np.array([1, 0, 1, 0.0])})
    np.testing.assert_allclose(params["w"], [0.9, 1.0, 0.9, 1.0])


def _blobs(seed, n=200, d=10):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, d)) + 1.5 * (2 * y[:, None] - 1) * (np.arange(d) < 3)
    return x.astype(np.float32), y


def test_training_learns_and_keeps_pruned_weights_at_zero():
    x, y = _blobs(0)
    net = artifact_mlp(10, seed=0)
    first = net.weighted_layers()[0]
    mask = np.random.default_rng(0).random(first.W.shape) > 0.5
    first.set_mask(mask)
    res = train(net, x, y, TrainConfig(epochs=20, batch_size=32, dropout=0.0, seed=0))
    assert res.history[-1].loss < res.history[0].loss
    assert (predict(net, x)[0] == y).mean() > 0.9
    assert np.all(first.W[~mask] == 0)
    assert res.steps == 20 * math.ceil(200 / 32)


def test_training_is_deterministic():
    x, y = _blobs(1)
    a = train(main_mlp(10, seed=3, hidden=(16, 8)), x, y, TrainConfig(epochs=3, seed=5)).net
    b = train(main_mlp(10, seed=3, hidden=(16, 8)), x, y, TrainConfig(epochs=3, seed=5)).net
    for la, lb in zip(a.weighted_layers(), b.weighted_layers()):
        np.testing.assert_array_equal(la.W, lb.W)


def test_dropout_is_inverted_and_identity_at_eval():
    d = Dropout(0.4)
    x = np.ones((2000, 50))
    y, keep = d.forward(x, True, np.random.default_rng(0))
    assert set(np.unique(y)) <= {0.0, 1 / 0.6}
    assert abs(y.mean() - 1) < 0.02
    assert d.forward(x, False, None)[0] is x
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_architectures():
    mlp = main_mlp(64 * 256)
    dense = [layer.W.shape for layer in mlp.weighted_layers()]
    assert dense == [(16384, 512), (512, 256), (256, 128), (128, 64), (64, 32), (32, 16), (16, 2)]
    assert sum(layer.kind is K.DROPOUT for layer in mlp.layers) == 2
    assert len(artifact_mlp().weighted_layers()) == 3
    c = cnn(64, 256)
    assert c.output_shape == (2,)
    assert [layer.kind for layer in c.layers][:4] == [K.CONV1D, K.RELU, K.CONV1D, K.RELU]


def test_errors():
    net = artifact_mlp(10)
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((2, 11)))
    _, cache = net.forward(np.zeros((2, 10)))
    with pytest.raises(StaleCache):
        net.backward(cache, one_hot([0, 1]))
    _, cache = net.forward(np.zeros((2, 10)), "train", np.random.default_rng(0))
    net.bump()
    with pytest.raises(StaleCache):
        net.backward(cache, one_hot([0, 1]))
    with pytest.raises(ShapeMismatch):
        Dense(3, 2).set_mask(np.ones((2, 3)))
    with pytest.raises(ValueError):
        Conv1D(1, 1, 4)
    with pytest.raises(ValueError):
        LayerSpec(K.DROPOUT, (), 1.5)
    with pytest.raises(ValueError):
        train(net, np.zeros((4, 10)), np.zeros(4, dtype=int))


def test_predict_ties_go_to_class_zero():
    net = artifact_mlp(4)
    for layer in net.weighted_layers():
        layer.W[:] = 0
    labels, probs = predict(net, np.ones((3, 4)))
    assert labels.tolist() == [0, 0, 0]
    np.testing.assert_allclose(probs, 0.5)
