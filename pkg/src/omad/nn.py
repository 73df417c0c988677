"""From-scratch numpy networks: dense and 1-D conv layers, dropout, softmax/CE, Adam.

Weight layouts: Dense ``W[in, out]``; Conv1D ``W[out_ch, in_ch, k]`` with
stride 1 and "same" zero padding. Every weighted layer carries a binary mask of
the weight's shape; the stored weight is always already multiplied by it, and
gradients and Adam updates are gated by it so pruned weights stay exactly zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)


class ShapeMismatch(ValueError):
    pass


class StaleCache(RuntimeError):
    pass


class Diverged(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class LayerKind(Enum):
    DENSE = 0
    CONV1D = 1
    RELU = 2
    DROPOUT = 3
    SOFTMAX = 4
    FLATTEN = 5


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    dims: tuple[int, ...] = ()
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.kind is LayerKind.DROPOUT and not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")


class Layer:
    kind: LayerKind
    weighted = False

    def spec(self) -> LayerSpec:
        return LayerSpec(self.kind)

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x, train: bool, rng):
        raise NotImplementedError

    def backward(self, g, cache):
        """Return (grad wrt input, {param name: grad})."""
        raise NotImplementedError

    def astype(self, dtype):
        return self


class WeightedLayer(Layer):
    weighted = True
    W: np.ndarray
    b: np.ndarray
    mask: np.ndarray

    def set_mask(self, mask: np.ndarray) -> None:
        mask = np.asarray(mask)
        if mask.shape != self.W.shape:
            raise ShapeMismatch(f"mask {mask.shape} does not match weight {self.W.shape}")
        self.mask = mask.astype(self.W.dtype)
        # assignment rather than multiplication, so pruned slots hold +0.0 and never -0.0
        self.W[self.mask == 0] = 0

    @property
    def sparsity(self) -> float:
        return 1.0 - float(self.mask.sum()) / self.mask.size

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def astype(self, dtype):
        self.W = self.W.astype(dtype)
        self.b = self.b.astype(dtype)
        self.mask = self.mask.astype(dtype)
        return self


class Dense(WeightedLayer):
    kind = LayerKind.DENSE

    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float32):
        self.n_in, self.n_out = int(n_in), int(n_out)
        rng = rng if rng is not None else np.random.default_rng(0)
        lim = math.sqrt(6.0 / self.n_in)
        self.W = rng.uniform(-lim, lim, (self.n_in, self.n_out)).astype(dtype)
        self.b = np.zeros(self.n_out, dtype=dtype)
        self.mask = np.ones_like(self.W)

    def spec(self):
        return LayerSpec(self.kind, (self.n_in, self.n_out))

    def out_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ShapeMismatch(f"Dense({self.n_in}) fed {in_shape}")
        return (self.n_out,)

    def forward(self, x, train, rng):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"Dense expects (batch, {self.n_in}), got {x.shape}")
        return x @ self.W + self.b, x

    def backward(self, g, x):
        dW = (x.T @ g) * self.mask
        return g @ self.W.T, {"W": dW, "b": g.sum(axis=0)}


class Conv1D(WeightedLayer):
    kind = LayerKind.CONV1D

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, rng=None, dtype=np.float32):
        if kernel % 2 != 1:
            raise ValueError("'same' padding needs an odd kernel length")
        self.in_channels, self.out_channels, self.kernel = int(in_channels), int(out_channels), int(kernel)
        rng = rng if rng is not None else np.random.default_rng(0)
        lim = math.sqrt(6.0 / (self.in_channels * self.kernel))
        self.W = rng.uniform(-lim, lim, (self.out_channels, self.in_channels, self.kernel)).astype(dtype)
        self.b = np.zeros(self.out_channels, dtype=dtype)
        self.mask = np.ones_like(self.W)

    def spec(self):
        return LayerSpec(self.kind, (self.in_channels, self.out_channels, self.kernel))

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[0] != self.in_channels:
            raise ShapeMismatch(f"Conv1D({self.in_channels} ch) fed {in_shape}")
        return (self.out_channels, in_shape[1])

    def im2col(self, x):
        """(B, C, L) -> (B*L, C*k) patch matrix for 'same' padding."""
        p = self.kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        cols = sliding_window_view(xp, self.kernel, axis=2)  # (B, C, L, k)
        B, C, L, k = cols.shape
        return cols.transpose(0, 2, 1, 3).reshape(B * L, C * k)

    def forward(self, x, train, rng):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"Conv1D expects (batch, {self.in_channels}, length), got {x.shape}")
        B, _, L = x.shape
        cols = self.im2col(x)
        y = cols @ self.W.reshape(self.out_channels, -1).T + self.b
        return y.reshape(B, L, self.out_channels).transpose(0, 2, 1), (cols, x.shape)

    def backward(self, g, cache):
        cols, (B, C, L) = cache
        k, p = self.kernel, self.kernel // 2
        gt = g.transpose(0, 2, 1).reshape(B * L, self.out_channels)
        dW = (gt.T @ cols).reshape(self.W.shape) * self.mask
        dcols = (gt @ self.W.reshape(self.out_channels, -1)).reshape(B, L, C, k)
        dxp = np.zeros((B, C, L + 2 * p), dtype=g.dtype)
        for j in range(k):
            dxp[:, :, j : j + L] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dxp[:, :, p : p + L], {"W": dW, "b": g.sum(axis=(0, 2))}


class ReLU(Layer):
    kind = LayerKind.RELU

    def forward(self, x, train, rng):
        return np.maximum(x, 0), x > 0

    def backward(self, g, active):
        return g * active, {}


class Dropout(Layer):
    """Inverted dropout: train-mode outputs are rescaled by 1/(1-rate)."""

    kind = LayerKind.DROPOUT

    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = float(rate)

    def spec(self):
        return LayerSpec(self.kind, (), self.rate)

    def forward(self, x, train, rng):
        if not train or self.rate == 0:
            return x, None
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        return x * keep, keep

    def backward(self, g, keep):
        return (g if keep is None else g * keep), {}


class Flatten(Layer):
    kind = LayerKind.FLATTEN

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train, rng):
        return x.reshape(len(x), -1), x.shape

    def backward(self, g, shape):
        return g.reshape(shape), {}


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    kind = LayerKind.SOFTMAX

    def forward(self, x, train, rng):
        p = softmax(x)
        return p, p

    def backward(self, g, p):
        return p * (g - (g * p).sum(axis=-1, keepdims=True)), {}


PROB_FLOOR = 1e-12


def cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Mean categorical cross-entropy with probabilities clipped to [1e-12, 1]."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_FLOOR, 1.0)
    return float(-(np.asarray(onehot) * np.log(p)).sum(axis=1).mean())


def one_hot(labels, n_classes: int = 2, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


@dataclass
class ForwardCache:
    caches: list
    train: bool
    version: int
    probs: np.ndarray


class Network:
    """Sequential stack of layers ending in Softmax."""

    def __init__(self, layers: Sequence[Layer], input_shape: tuple[int, ...], name: str = "net"):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.name = name
        self._version = 0
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        self.output_shape = shape
        if not self.layers or self.layers[-1].kind is not LayerKind.SOFTMAX:
            raise ValueError("a Network must end with a Softmax layer")

    @property
    def dtype(self):
        for layer in self.weighted_layers():
            return layer.W.dtype
        return np.dtype(np.float32)

    def weighted_layers(self) -> list[WeightedLayer]:
        return [layer for layer in self.layers if layer.weighted]

    def specs(self) -> list[LayerSpec]:
        return [layer.spec() for layer in self.layers]

    def astype(self, dtype) -> Network:
        for layer in self.layers:
            layer.astype(dtype)
        self._version += 1
        return self

    def copy(self) -> Network:
        import copy

        return copy.deepcopy(self)

    def n_weights(self) -> int:
        return sum(layer.W.size for layer in self.weighted_layers())

    def forward(self, x, mode: str = "eval", rng=None) -> tuple[np.ndarray, ForwardCache]:
        train = mode == "train"
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"{self.name} expects (batch, {self.input_shape}), got {x.shape}")
        if train and rng is None:
            rng = np.random.default_rng()
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x, train, rng)
            caches.append(c)
        return x, ForwardCache(caches, train, self._version, x)

    def logits(self, x) -> np.ndarray:
        """Pre-softmax activations in eval mode."""
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers[:-1]:
            x, _ = layer.forward(x, False, None)
        return x

    def predict_proba(self, x, batch_size: int = 1024) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if len(x) == 0:
            return np.zeros((0,) + self.output_shape, dtype=self.dtype)
        return np.concatenate(
            [self.forward(x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)]
        )

    def backward(self, cache: ForwardCache, onehot) -> list[dict[str, np.ndarray]]:
        """Gradients of mean cross-entropy, one dict per layer (empty for unweighted).

        The softmax+CE pair is differentiated jointly: dL/dz = (p - y) / batch.
        """
        if not cache.train:
            raise StaleCache("backward needs a train-mode forward pass")
        if cache.version != self._version:
            raise StaleCache("parameters changed since the forward pass")
        y = np.asarray(onehot, dtype=cache.probs.dtype)
        if y.shape != cache.probs.shape:
            raise ShapeMismatch(f"labels {y.shape} vs outputs {cache.probs.shape}")
        g = (cache.probs - y) / len(y)
        grads: list[dict] = [{}] * len(self.layers)
        for i in range(len(self.layers) - 2, -1, -1):
            g, pg = self.layers[i].backward(g, cache.caches[i])
            grads[i] = pg
        return grads

    def bump(self) -> None:
        self._version += 1


def adam_step(
    params: dict, grads: dict, state: dict, lr: float, t: int,
    beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, masks: dict | None = None,
) -> dict:
    """One bias-corrected Adam update, in place on `params`; returns `params`.

    `state` maps each key to an (m, v) pair and is created on first use.
    Updates to entries with a mask are multiplied by it.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        if k not in state:
            state[k] = (np.zeros_like(p), np.zeros_like(p))
        m, v = state[k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        upd = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if masks is not None and k in masks:
            upd *= masks[k]
        p -= upd.astype(p.dtype, copy=False)
    return params


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.state: dict = {}

    def step(self, net: Network, grads: list[dict]) -> None:
        self.t += 1
        params, flat, masks = {}, {}, {}
        for i, layer in enumerate(net.layers):
            if not layer.weighted:
                continue
            for name, arr in layer.params().items():
                params[(i, name)] = arr
                flat[(i, name)] = grads[i][name]
            masks[(i, "W")] = layer.mask
        adam_step(params, flat, self.state, self.lr, self.t, self.beta1, self.beta2, self.eps, masks)
        net.bump()

    def reset_masked_moments(self, net: Network) -> None:
        for i, layer in enumerate(net.layers):
            if layer.weighted and (i, "W") in self.state:
                m, v = self.state[(i, "W")]
                m *= layer.mask
                v *= layer.mask


@dataclass
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 1e-3
    batch_size: int = 64
    dropout: float = 0.4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float
    step: int


@dataclass
class TrainResult:
    net: Network
    history: list[EpochLog] = field(default_factory=list)
    steps: int = 0


StepCallback = Callable[[int, Network], None]


def train(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig | None = None,
    callbacks: Iterable[StepCallback] = (),
    optimizer: Adam | None = None,
    start_step: int = 0,
) -> TrainResult:
    """Mini-batch Adam on mean cross-entropy; the last partial batch is kept.

    Each callback is called as ``cb(step, net)`` after every optimizer step
    with the global step count (1-based, offset by `start_step`).
    """
    config = config or TrainConfig()
    x = np.asarray(x, dtype=net.dtype)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty training set")
    if len(np.unique(y)) < 2:
        raise ValueError("training set must contain both classes")
    n_classes = net.output_shape[0]
    onehot = one_hot(y, n_classes, dtype=net.dtype)
    rng = np.random.default_rng(config.seed)
    opt = optimizer or Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    callbacks = list(callbacks)
    step = start_step
    history: list[EpochLog] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        tot_loss = 0.0
        correct = 0
        for s in range(0, len(x), config.batch_size):
            idx = order[s : s + config.batch_size]
            probs, cache = net.forward(x[idx], "train", rng)
            batch_loss = cross_entropy(probs, onehot[idx])
            if not math.isfinite(batch_loss):
                raise Diverged(f"non-finite loss at epoch {epoch}, step {step}", history)
            tot_loss += batch_loss * len(idx)
            correct += int((probs.argmax(axis=1) == y[idx]).sum())
            grads = net.backward(cache, onehot[idx])
            opt.step(net, grads)
            step += 1
            for cb in callbacks:
                cb(step, net)
        history.append(EpochLog(epoch, tot_loss / len(x), correct / len(x), step))
        log.debug("epoch %d loss %.4f acc %.4f", epoch, history[-1].loss, history[-1].accuracy)
    return TrainResult(net, history, step)


def predict(net: Network, x, batch_size: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Argmax labels (ties -> lower class index) and probabilities."""
    probs = net.predict_proba(x, batch_size)
    return probs.argmax(axis=1), probs


def build(specs: Sequence[LayerSpec], input_shape, seed: int = 0, dtype=np.float32, name="net") -> Network:
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    for s in specs:
        if s.kind is LayerKind.DENSE:
            layers.append(Dense(*s.dims, rng=rng, dtype=dtype))
        elif s.kind is LayerKind.CONV1D:
            layers.append(Conv1D(*s.dims, rng=rng, dtype=dtype))
        elif s.kind is LayerKind.RELU:
            layers.append(ReLU())
        elif s.kind is LayerKind.DROPOUT:
            layers.append(Dropout(s.dropout_rate))
        elif s.kind is LayerKind.FLATTEN:
            layers.append(Flatten())
        elif s.kind is LayerKind.SOFTMAX:
            layers.append(Softmax())
    return Network(layers, input_shape, name)


def mlp_specs(input_dim: int, hidden: Sequence[int], n_classes: int = 2, dropout: float = 0.0,
              dropout_layers: int | None = None) -> list[LayerSpec]:
    """Dense/ReLU stack; dropout follows the first `dropout_layers` hidden layers (None: all)."""
    specs = []
    prev = input_dim
    n_drop = len(hidden) if dropout_layers is None else dropout_layers
    for i, h in enumerate(hidden):
        specs += [LayerSpec(LayerKind.DENSE, (prev, h)), LayerSpec(LayerKind.RELU)]
        if dropout > 0 and i < n_drop:
            specs.append(LayerSpec(LayerKind.DROPOUT, (), dropout))
        prev = h
    specs += [LayerSpec(LayerKind.DENSE, (prev, n_classes)), LayerSpec(LayerKind.SOFTMAX)]
    return specs


ARTIFACT_HIDDEN = (64, 32)
MAIN_HIDDEN = (512, 256, 128, 64, 32, 16)


def artifact_mlp(input_dim: int = 128, seed: int = 0, hidden=ARTIFACT_HIDDEN) -> Network:
    """3 weight layers: 128 -> 64 -> 32 -> 2."""
    return build(mlp_specs(input_dim, hidden), (input_dim,), seed, name="artifact_mlp")


def main_mlp(input_dim: int, seed: int = 0, dropout: float = 0.4, hidden=MAIN_HIDDEN,
             dropout_layers: int | None = 2) -> Network:
    """7 weight layers: input -> 512 -> 256 -> 128 -> 64 -> 32 -> 16 -> 2.

    Dropout follows the two widest hidden layers by default; dropout behind all
    six (down to the 16-unit layer) compounds train-mode variance enough that the
    net fails to fit raw 64-channel windows.
    """
    specs = mlp_specs(input_dim, hidden, dropout=dropout, dropout_layers=dropout_layers)
    return build(specs, (input_dim,), seed, name="mlp7")


def cnn(in_channels: int, length: int, seed: int = 0, conv=(16, 32), kernel: int = 3, hidden: int = 64,
        n_classes: int = 2) -> Network:
    """Two 'same' conv layers (k=3) then two dense layers."""
    K = LayerKind
    specs = [
        LayerSpec(K.CONV1D, (in_channels, conv[0], kernel)), LayerSpec(K.RELU),
        LayerSpec(K.CONV1D, (conv[0], conv[1], kernel)), LayerSpec(K.RELU),
        LayerSpec(K.FLATTEN),
        LayerSpec(K.DENSE, (conv[1] * length, hidden)), LayerSpec(K.RELU),
        LayerSpec(K.DENSE, (hidden, n_classes)), LayerSpec(K.SOFTMAX),
    ]
    return build(specs, (in_channels, length), seed, name="cnn")
