"""Magnitude pruning, the pruning schedule, sparse serialization and sparse inference.

Model file layout (little-endian)::

    b"OMAD"  u16 version  u16 n_layers
    per layer:
        u8 kind code                (nn.LayerKind value)
        u32 dims...                 Dense: in, out | Conv1D: in_ch, out_ch, k
                                    Dropout: rate * 1e6 | others: none
        weighted layers only:
            u8 encoding             0 dense: n f32 weights (mask read back as W != 0)
                                    1 sparse: ceil(n/8) bitmap bytes (LSB-first,
                                      flat C order), then f32 of set bits in order
            f32 bias[out]

Dense weights are stored as ``W[in, out]``, conv weights as ``W[out_ch, in_ch, k]``.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .nn import (
    Conv1D,
    Dense,
    LayerKind,
    LayerSpec,
    Network,
    ShapeMismatch,
    build,
    softmax,
)

MAGIC = b"OMAD"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


class VersionMismatch(FormatError):
    pass


class IoFailure(OSError):
    pass


# --------------------------------------------------------------------------
# masks and schedule


@dataclass(frozen=True)
class LayerMask:
    mask: np.ndarray
    target_sparsity: float

    @property
    def realized_sparsity(self) -> float:
        return 1.0 - float(self.mask.sum()) / self.mask.size

    @property
    def zeros(self) -> int:
        return int(self.mask.size - self.mask.sum())


def compute_mask(weights: np.ndarray, target_sparsity: float) -> LayerMask:
    """Zero the floor(s*n) smallest-magnitude weights; equal magnitudes prune lower flat index first."""
    if not 0 <= target_sparsity < 1:
        raise ValueError("target sparsity must be in [0, 1)")
    w = np.asarray(weights)
    k = math.floor(target_sparsity * w.size)
    flat = np.ones(w.size, dtype=np.uint8)
    if k:
        order = np.argsort(np.abs(w).ravel(), kind="stable")
        flat[order[:k]] = 0
    return LayerMask(flat.reshape(w.shape), target_sparsity)


@dataclass(frozen=True)
class PruningSchedule:
    initial_sparsity: float = 0.0
    final_sparsity: float = 0.5
    begin_step: int = 0
    end_step: int = 1000
    frequency: int = 100

    def __post_init__(self):
        if not (0 <= self.initial_sparsity < 1 and 0 <= self.final_sparsity < 1):
            raise ValueError("sparsities must be in [0, 1)")
        if self.initial_sparsity > self.final_sparsity:
            raise ValueError("initial_sparsity must not exceed final_sparsity")
        if self.begin_step < 0 or self.end_step <= self.begin_step:
            raise ValueError("need 0 <= begin_step < end_step")
        if self.frequency < 1:
            raise ValueError("frequency must be positive")
        if (self.end_step - self.begin_step) % self.frequency:
            raise ValueError("end_step - begin_step must be a multiple of frequency")

    @classmethod
    def for_run(
        cls, total_steps: int, final_sparsity: float = 0.5, initial_sparsity: float = 0.0,
        begin_frac: float = 0.2, end_frac: float = 0.8, frequency: int = 100,
    ) -> PruningSchedule:
        """Ramp from 20% to 80% of `total_steps`.

        The frequency shrinks for short runs so at least four updates happen,
        and end_step is pulled back onto the frequency grid.
        """
        begin = int(begin_frac * total_steps)
        span = max(1, int(end_frac * total_steps) - begin)
        freq = max(1, min(frequency, span // 4))
        return cls(initial_sparsity, final_sparsity, begin, begin + span // freq * freq, freq)

    def is_update_step(self, step: int) -> bool:
        return self.begin_step <= step <= self.end_step and (step - self.begin_step) % self.frequency == 0


def sparsity_at(step: int, schedule: PruningSchedule) -> float:
    """Cubic ramp from initial to final sparsity between begin_step and end_step."""
    s_i, s_f = schedule.initial_sparsity, schedule.final_sparsity
    if step < schedule.begin_step:
        return 0.0
    if step >= schedule.end_step:
        return s_f
    frac = (step - schedule.begin_step) / (schedule.end_step - schedule.begin_step)
    return s_f + (s_i - s_f) * (1.0 - frac) ** 3


class PruningCallback:
    """Train-loop hook recomputing every weight mask at the schedule's update steps."""

    def __init__(self, schedule: PruningSchedule, optimizer=None):
        self.schedule = schedule
        self.optimizer = optimizer
        self.log: list[tuple[int, list[float]]] = []

    def __call__(self, step: int, net: Network) -> None:
        if not self.schedule.is_update_step(step):
            return
        s = sparsity_at(step, self.schedule)
        for layer in net.weighted_layers():
            layer.set_mask(compute_mask(layer.W, s).mask)
        if self.optimizer is not None:
            self.optimizer.reset_masked_moments(net)
        net.bump()
        self.log.append((step, [layer.sparsity for layer in net.weighted_layers()]))


def prune_to(net: Network, sparsity: float) -> Network:
    """One-shot: install per-layer magnitude masks at `sparsity`."""
    for layer in net.weighted_layers():
        layer.set_mask(compute_mask(layer.W, sparsity).mask)
    net.bump()
    return net


def model_sparsity(net: Network) -> float:
    total = sum(layer.mask.size for layer in net.weighted_layers())
    zeros = sum(layer.mask.size - layer.mask.sum() for layer in net.weighted_layers())
    return float(zeros) / total


# --------------------------------------------------------------------------
# serialization


class Encoding(str, Enum):
    AUTO = "auto"
    DENSE = "dense"
    SPARSE = "sparse"


def dense_payload_bytes(n: int) -> int:
    return 4 * n


def sparse_payload_bytes(n: int, nnz: int) -> int:
    return (n + 7) // 8 + 4 * nnz


def _layer_dims(spec: LayerSpec) -> tuple[int, ...]:
    if spec.kind is LayerKind.DROPOUT:
        return (int(round(spec.dropout_rate * 1_000_000)),)
    return spec.dims


_N_DIMS = {
    LayerKind.DENSE: 2,
    LayerKind.CONV1D: 3,
    LayerKind.DROPOUT: 1,
    LayerKind.RELU: 0,
    LayerKind.SOFTMAX: 0,
    LayerKind.FLATTEN: 0,
}


def to_bytes(net: Network, encoding: Encoding | str = Encoding.AUTO) -> bytes:
    encoding = Encoding(encoding)
    out = bytearray(MAGIC)
    out += struct.pack("<HH", FORMAT_VERSION, len(net.layers))
    for layer in net.layers:
        spec = layer.spec()
        dims = _layer_dims(spec)
        out += struct.pack("<B", spec.kind.value)
        out += struct.pack(f"<{len(dims)}I", *dims)
        if not layer.weighted:
            continue
        keep = layer.mask.ravel().astype(bool)
        w = np.where(keep, layer.W.ravel(), 0).astype("<f4")
        n, nnz = w.size, int(keep.sum())
        enc = encoding
        if enc is Encoding.AUTO:
            enc = Encoding.SPARSE if sparse_payload_bytes(n, nnz) < dense_payload_bytes(n) else Encoding.DENSE
        if enc is Encoding.DENSE:
            out += struct.pack("<B", 0)
            out += w.tobytes()
        else:
            out += struct.pack("<B", 1)
            out += np.packbits(keep, bitorder="little").tobytes()
            out += w[keep].tobytes()
        out += layer.b.astype("<f4").tobytes()
    return bytes(out)


def serialize(net: Network, path: str | os.PathLike, encoding: Encoding | str = Encoding.AUTO) -> int:
    """Write `net` in the OMAD format; returns the file size in bytes."""
    data = to_bytes(net, encoding)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write model to {path}: {exc}") from exc
    return len(data)


def from_bytes(data: bytes) -> Network:
    if data[:4] != MAGIC:
        raise FormatError("not an OMAD model file (bad magic)")
    version, n_layers = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {version}, reader supports {FORMAT_VERSION}")
    pos = 8
    specs: list[LayerSpec] = []
    tensors: list[tuple[np.ndarray, np.ndarray, np.ndarray] | None] = []
    try:
        for _ in range(n_layers):
            (code,) = struct.unpack_from("<B", data, pos)
            pos += 1
            kind = LayerKind(code)
            nd = _N_DIMS[kind]
            dims = struct.unpack_from(f"<{nd}I", data, pos)
            pos += 4 * nd
            if kind is LayerKind.DROPOUT:
                specs.append(LayerSpec(kind, (), dims[0] / 1_000_000))
                tensors.append(None)
                continue
            specs.append(LayerSpec(kind, tuple(dims)))
            if kind not in (LayerKind.DENSE, LayerKind.CONV1D):
                tensors.append(None)
                continue
            if kind is LayerKind.DENSE:
                shape, n_out = (dims[0], dims[1]), dims[1]
            else:
                shape, n_out = (dims[1], dims[0], dims[2]), dims[1]
            n = int(np.prod(shape))
            (enc,) = struct.unpack_from("<B", data, pos)
            pos += 1
            if enc == 0:
                w = np.frombuffer(data, "<f4", n, pos).copy()
                pos += 4 * n
                keep = w != 0
            elif enc == 1:
                nb = (n + 7) // 8
                keep = np.unpackbits(np.frombuffer(data, np.uint8, nb, pos), count=n, bitorder="little").astype(bool)
                pos += nb
                nnz = int(keep.sum())
                w = np.zeros(n, dtype="<f4")
                w[keep] = np.frombuffer(data, "<f4", nnz, pos)
                pos += 4 * nnz
            else:
                raise FormatError(f"unknown weight encoding {enc}")
            b = np.frombuffer(data, "<f4", n_out, pos).copy()
            pos += 4 * n_out
            tensors.append((w.reshape(shape), keep.reshape(shape), b))
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"truncated or corrupt model file: {exc}") from exc
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after the last layer")

    input_shape = _input_shape(specs)
    net = build(specs, input_shape, dtype=np.float32)
    for layer, t in zip(net.layers, tensors):
        if t is None:
            continue
        w, keep, b = t
        layer.W = w.astype(np.float32)
        layer.b = b.astype(np.float32)
        layer.mask = keep.astype(np.float32)
    return net


def _input_shape(specs: list[LayerSpec]) -> tuple[int, ...]:
    first = next(s for s in specs if s.kind in (LayerKind.DENSE, LayerKind.CONV1D))
    if first.kind is LayerKind.DENSE:
        return (first.dims[0],)
    # conv nets: recover length from the first dense layer after Flatten
    in_ch = first.dims[0]
    convs = [s for s in specs if s.kind is LayerKind.CONV1D]
    dense = next(s for s in specs if s.kind is LayerKind.DENSE)
    length = dense.dims[0] // convs[-1].dims[1]
    return (in_ch, length)


def deserialize(path: str | os.PathLike) -> Network:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read model {path}: {exc}") from exc
    return from_bytes(data)


# --------------------------------------------------------------------------
# sparse inference

_COL_BLOCK = 64


@numba.njit(cache=True, fastmath=True, boundscheck=False, error_model="numpy")
def _bcsr_matmul(blockptr, indices, data, xt, out):
    """out[j, :] = sum_k data[k] * xt[indices[k], :] over column-blocked CSR rows.

    blockptr is (n_blocks, n_rows + 1); blocks are visited in order so the
    slice of `xt` a block touches stays cache resident.
    """
    nblocks = blockptr.shape[0]
    nrows = blockptr.shape[1] - 1
    width = xt.shape[1]
    out[:, :] = 0.0
    for cb in range(nblocks):
        for j in range(nrows):
            acc = out[j]
            for k in range(blockptr[cb, j], blockptr[cb, j + 1]):
                v = data[k]
                row = xt[indices[k]]
                for b in range(width):
                    acc[b] += v * row[b]


@dataclass
class BlockedCSR:
    """Row-major sparse matrix (rows = outputs) split into column blocks."""

    blockptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple[int, int]

    @classmethod
    def from_dense(cls, m: np.ndarray, block: int = _COL_BLOCK) -> BlockedCSR:
        rows, cols = m.shape
        nb = max(1, -(-cols // block))
        ptr = np.zeros((nb, rows + 1), dtype=np.int64)
        idx_parts, val_parts = [], []
        total = 0
        for cb in range(nb):
            sub = m[:, cb * block : (cb + 1) * block]
            r, c = np.nonzero(sub)
            counts = np.bincount(r, minlength=rows)
            ptr[cb, 1:] = np.cumsum(counts) + total
            ptr[cb, 0] = total
            idx_parts.append((c + cb * block).astype(np.int32))
            val_parts.append(sub[r, c])
            total += len(r)
        indices = np.concatenate(idx_parts) if idx_parts else np.zeros(0, np.int32)
        data = np.concatenate(val_parts).astype(m.dtype) if val_parts else np.zeros(0, m.dtype)
        return cls(ptr, indices, data, (rows, cols))

    @property
    def nnz(self) -> int:
        return len(self.data)

    def matmul_t(self, xt: np.ndarray) -> np.ndarray:
        """(rows, width) result of self @ xt for xt of shape (cols, width)."""
        xt = np.ascontiguousarray(xt, dtype=self.data.dtype)
        out = np.empty((self.shape[0], xt.shape[1]), dtype=self.data.dtype)
        _bcsr_matmul(self.blockptr, self.indices, self.data, xt, out)
        return out


class SparseNetwork:
    """Inference-only copy of a masked Network that skips pruned multiply-adds.

    Dense layers run on transposed activations (features x batch) so the
    batch dimension is the contiguous inner loop of the sparse kernel.
    """

    def __init__(self, net: Network):
        self.input_shape = net.input_shape
        self.dtype = net.dtype
        self.name = net.name + "_sparse"
        self.ops: list[tuple] = []
        for layer in net.layers:
            k = layer.kind
            if k is LayerKind.DENSE:
                w = (layer.W * layer.mask).T  # (out, in)
                self.ops.append(("dense", BlockedCSR.from_dense(np.ascontiguousarray(w)), layer.b[:, None].copy()))
            elif k is LayerKind.CONV1D:
                w = (layer.W * layer.mask).reshape(layer.out_channels, -1)
                self.ops.append(("conv", BlockedCSR.from_dense(np.ascontiguousarray(w)), layer.b[:, None].copy(), layer))
            elif k is LayerKind.RELU:
                self.ops.append(("relu",))
            elif k is LayerKind.FLATTEN:
                self.ops.append(("flatten",))
            elif k is LayerKind.SOFTMAX:
                self.ops.append(("softmax",))
            # dropout is the identity at inference

    @property
    def nnz(self) -> int:
        return sum(op[1].nnz for op in self.ops if op[0] in ("dense", "conv"))

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"expected (batch, {self.input_shape}), got {x.shape}")
        batch = len(x)
        # activation layouts: "batch" (B, ...), "cbl" (C, B, L) between convs,
        # "fb" (features, B) for dense layers
        layout = "batch"
        for op in self.ops:
            kind = op[0]
            if kind == "dense":
                if layout == "batch":
                    x = x.reshape(batch, -1).T
                elif layout == "cbl":
                    x = _flatten_cbl(x)
                layout = "fb"
                x = op[1].matmul_t(x)
                x += op[2]
            elif kind == "conv":
                if layout == "fb":
                    raise ShapeMismatch("conv after dense is not supported")
                if layout == "batch":
                    x = x.transpose(1, 0, 2)
                    layout = "cbl"
                C, _, L = x.shape
                k = op[3].kernel
                p = k // 2
                xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
                # (C, B, L, k) -> (C*k, B*L): rows match the flattened (out, C, k) weights
                cols = sliding_window_view(xp, k, axis=2).transpose(0, 3, 1, 2).reshape(C * k, batch * L)
                y = op[1].matmul_t(cols)
                y += op[2]
                x = y.reshape(-1, batch, L)
            elif kind == "relu":
                x = np.maximum(x, 0)
            elif kind == "flatten":
                if layout == "cbl":
                    x = _flatten_cbl(x)
                    layout = "fb"
                elif layout == "batch":
                    x = x.reshape(batch, -1)
            elif kind == "softmax":
                x = softmax(x.T if layout == "fb" else x)
                layout = "batch"
        return x.T if layout == "fb" else x

    def predict_proba(self, x, batch_size: int = 1024) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        return np.concatenate([self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])


def _flatten_cbl(x: np.ndarray) -> np.ndarray:
    """(C, B, L) -> (C*L, B), matching the dense path's per-sample (C, L) flattening."""
    C, B, L = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(C * L, B)


def sparse_forward(net: Network | SparseNetwork, batch) -> np.ndarray:
    snet = net if isinstance(net, SparseNetwork) else SparseNetwork(net)
    return snet.forward(batch)
