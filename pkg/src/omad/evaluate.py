"""Classification metrics, single-thread latency benchmarking, size accounting, sparsity sweeps."""

from __future__ import annotations

import csv
import gc
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .prune import model_sparsity

log = logging.getLogger(__name__)


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Confusion:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


def confusion_metrics(predicted, actual, positive_class=1) -> Confusion:
    """Accuracy/precision/recall/F1; a zero denominator makes that ratio (and F1) 0."""
    p = np.asarray(predicted)
    a = np.asarray(actual)
    if p.shape != a.shape:
        raise LengthMismatch(f"{p.shape} predictions vs {a.shape} labels")
    if p.size == 0:
        raise LengthMismatch("need at least one prediction")
    pp, ap = p == positive_class, a == positive_class
    tp = int(np.sum(pp & ap))
    fp = int(np.sum(pp & ~ap))
    fn = int(np.sum(~pp & ap))
    tn = int(np.sum(~pp & ~ap))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Confusion((tp + tn) / p.size, precision, recall, f1, tp, fp, fn, tn)


def hardware_descriptor() -> str:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for ln in fh:
                if ln.startswith("model name"):
                    cpu = ln.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return f"{cpu} | {platform.system()} {platform.release()} | python {platform.python_version()}"


@dataclass(frozen=True)
class BenchResult:
    median_ms: float
    iqr_ms: float
    samples_ms: tuple[float, ...]
    hardware: str

    @property
    def relative_iqr(self) -> float:
        return self.iqr_ms / self.median_ms


def latency_bench(forward: Callable[[np.ndarray], object], batch: np.ndarray, warmup: int = 5,
                  reps: int = 30) -> BenchResult:
    """Median wall time of `forward(batch)` over `reps` runs, on one BLAS thread.

    `forward` is any callable (``net.predict_proba``, ``SparseNetwork.forward``...).
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    samples = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            forward(batch)
        gc_was = gc.isenabled()
        gc.disable()
        try:
            for _ in range(reps):
                t0 = time.perf_counter()
                forward(batch)
                samples.append((time.perf_counter() - t0) * 1e3)
        finally:
            if gc_was:
                gc.enable()
    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    return BenchResult(float(med), float(q3 - q1), tuple(samples), hardware_descriptor())


def bench_batch(x: np.ndarray, size: int = 64, seed: int = 0) -> np.ndarray:
    """A fixed `size`-row minibatch drawn from `x` (with replacement if x is short)."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(x), size=size, replace=len(x) < size)
    return np.ascontiguousarray(x[np.sort(idx)])


@dataclass
class MetricsReport:
    model: str
    accuracy: float
    f1: float
    model_size_bytes: int
    latency_ms_per_minibatch: float
    pruned: bool = False
    setting: str = ""
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("accuracy", "f1"):
            v = getattr(self, name)
            if not (np.isfinite(v) and 0 <= v <= 1):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.model_size_bytes <= 0 or not self.latency_ms_per_minibatch > 0:
            raise ValueError("size and latency must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4f}"
    return str(v)


def write_csv(path: str | os.PathLike, columns: Sequence[str], rows: Sequence[dict]) -> Path:
    """CSV with floats at 4 decimals; columns in the given order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


SETTINGS_COLUMNS = ("setting", "model", "accuracy", "f1")
COMPRESSION_COLUMNS = ("model", "pruned", "size_bytes", "latency_ms", "accuracy", "f1")
SWEEP_COLUMNS = ("sparsity", "size_bytes", "latency_ms", "accuracy")


@dataclass
class SweepRow:
    sparsity: float
    size_bytes: int
    latency_ms: float
    accuracy: float
    iqr_ms: float = 0.0
    realized_sparsity: float = 0.0
    error: str = ""


def sparsity_sweep(
    train_pruned: Callable[[float], object],
    evaluate: Callable[[object], float],
    size_of: Callable[[object], int],
    bench: Callable[[object], BenchResult],
    sparsities: Sequence[float],
) -> list[SweepRow]:
    """One row per sparsity: prune-train, measure size, latency and accuracy.

    The four callables keep this independent of model family. A failing point
    is logged and recorded with its error; the sweep continues.
    """
    sparsities = list(sparsities)
    if sparsities != sorted(sparsities) or any(not 0 <= s <= 0.95 for s in sparsities):
        raise ValueError("sparsities must be ascending within [0, 0.95]")
    rows = []
    for s in sparsities:
        try:
            model = train_pruned(s)
            b = bench(model)
            rows.append(SweepRow(s, int(size_of(model)), b.median_ms, float(evaluate(model)), b.iqr_ms,
                                 model_sparsity(model) if hasattr(model, "weighted_layers") else s))
        except Exception as exc:  # noqa: BLE001 - the sweep records and continues
            log.exception("sweep point %.2f failed", s)
            rows.append(SweepRow(s, 0, float("nan"), float("nan"), error=repr(exc)))
    return rows


def write_sweep(path, rows: Sequence[SweepRow]) -> Path:
    return write_csv(path, SWEEP_COLUMNS, [asdict(r) for r in rows])
