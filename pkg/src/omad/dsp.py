"""Signal conditioning, overlapping windows and per-window features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps


class NyquistViolation(ValueError):
    pass


class TooShort(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = 128
    overlap_fraction: float = 0.8

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be positive")
        if not 0 <= self.overlap_fraction < 1:
            raise ValueError("overlap_fraction must be in [0, 1)")
        if self.stride < 1:
            raise ValueError("window_size and overlap give a zero stride")

    @property
    def stride(self) -> int:
        # 128 at 0.8 -> 25 (25.6 floored); the epsilon absorbs binary rounding of the product
        return math.floor((1.0 - self.overlap_fraction) * self.window_size + 1e-9)

    def count(self, length: int) -> int:
        if length < self.window_size:
            return 0
        return (length - self.window_size) // self.stride + 1


def notch_coefficients(fs: float, f0: float = 60.0, q: float = 30.0) -> tuple[np.ndarray, np.ndarray]:
    """Second-order notch (RBJ cookbook), normalised so a[0] == 1."""
    if q <= 0:
        raise ValueError("q must be positive")
    if not 0 < f0 < fs / 2:
        raise NyquistViolation(f"notch frequency {f0} Hz must lie in (0, {fs / 2}) Hz")
    w0 = 2 * math.pi * f0 / fs
    alpha = math.sin(w0) / (2 * q)
    cw = math.cos(w0)
    b = np.array([1.0, -2 * cw, 1.0])
    a = np.array([1 + alpha, -2 * cw, 1 - alpha])
    return b / a[0], a / a[0]


def notch_filter(x: np.ndarray, fs: float, f0: float = 60.0, q: float = 30.0) -> np.ndarray:
    """Causal biquad notch at `f0` with bandwidth f0/q, applied along the last axis."""
    b, a = notch_coefficients(fs, f0, q)
    return sps.lfilter(b, a, np.asarray(x, dtype=np.float64), axis=-1)


_HALFBAND_TAPS = 63


def _halfband_fir(fs: float) -> np.ndarray:
    taps = sps.firwin(_HALFBAND_TAPS, 0.45 * (fs / 2), fs=fs, window="blackman")
    return taps / taps.sum()


def resample_half(x: np.ndarray, fs: float) -> np.ndarray:
    """Low-pass at 0.45 of the new Nyquist, then keep every second sample.

    Zero-phase FIR with edge padding, so constants stay constant. Output length
    is ``len // 2`` along the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("need at least 2 samples to decimate")
    h = _halfband_fir(fs)
    half = len(h) // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    xp = np.pad(x, pad, mode="edge")
    y = sliding_window_view(xp, len(h), axis=-1) @ h[::-1]
    return y[..., : (n // 2) * 2 : 2]


def make_windows(x: np.ndarray, cfg: WindowConfig) -> np.ndarray:
    """Windows of the last axis at offsets 0, stride, 2*stride, ...

    A (L,) signal yields (n, W); a (C, L) recording yields (n, C, W). Trailing
    samples that do not fill a window are dropped. The result is a read-only view.
    """
    x = np.asarray(x)
    if x.shape[-1] < cfg.window_size:
        raise TooShort(f"signal of {x.shape[-1]} samples is shorter than window {cfg.window_size}")
    v = sliding_window_view(x, cfg.window_size, axis=-1)[..., :: cfg.stride, :]
    # (..., n, W) -> (n, ..., W)
    return np.moveaxis(v, -2, 0)


def window_offsets(length: int, cfg: WindowConfig) -> np.ndarray:
    return np.arange(cfg.count(length)) * cfg.stride


BANDS: dict[str, tuple[float, float]] = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 45.0),
}
TIME_FEATURES = ("mean", "variance", "std", "rms", "min", "max", "zero_crossings")
FEATURE_NAMES = TIME_FEATURES + tuple(f"{b}_power" for b in BANDS)


def periodogram(x: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided |DFT|^2 / (N fs) along the last axis, rectangular window."""
    n = x.shape[-1]
    spec = np.abs(np.fft.rfft(x, axis=-1)) ** 2 / (n * fs)
    # fold negative frequencies onto the one-sided spectrum
    if n % 2 == 0:
        spec[..., 1:-1] *= 2
    else:
        spec[..., 1:] *= 2
    return np.fft.rfftfreq(n, 1.0 / fs), spec


def band_powers(x: np.ndarray, fs: float) -> np.ndarray:
    """Periodogram bins summed per band, shape (..., len(BANDS))."""
    freqs, p = periodogram(x, fs)
    out = np.empty(x.shape[:-1] + (len(BANDS),))
    for j, (lo, hi) in enumerate(BANDS.values()):
        sel = (freqs >= lo) & (freqs < hi)
        out[..., j] = p[..., sel].sum(axis=-1)
    return out


def features(windows: np.ndarray, fs: float) -> np.ndarray:
    """Feature array (..., 12) for windows along the last axis (order: FEATURE_NAMES)."""
    w = np.asarray(windows, dtype=np.float64)
    if w.shape[-1] < 8:
        raise ValueError("windows need at least 8 samples")
    var = w.var(axis=-1)
    zc = np.count_nonzero(w[..., :-1] * w[..., 1:] < 0, axis=-1)
    cols = [
        w.mean(axis=-1),
        var,
        np.sqrt(var),
        np.sqrt((w * w).mean(axis=-1)),
        w.min(axis=-1),
        w.max(axis=-1),
        zc.astype(np.float64),
    ]
    return np.concatenate([np.stack(cols, axis=-1), band_powers(w, fs)], axis=-1)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(FEATURE_NAMES, self.values)}


def extract_features(window: np.ndarray, fs: float) -> FeatureVector:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1:
        raise ValueError("extract_features takes a single 1-D window; use features() for batches")
    return FeatureVector(features(window, fs))


@dataclass
class FeatureMatrix:
    """Rows of per-window features with named columns and optional labels."""

    values: np.ndarray
    names: list[str]
    group_labels: np.ndarray | None = None
    artifact_labels: np.ndarray | None = None
    source_ids: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError("values must be (rows, len(names))")

    @property
    def shape(self):
        return self.values.shape

    def subset(self, columns) -> FeatureMatrix:
        idx = [self.names.index(c) if isinstance(c, str) else int(c) for c in columns]
        return FeatureMatrix(
            self.values[:, idx],
            [self.names[i] for i in idx],
            self.group_labels,
            self.artifact_labels,
            self.source_ids,
        )

    def to_csv(self, path) -> None:
        import csv

        n = len(self.values)
        groups = self.group_labels if self.group_labels is not None else [""] * n
        arts = self.artifact_labels if self.artifact_labels is not None else [""] * n
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.names) + ["group_label", "artifact_label"])
            for row, g, a in zip(self.values, groups, arts):
                w.writerow([repr(float(v)) for v in row] + [_label_text(g), _label_text(a)])

    @classmethod
    def from_csv(cls, path) -> FeatureMatrix:
        import csv

        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-2:] != ["group_label", "artifact_label"]:
            raise ValueError(f"{path}: last columns must be group_label, artifact_label")
        names = header[:-2]
        values = np.array([[float(v) for v in r[:-2]] for r in body]).reshape(len(body), len(names))
        groups = [r[-2] for r in body]
        arts = [r[-1] for r in body]
        return cls(
            values,
            names,
            np.array([int(g) for g in groups]) if all(groups) else None,
            np.array([int(a) for a in arts]) if all(arts) else None,
        )


def _label_text(v) -> str:
    if v is None or v == "":
        return ""
    return str(int(v))


def feature_matrix(windows: np.ndarray, channels, fs: float, **labels) -> FeatureMatrix:
    """Flatten (n, C, W) windows into a FeatureMatrix named ``<channel>_<feature>``."""
    f = features(windows, fs)
    n = f.shape[0]
    names = [f"{c}_{name}" for c in channels for name in FEATURE_NAMES]
    return FeatureMatrix(f.reshape(n, -1), names, **labels)
