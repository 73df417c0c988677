"""EEG recordings: `.rd` parsing, corpus loading, synthetic corpora and splits.

The `.rd` layout is the one used by the UCI alcoholism EEG database::

    # co2a0000364.rd
    # 120 trials, 64 chans, 416 samples 368 post_stim samples
    # 3.906000 msecs uV
    # S1 obj , trial 0
    # FP1 chan 0
    0 FP1 0 -8.921
    0 FP1 1 -8.433
    ...

Each data row is ``trial channel sample_index microvolts``.
"""

from __future__ import annotations

import gzip
import json
import logging
import math
import os
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class Group(str, Enum):
    CONTROL = "Control"
    ALCOHOLIC = "Alcoholic"


class Condition(str, Enum):
    S1_OBJ = "S1 obj"
    S2_MATCH = "S2 match"
    S2_NOMATCH = "S2 nomatch"


class ArtifactKind(str, Enum):
    EYE_BLINK = "EyeBlink"
    EYEBROW_RAISE = "EyebrowRaise"


class RdParseError(ValueError):
    """Base class for `.rd` parse failures."""


class MalformedHeader(RdParseError):
    pass


class RowArity(RdParseError):
    pass


class IndexGap(RdParseError):
    pass


class UnknownGroup(RdParseError):
    pass


class RaggedChannels(RdParseError):
    pass


class EmptyCorpus(RuntimeError):
    pass


class DegenerateSplit(ValueError):
    pass


# Emotiv EPOC electrode order.
EMOTIV_CHANNELS = (
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1",
    "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
)
FRONTAL_CHANNELS = frozenset({"AF3", "AF4", "F7", "F8", "F3", "F4"})

# Electrode order of the UCI recordings (61 scalp + X, Y, nd).
UCI_CHANNELS = (
    "FP1", "FP2", "F7", "F8", "AF1", "AF2", "FZ", "F4", "F3", "FC6", "FC5",
    "FC2", "FC1", "T8", "T7", "CZ", "C3", "C4", "CP5", "CP6", "CP1", "CP2",
    "P3", "P4", "PZ", "P8", "P7", "PO2", "PO1", "O2", "O1", "X", "AF7", "AF8",
    "F5", "F6", "FT7", "FT8", "FPZ", "FC4", "FC3", "C6", "C5", "F2", "F1",
    "TP8", "TP7", "AFZ", "CP3", "CP4", "P5", "P6", "C1", "C2", "PO7", "PO8",
    "FCZ", "POZ", "OZ", "P2", "P1", "CPZ", "nd", "Y",
)
UCI_FRONTAL = frozenset({"FP1", "FP2", "FPZ", "AF1", "AF2", "AF7", "AF8", "AFZ"})


def group_from_subject(subject_id: str) -> Group:
    if len(subject_id) < 4:
        raise UnknownGroup(f"subject id {subject_id!r} is shorter than 4 characters")
    letter = subject_id[3].lower()
    if letter == "a":
        return Group.ALCOHOLIC
    if letter == "c":
        return Group.CONTROL
    raise UnknownGroup(f"4th letter of {subject_id!r} is {letter!r}, expected 'a' or 'c'")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Recording:
    """One subject/trial of multi-channel EEG, channel-major, in microvolts."""

    subject_id: str
    group: Group
    condition: Condition
    trial_number: int
    sample_period_ms: float
    channels: tuple[str, ...]
    data: np.ndarray
    declared_trials: int | None = None
    declared_channels: int | None = None
    declared_samples: int | None = None
    declared_post_stim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "data", _readonly(self.data))
        if self.data.ndim != 2 or self.data.shape[0] != len(self.channels):
            raise ValueError(
                f"data shape {self.data.shape} does not match {len(self.channels)} channels"
            )
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("channel names must be unique")
        if self.trial_number < 0:
            raise ValueError("trial_number must be non-negative")
        if not self.sample_period_ms > 0:
            raise ValueError("sample period must be positive")

    @property
    def sample_rate_hz(self) -> float:
        rate = 1000.0 / self.sample_period_ms
        # header periods are printed to microsecond precision (3.906 ms for 256 Hz)
        nearest = round(rate)
        return float(nearest) if abs(rate - nearest) <= 0.005 * nearest else rate

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def key(self) -> tuple[str, int]:
        return (self.subject_id, self.trial_number)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.group == other.group
            and self.condition == other.condition
            and self.trial_number == other.trial_number
            and self.sample_period_ms == other.sample_period_ms
            and self.channels == other.channels
            and self.declared_trials == other.declared_trials
            and self.declared_channels == other.declared_channels
            and self.declared_samples == other.declared_samples
            and self.declared_post_stim == other.declared_post_stim
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


_COUNTS_RE = re.compile(
    r"^(\d+)\s+trials?\s*,\s*(\d+)\s+chans?\s*,\s*(\d+)\s+samples?"
    r"(?:\s+(\d+)\s+post_stim\s+samples?)?",
    re.IGNORECASE,
)
_PERIOD_RE = re.compile(r"^([0-9]*\.?[0-9]+)\s*msecs?", re.IGNORECASE)
_COND_RE = re.compile(
    r"^(S1\s+obj|S2\s+match|S2\s+nomatch)\b.*?,\s*trial\s+(\d+)", re.IGNORECASE
)


def _parse_condition(text: str) -> Condition:
    norm = " ".join(text.split()).lower()
    for c in Condition:
        if c.value.lower() == norm:
            return c
    raise MalformedHeader(f"unknown condition {text!r}")


def parse_rd(text: str | Iterable[str]) -> Recording:
    """Parse one `.rd` trial file into a `Recording`.

    `text` may be the full file contents or any iterable of lines.
    """
    lines = text.splitlines() if isinstance(text, str) else [ln.rstrip("\n") for ln in text]

    headers: list[str] = []
    i = 0
    while i < len(lines) and len(headers) < 4:
        ln = lines[i].strip()
        i += 1
        if not ln:
            continue
        if not ln.startswith("#"):
            break
        headers.append(ln[1:].strip())
    if len(headers) < 4:
        raise MalformedHeader(f"expected 4 '#' header lines, found {len(headers)}")

    name = headers[0].split()[0] if headers[0] else ""
    subject_id = re.sub(r"\.rd(\.\d+)?(\.gz)?$", "", name)
    if not subject_id:
        raise MalformedHeader("header line 1 carries no subject identifier")
    group = group_from_subject(subject_id)

    m = _COUNTS_RE.match(headers[1])
    if not m:
        raise MalformedHeader(f"unparseable counts line {headers[1]!r}")
    d_trials, d_chans, d_samples = (int(m.group(k)) for k in (1, 2, 3))
    d_post = int(m.group(4)) if m.group(4) else None

    m = _PERIOD_RE.match(headers[2])
    if not m:
        raise MalformedHeader(f"unparseable sample period line {headers[2]!r}")
    period = float(m.group(1))
    if period <= 0:
        raise MalformedHeader("sample period must be positive")

    m = _COND_RE.match(headers[3])
    if not m:
        raise MalformedHeader(f"unparseable condition line {headers[3]!r}")
    condition = _parse_condition(m.group(1))
    trial = int(m.group(2))

    blocks: dict[str, dict[int, float]] = {}
    order: list[str] = []
    for lineno, raw in enumerate(lines[i:], start=i + 1):
        ln = raw.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if len(parts) != 4:
            raise RowArity(f"line {lineno}: expected 4 columns, got {len(parts)}: {ln!r}")
        try:
            int(parts[0])
            idx = int(parts[2])
            value = float(parts[3])
        except ValueError as exc:
            raise RowArity(f"line {lineno}: non-numeric field in {ln!r}") from exc
        chan = parts[1]
        block = blocks.get(chan)
        if block is None:
            block = blocks[chan] = {}
            order.append(chan)
        if idx in block:
            raise IndexGap(f"line {lineno}: duplicate sample index {idx} for {chan}")
        block[idx] = value
    if not order:
        raise RowArity("file contains no data rows")

    n = len(blocks[order[0]])
    data = np.empty((len(order), n))
    for c, chan in enumerate(order):
        block = blocks[chan]
        if len(block) != n:
            raise RaggedChannels(f"channel {chan} has {len(block)} samples, expected {n}")
        if min(block) != 0 or max(block) != n - 1:
            raise IndexGap(f"channel {chan}: sample indices are not contiguous from 0")
        data[c] = [block[k] for k in range(n)]

    return Recording(
        subject_id=subject_id,
        group=group,
        condition=condition,
        trial_number=trial,
        sample_period_ms=period,
        channels=tuple(order),
        data=data,
        declared_trials=d_trials,
        declared_channels=d_chans,
        declared_samples=d_samples,
        declared_post_stim=d_post,
    )


def format_rd(rec: Recording) -> str:
    """Render a `Recording` as `.rd` text; `parse_rd` inverts this exactly."""
    n_trials = rec.declared_trials if rec.declared_trials is not None else 1
    n_chans = rec.declared_channels if rec.declared_channels is not None else len(rec.channels)
    n_samp = rec.declared_samples if rec.declared_samples is not None else rec.n_samples
    counts = f"# {n_trials} trials, {n_chans} chans, {n_samp} samples"
    if rec.declared_post_stim is not None:
        counts += f" {rec.declared_post_stim} post_stim samples"
    out = [
        f"# {rec.subject_id}.rd",
        counts,
        f"# {rec.sample_period_ms:.6f} msecs uV",
        f"# {rec.condition.value} , trial {rec.trial_number}",
    ]
    for c, chan in enumerate(rec.channels):
        out.append(f"# {chan} chan {c}")
        row = rec.data[c]
        out.extend(f"{rec.trial_number} {chan} {k} {float(v)!r}" for k, v in enumerate(row))
    return "\n".join(out) + "\n"


def read_rd(path: str | os.PathLike) -> Recording:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="ascii", errors="replace") as fh:
        return parse_rd(fh.read())


def write_rd(rec: Recording, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = format_rd(rec).encode("ascii")
    if path.suffix == ".gz":
        # empty filename and mtime=0 make the bytes depend on content only
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(data)
    else:
        path.write_bytes(data)
    return path


def _is_rd_file(p: Path) -> bool:
    return p.is_file() and re.search(r"\.rd(\.\d+)?(\.gz)?$", p.name) is not None


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("OMAD_THREADS", "1")))
    except ValueError:
        return 1


def load_corpus(
    directory: str | os.PathLike,
    condition: Condition | None = None,
    *,
    errors: list | None = None,
) -> list[Recording]:
    """Parse every `.rd` / `.rd.gz` file under `directory` (recursively).

    Unparseable files are logged and skipped; pass a list as `errors` to
    collect ``(path, exception)`` pairs. Raises `EmptyCorpus` when nothing
    parses.
    """
    root = Path(directory)
    paths = sorted(p for p in root.rglob("*") if _is_rd_file(p)) if root.is_dir() else []

    def _load(p: Path):
        try:
            return p, read_rd(p), None
        except (RdParseError, ValueError, OSError, EOFError) as exc:
            return p, None, exc

    workers = _worker_count()
    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(_load, paths))
    else:
        results = [_load(p) for p in paths]

    recs = []
    for p, rec, exc in results:
        if exc is not None:
            log.warning("skipping %s: %s", p, exc)
            if errors is not None:
                errors.append((p, exc))
            continue
        if condition is None or rec.condition == condition:
            recs.append((rec, str(p)))
    if not recs:
        raise EmptyCorpus(f"no recordings parsed from {root}")
    recs.sort(key=lambda rp: (rp[0].subject_id, rp[0].trial_number, rp[0].condition.value, rp[1]))
    return [r for r, _ in recs]


# --------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True, eq=False)
class ArtifactRecording:
    subject_id: str
    artifact_kind: ArtifactKind
    trial_number: int
    sample_rate_hz: float
    channels: tuple[str, ...]
    data: np.ndarray
    artifact_interval_s: tuple[float, float] = (4.0, 7.0)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "data", _readonly(self.data))
        start, end = self.artifact_interval_s
        if not 0 <= start < end <= self.duration_s + 1e-9:
            raise ValueError(f"artifact interval {self.artifact_interval_s} outside recording")
        if self.data.shape[0] != len(self.channels):
            raise ValueError("data rows must match channels")

    @property
    def duration_s(self) -> float:
        return self.data.shape[1] / self.sample_rate_hz

    @property
    def source_id(self) -> str:
        return f"{self.subject_id}:{self.artifact_kind.value}:{self.trial_number}"

    def __eq__(self, other):
        if not isinstance(other, ArtifactRecording):
            return NotImplemented
        return (
            self.source_id == other.source_id
            and self.sample_rate_hz == other.sample_rate_hz
            and self.channels == other.channels
            and self.artifact_interval_s == other.artifact_interval_s
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True)
class ArtifactCorpusConfig:
    subjects: int = 3
    trials_per_kind: int = 2
    sample_rate_hz: float = 128.0
    duration_s: float = 10.0
    artifact_interval_s: tuple[float, float] = (4.0, 7.0)

    def __post_init__(self):
        if self.subjects < 1 or self.trials_per_kind < 1:
            raise ValueError("subjects and trials_per_kind must be >= 1")


def background_eeg(
    rng: np.random.Generator, n_channels: int, n_samples: int, fs: float, rms: float = 10.0
) -> np.ndarray:
    """Sum of random 1-40 Hz sinusoids with 1/f amplitudes plus white noise."""
    t = np.arange(n_samples) / fs
    n_tones = 24
    freqs = rng.uniform(1.0, 40.0, size=(n_channels, n_tones))
    amps = 1.0 / np.sqrt(freqs) * rng.uniform(0.5, 1.5, size=freqs.shape)
    phases = rng.uniform(0, 2 * np.pi, size=freqs.shape)
    x = np.einsum("ck,ckt->ct", amps, np.sin(2 * np.pi * freqs[..., None] * t + phases[..., None]))
    x += 0.3 * x.std(axis=1, keepdims=True) * rng.standard_normal(x.shape)
    x *= rms / x.std(axis=1, keepdims=True)
    return x


def blink_train(
    rng: np.random.Generator, n_samples: int, fs: float, start_s: float, end_s: float
) -> np.ndarray:
    """Unit-peak train of 200-400 ms half-sine transients covering [start, end).

    Blinks are separated by 250-600 ms of baseline, so a one-second window
    inside the interval holds isolated blinks as well as blink edges. The first
    blink starts exactly at `start_s` and the last one ends at `end_s`.
    """
    out = np.zeros(n_samples)
    start, end = int(round(start_s * fs)), int(round(end_s * fs))
    pos = start
    while pos < end:
        width = int(round(rng.uniform(0.2, 0.4) * fs))
        if end - pos < width + int(0.45 * fs):
            # no room for another gap + blink: the last one ends exactly at `end`
            width = min(end - pos, int(round(0.4 * fs)))
            pos = end - width
        k = np.arange(width)
        out[pos : pos + width] = np.sin(np.pi * (k + 0.5) / width)
        pos += width + int(round(rng.uniform(0.25, 0.6) * fs))
    return out


def _brow_burst(rng: np.random.Generator, n: int, fs: float) -> np.ndarray:
    """Unit-RMS Gaussian noise band-limited to 20-60 Hz (FFT masking)."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / fs)
    spec[(f < 20) | (f > 60)] = 0
    burst = np.fft.irfft(spec, n)
    return burst / burst.std()


def generate_artifact_corpus(
    config: ArtifactCorpusConfig | None = None, seed: int = 0, **overrides
) -> list[ArtifactRecording]:
    """Synthetic 14-channel, 128 Hz artifact recordings.

    Each trial is 10 s of background EEG with an eye-blink train or an
    eyebrow-raise EMG burst overlaid on seconds 4-7. Recordings are ordered
    subject, kind, trial and are bit-identical for equal seeds.
    """
    if config is None:
        config = ArtifactCorpusConfig(**overrides)
    elif overrides:
        raise TypeError("pass either a config or keyword overrides, not both")
    fs = config.sample_rate_hz
    n = int(round(config.duration_s * fs))
    start_s, end_s = config.artifact_interval_s
    a0, a1 = int(round(start_s * fs)), int(round(end_s * fs))
    nch = len(EMOTIV_CHANNELS)
    frontal = np.array([c in FRONTAL_CHANNELS for c in EMOTIV_CHANNELS])

    root = np.random.SeedSequence(seed)
    out = []
    for s, subj_seq in enumerate(root.spawn(config.subjects)):
        subject_id = f"s{s + 1:02d}"
        for kind, kind_seq in zip(ArtifactKind, subj_seq.spawn(len(ArtifactKind))):
            for trial, seq in enumerate(kind_seq.spawn(config.trials_per_kind)):
                rng = np.random.default_rng(seq)
                base_rms = rng.uniform(6.0, 14.0)
                x = background_eeg(rng, nch, n, fs, rms=base_rms)
                if kind is ArtifactKind.EYE_BLINK:
                    gain = np.where(frontal, rng.uniform(9.0, 12.0, nch), rng.uniform(5.5, 7.0, nch))
                    x += (gain * base_rms)[:, None] * blink_train(rng, n, fs, start_s, end_s)
                else:
                    gain = rng.uniform(3.5, 5.0, nch)
                    env = np.zeros(n)
                    env[a0:a1] = 1.0
                    ramp = max(1, int(0.02 * fs))
                    env[a0 : a0 + ramp] = np.linspace(0.3, 1.0, ramp)
                    env[a1 - ramp : a1] = np.linspace(1.0, 0.3, ramp)
                    for c in range(nch):
                        x[c] += gain[c] * base_rms * env * _brow_burst(rng, n, fs)
                out.append(
                    ArtifactRecording(
                        subject_id=subject_id,
                        artifact_kind=kind,
                        trial_number=trial,
                        sample_rate_hz=fs,
                        channels=EMOTIV_CHANNELS,
                        data=x,
                        artifact_interval_s=(start_s, end_s),
                    )
                )
    return out


def save_artifact_recording(rec: ArtifactRecording, directory: str | os.PathLike) -> Path:
    """Write `<id>.csv` (``channel,t0,t1,...``) plus a one-line `<id>.meta.json`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = rec.source_id.replace(":", "_")
    path = directory / f"{stem}.csv"
    header = "channel," + ",".join(f"t{k}" for k in range(rec.data.shape[1]))
    rows = [header]
    for chan, row in zip(rec.channels, rec.data):
        rows.append(chan + "," + ",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(rows) + "\n")
    meta = {
        "subject": rec.subject_id,
        "kind": rec.artifact_kind.value,
        "trial": rec.trial_number,
        "sample_rate_hz": rec.sample_rate_hz,
        "interval": list(rec.artifact_interval_s),
    }
    (directory / f"{stem}.meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return path


def load_artifact_recording(path: str | os.PathLike) -> ArtifactRecording:
    path = Path(path)
    meta = json.loads(path.with_name(path.name[: -len(".csv")] + ".meta.json").read_text())
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("channel,"):
        raise ValueError(f"{path}: missing 'channel,t0,...' header")
    channels, rows = [], []
    for ln in lines[1:]:
        if not ln:
            continue
        name, *vals = ln.split(",")
        channels.append(name)
        rows.append([float(v) for v in vals])
    return ArtifactRecording(
        subject_id=meta["subject"],
        artifact_kind=ArtifactKind(meta["kind"]),
        trial_number=int(meta["trial"]),
        sample_rate_hz=float(meta["sample_rate_hz"]),
        channels=tuple(channels),
        data=np.array(rows),
        artifact_interval_s=tuple(meta["interval"]),
    )


def load_artifact_corpus(directory: str | os.PathLike) -> list[ArtifactRecording]:
    paths = sorted(Path(directory).glob("*.csv"))
    recs = [load_artifact_recording(p) for p in paths]
    if not recs:
        raise EmptyCorpus(f"no artifact recordings in {directory}")
    recs.sort(key=lambda r: (r.subject_id, r.artifact_kind.value, r.trial_number))
    return recs


@dataclass(frozen=True)
class MainCorpusConfig:
    """Knobs of the synthetic control/alcoholic corpus in UCI layout."""

    subjects_per_group: int = 10
    trials_per_subject: int = 10
    n_samples: int = 256
    sample_period_ms: float = 3.906
    channels: tuple[str, ...] = UCI_CHANNELS
    blink_fraction: float = 0.25
    mains_hz: float = 60.0
    mains_uv: float = 4.0
    effect_size: float = 0.35
    erp_uv: float = 20.0
    erp_reduction: float = 0.4


def generate_main_corpus(
    config: MainCorpusConfig | None = None, seed: int = 0, **overrides
) -> list[Recording]:
    """Synthetic stand-in for the UCI corpus, for pipeline runs without the real data.

    Alcoholic subjects get weaker alpha and stronger beta rhythms than controls
    (scaled by `effect_size`). Every trial carries a stimulus-locked response
    (N100 trough, P300 peak of `erp_uv`, centro-parietal), whose P300 is
    reduced by `erp_reduction` for alcoholic subjects. Mains hum is added at `mains_hz`, and a
    `blink_fraction` of trials carry an eye-blink transient on a random
    sub-interval, strongest frontally.
    """
    return generate_main_corpus_with_blinks(config, seed, **overrides)[0]


def generate_main_corpus_with_blinks(
    config: MainCorpusConfig | None = None, seed: int = 0, **overrides
) -> tuple[list[Recording], set[tuple[str, int]]]:
    """`generate_main_corpus` plus the (subject, trial) keys that carry a blink."""
    if config is None:
        config = MainCorpusConfig(**overrides)
    elif overrides:
        raise TypeError("pass either a config or keyword overrides, not both")
    fs = 1000.0 / config.sample_period_ms
    n = config.n_samples
    nch = len(config.channels)
    t = np.arange(n) / fs
    frontal = np.array([c in UCI_FRONTAL for c in config.channels])
    post = np.array([c.startswith(("O", "P")) for c in config.channels])
    central = np.array([c.startswith("C") for c in config.channels])
    conditions = list(Condition)

    root = np.random.SeedSequence(seed)
    recs = []
    blinks: set[tuple[str, int]] = set()
    subj_seqs = root.spawn(2 * config.subjects_per_group)
    for s, seq in enumerate(subj_seqs):
        alcoholic = s % 2 == 1
        letter = "a" if alcoholic else "c"
        subject_id = f"co2{letter}{1000 + s:07d}"
        srng = np.random.default_rng(seq)
        alpha_f = srng.uniform(9.0, 11.5)
        beta_f = srng.uniform(16.0, 24.0)
        subj_alpha = srng.uniform(0.7, 1.3)
        subj_beta = srng.uniform(0.7, 1.3)
        sign = 1.0 if alcoholic else -1.0
        alpha_amp = 6.0 * subj_alpha * (1 - sign * config.effect_size)
        beta_amp = 3.0 * subj_beta * (1 + sign * config.effect_size)
        spatial_alpha = np.where(post, 1.0, 0.45) * srng.uniform(0.8, 1.2, nch)
        spatial_beta = np.where(frontal, 1.0, 0.7) * srng.uniform(0.8, 1.2, nch)
        p3_latency = srng.uniform(0.28, 0.36)
        p3_amp = config.erp_uv * srng.uniform(0.7, 1.3) * (1 - config.erp_reduction if alcoholic else 1.0)
        spatial_erp = np.where(post | central, 1.0, 0.4) * srng.uniform(0.8, 1.2, nch)
        for trial, tseq in enumerate(seq.spawn(config.trials_per_subject)):
            rng = np.random.default_rng(tseq)
            x = background_eeg(rng, nch, n, fs, rms=rng.uniform(6.0, 9.0))
            pa = rng.uniform(0, 2 * np.pi, nch)
            pb = rng.uniform(0, 2 * np.pi, nch)
            x += (alpha_amp * spatial_alpha)[:, None] * np.sin(2 * np.pi * alpha_f * t + pa[:, None])
            x += (beta_amp * spatial_beta)[:, None] * np.sin(2 * np.pi * beta_f * t + pb[:, None])
            x += config.mains_uv * np.sin(2 * np.pi * config.mains_hz * t + rng.uniform(0, 2 * np.pi))
            lat = p3_latency + rng.normal(0.0, 0.02)
            erp = -0.5 * np.exp(-0.5 * ((t - 0.1) / 0.025) ** 2) + np.exp(-0.5 * ((t - lat) / 0.06) ** 2)
            x += (p3_amp * rng.uniform(0.8, 1.2) * spatial_erp)[:, None] * erp
            has_blink = rng.random() < config.blink_fraction
            if has_blink:
                width = min(int(rng.uniform(0.2, 0.4) * fs), max(1, n // 2))
                pos = int(rng.integers(0, n - width + 1))
                k = np.arange(width)
                shape = np.zeros(n)
                shape[pos : pos + width] = np.sin(np.pi * (k + 0.5) / width)
                gain = np.where(frontal, rng.uniform(80, 140), rng.uniform(40, 70)) * rng.uniform(0.8, 1.2, nch)
                x += gain[:, None] * shape
            recs.append(
                Recording(
                    subject_id=subject_id,
                    group=Group.ALCOHOLIC if alcoholic else Group.CONTROL,
                    condition=conditions[trial % len(conditions)],
                    trial_number=trial,
                    sample_period_ms=config.sample_period_ms,
                    channels=config.channels,
                    data=np.round(x, 3),
                    declared_trials=config.trials_per_subject,
                    declared_channels=nch,
                    declared_samples=n,
                )
            )
            if has_blink:
                blinks.add((subject_id, trial))
    recs.sort(key=lambda r: (r.subject_id, r.trial_number))
    return recs, blinks


# --------------------------------------------------------------------------
# windowed examples and splits


@dataclass(frozen=True, eq=False)
class WindowedExample:
    source_id: str
    channel: str
    samples: np.ndarray
    group_label: Group | None = None
    artifact_label: bool | None = None
    offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, "samples", _readonly(self.samples))
        if self.channel != "multi" and self.samples.ndim != 1:
            raise ValueError("single-channel windows must be 1-D")

    @property
    def window_size(self) -> int:
        return self.samples.shape[-1]


def split(
    examples: Sequence,
    test_fraction: float,
    seed: int,
    *,
    key: Callable[[object], Hashable] | None = None,
    label: Callable[[object], Hashable] | None = None,
) -> tuple[list, list]:
    """Trial-level stratified train/test split.

    All examples sharing `key` (default ``source_id``) land on the same side.
    Within each `label` stratum (default ``group_label``) the test side gets
    ``round(n * test_fraction)`` trials, halves rounded up.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    key = key or (lambda e: e.source_id)
    label = label or (lambda e: e.group_label)

    trial_label: dict = {}
    for e in examples:
        k, lab = key(e), label(e)
        if trial_label.setdefault(k, lab) != lab:
            raise ValueError(f"trial {k!r} carries mixed stratification labels")
    by_label: dict = defaultdict(list)
    for k, lab in trial_label.items():
        by_label[lab].append(k)
    if not by_label:
        raise DegenerateSplit("no examples to split")

    rng = np.random.default_rng(seed)
    test_keys = set()
    for lab in sorted(by_label, key=str):
        keys = sorted(by_label[lab], key=str)
        n_test = math.floor(len(keys) * test_fraction + 0.5)
        if n_test == 0 or n_test == len(keys):
            raise DegenerateSplit(
                f"class {lab!r} with {len(keys)} trials leaves one side empty at {test_fraction}"
            )
        perm = rng.permutation(len(keys))
        test_keys.update(keys[j] for j in perm[:n_test])
    train = [e for e in examples if key(e) not in test_keys]
    test = [e for e in examples if key(e) in test_keys]
    return train, test


def split_keys(
    keys: Sequence[Hashable], labels: Sequence[Hashable], test_fraction: float, seed: int
) -> np.ndarray:
    """Array form of `split`: boolean test mask for parallel key/label arrays."""
    rows = [_KeyRow(k, lab, i) for i, (k, lab) in enumerate(zip(keys, labels))]
    _, test = split(rows, test_fraction, seed, key=lambda r: r.key, label=lambda r: r.label)
    mask = np.zeros(len(rows), dtype=bool)
    mask[[r.index for r in test]] = True
    return mask


@dataclass(frozen=True)
class _KeyRow:
    key: Hashable
    label: Hashable
    index: int = field(default=0)
