"""End-to-end wiring: corpora -> windows -> artifact tagging -> features -> models -> reports."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import baselines, dsp, evaluate, featsel, nn, prune
from .config import PipelineConfig
from .dataset import (
    ArtifactRecording,
    Condition,
    Group,
    Recording,
    generate_artifact_corpus,
    generate_main_corpus_with_blinks,
    load_artifact_corpus,
    load_corpus,
    split_keys,
)
from .evaluate import MetricsReport, bench_batch, confusion_metrics, latency_bench

log = logging.getLogger(__name__)


class MissingDetector(RuntimeError):
    pass


class RateMismatch(ValueError):
    pass


# --------------------------------------------------------------------------
# input preprocessing, persisted next to each model


@dataclass
class Preprocessor:
    """Input normalization for a network.

    kind ``window_zscore`` standardizes every window on its own (the artifact
    detector); ``channel`` applies per-channel statistics to (n, C, W) windows;
    ``column`` applies per-column statistics to feature rows. ``layout`` is
    ``flat`` when the network expects one vector per example.
    """

    kind: str
    layout: str = "flat"
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    columns: list[int] | None = None  # feature subset applied before scaling
    extra: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, kind: str, x: np.ndarray, layout: str = "flat", columns=None) -> Preprocessor:
        x = np.asarray(x, dtype=np.float64)
        if kind == "window_zscore":
            return cls(kind, layout)
        if columns is not None:
            x = x[:, columns]
        axes = (0, 2) if kind == "channel" else (0,)
        mean = x.mean(axis=axes)
        scale = x.std(axis=axes)
        scale[scale == 0] = 1.0
        return cls(kind, layout, mean, scale, None if columns is None else list(map(int, columns)))

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "window_zscore":
            z = (x - x.mean(axis=-1, keepdims=True)) / (x.std(axis=-1, keepdims=True) + 1e-6)
        else:
            if self.columns is not None:
                x = x[:, self.columns]
            if self.kind == "channel":
                z = (x - self.mean[None, :, None]) / self.scale[None, :, None]
            else:
                z = (x - self.mean) / self.scale
        if self.layout == "flat":
            z = z.reshape(len(z), -1)
        return np.ascontiguousarray(z, dtype=np.float32)

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "layout": self.layout,
            "mean": None if self.mean is None else self.mean.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
            "columns": self.columns,
            "extra": self.extra,
        }
        return json.dumps(doc) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Preprocessor:
        d = json.loads(text)
        arr = (lambda v: None if v is None else np.asarray(v, dtype=np.float64))
        return cls(d["kind"], d["layout"], arr(d["mean"]), arr(d["scale"]), d["columns"], d.get("extra", {}))


def sidecar_path(model_path: str | Path) -> Path:
    p = Path(model_path)
    return p.with_name(p.name + ".prep.json")


def save_model(net: nn.Network, prep: Preprocessor, path: str | Path, encoding="auto") -> int:
    size = prune.serialize(net, path, encoding)
    sidecar_path(path).write_text(prep.to_json())
    return size


def load_model(path: str | Path) -> tuple[nn.Network, Preprocessor]:
    net = prune.deserialize(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"missing preprocessing sidecar {side}")
    return net, Preprocessor.from_json(side.read_text())


# --------------------------------------------------------------------------
# corpora


def load_main(cfg: PipelineConfig, seed: int) -> tuple[list[Recording], set | None]:
    """Recordings from data.main_dir, or a synthetic corpus (with its blink keys)."""
    cond = Condition(cfg.data.condition) if cfg.data.condition else None
    if cfg.data.main_dir:
        return load_corpus(cfg.data.main_dir, cond), None
    recs, blinks = generate_main_corpus_with_blinks(
        seed=seed,
        subjects_per_group=cfg.data.synthetic_subjects_per_group,
        trials_per_subject=cfg.data.synthetic_trials_per_subject,
    )
    if cond is not None:
        recs = [r for r in recs if r.condition is cond]
    return recs, blinks


def load_artifacts(cfg: PipelineConfig, seed: int) -> list[ArtifactRecording]:
    if cfg.data.artifact_dir:
        return load_artifact_corpus(cfg.data.artifact_dir)
    return generate_artifact_corpus(
        seed=seed, subjects=cfg.data.artifact_subjects, trials_per_kind=cfg.data.artifact_trials_per_kind
    )


def window_config(cfg: PipelineConfig) -> dsp.WindowConfig:
    return dsp.WindowConfig(cfg.dsp.window, cfg.dsp.overlap)


# --------------------------------------------------------------------------
# artifact detector


@dataclass
class ArtifactWindows:
    x: np.ndarray  # (n, W) single-channel windows
    labels: np.ndarray  # 1 = overlaps the artifact interval
    source_ids: list[str]
    kinds: list[str]


def artifact_windows(recs: list[ArtifactRecording], wcfg: dsp.WindowConfig) -> ArtifactWindows:
    """Per-channel windows; a window is an artifact if it overlaps the artifact interval at all."""
    xs, ys, src, kinds = [], [], [], []
    for r in recs:
        w = dsp.make_windows(r.data, wcfg)
        n, c, width = w.shape
        off = dsp.window_offsets(r.data.shape[1], wcfg)
        a0, a1 = (int(round(t * r.sample_rate_hz)) for t in r.artifact_interval_s)
        lab = (off < a1) & (off + width > a0)
        xs.append(w.reshape(n * c, width))
        ys.append(np.repeat(lab, c))
        src += [r.source_id] * (n * c)
        kinds += [r.artifact_kind.value] * (n * c)
    return ArtifactWindows(np.concatenate(xs), np.concatenate(ys).astype(np.int64), src, kinds)


@dataclass
class DetectorResult:
    net: nn.Network
    prep: Preprocessor
    reports: list[MetricsReport]
    pruned: nn.Network | None = None


def _nn_report(net, prep, x_test, y_test, name, cfg, pruned, seed, sparse=False, **meta) -> MetricsReport:
    xt = prep.apply(x_test)
    engine = prune.SparseNetwork(net) if sparse else net
    pred = engine.predict_proba(xt).argmax(axis=1)
    m = confusion_metrics(pred, y_test)
    b = latency_bench(engine.forward if sparse else (lambda v: net.forward(v)[0]),
                      bench_batch(xt, cfg.eval.batch, seed), cfg.eval.warmup, cfg.eval.reps)
    size = len(prune.to_bytes(net))
    return MetricsReport(name, m.accuracy, m.f1, size, b.median_ms, pruned, meta.pop("setting", ""), seed,
                         {"iqr_ms": b.iqr_ms, "hardware": b.hardware, **meta})


def prune_finetune(net: nn.Network, x, y, final_sparsity: float, cfg: PipelineConfig, seed: int,
                   epochs: int | None = None, base: nn.TrainConfig | None = None) -> nn.Network:
    """Copy `net`, then fine-tune it while the schedule ramps the masks to `final_sparsity`."""
    pruned = net.copy()
    base = base or cfg.training.to_train_config(seed)
    epochs = epochs or cfg.pruning.finetune_epochs
    tcfg = nn.TrainConfig(epochs, base.learning_rate, base.batch_size, base.dropout, seed + 1)
    steps = epochs * -(-len(x) // tcfg.batch_size)
    p = cfg.pruning
    sched = prune.PruningSchedule.for_run(steps, final_sparsity, min(p.initial_sparsity, final_sparsity),
                                          p.begin_frac, p.end_frac, p.frequency)
    opt = nn.Adam(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps)
    cb = prune.PruningCallback(sched, opt)
    nn.train(pruned, x, y, tcfg, [cb], optimizer=opt)
    return pruned


def train_detector(recs: list[ArtifactRecording], cfg: PipelineConfig, seed: int,
                   with_pruning: bool = False) -> DetectorResult:
    """Train the per-channel artifact MLP on a recording-level 70:30 split."""
    aw = artifact_windows(recs, window_config(cfg))
    test = split_keys(aw.source_ids, aw.kinds, cfg.data.test_fraction, seed)
    prep = Preprocessor.fit("window_zscore", aw.x)
    xtr = prep.apply(aw.x[~test])
    a = cfg.artifact
    net = nn.build(nn.mlp_specs(cfg.dsp.window, a.hidden), (cfg.dsp.window,), seed, name="artifact_mlp")
    tcfg = nn.TrainConfig(a.epochs, a.learning_rate, a.batch_size, 0.0, seed)
    nn.train(net, xtr, aw.labels[~test], tcfg)
    reports = [_nn_report(net, prep, aw.x[test], aw.labels[test], "artifact_mlp", cfg, False, seed)]
    pruned = None
    if with_pruning:
        pruned = prune_finetune(net, xtr, aw.labels[~test], a.prune_sparsity, cfg, seed,
                                epochs=a.finetune_epochs, base=tcfg)
        reports.append(_nn_report(pruned, prep, aw.x[test], aw.labels[test], "artifact_mlp", cfg, True, seed,
                                  sparse=True, sparsity=prune.model_sparsity(pruned)))
    return DetectorResult(net, prep, reports, pruned)


# --------------------------------------------------------------------------
# main corpus windows and tagging


@dataclass
class MainWindows:
    x: np.ndarray  # (n, C, W) notch-filtered windows
    group: np.ndarray  # 1 = Alcoholic
    keys: list[tuple[str, int]]  # (subject, trial) per window
    rec_index: np.ndarray
    offsets: np.ndarray
    channels: tuple[str, ...]
    fs: float

    def __len__(self):
        return len(self.x)

    def select(self, mask: np.ndarray) -> MainWindows:
        idx = np.flatnonzero(mask)
        return MainWindows(self.x[idx], self.group[idx], [self.keys[i] for i in idx], self.rec_index[idx],
                           self.offsets[idx], self.channels, self.fs)


def notch(rec: Recording, cfg: PipelineConfig) -> np.ndarray:
    return dsp.notch_filter(rec.data, rec.sample_rate_hz, cfg.dsp.notch_f0, cfg.dsp.notch_q)


def main_windows(recs: list[Recording], cfg: PipelineConfig) -> MainWindows:
    """Notch-filter each recording and cut multi-channel windows."""
    if not recs:
        raise ValueError("no recordings")
    wcfg = window_config(cfg)
    channels, fs = recs[0].channels, recs[0].sample_rate_hz
    xs, group, keys, rec_idx, offs = [], [], [], [], []
    for i, r in enumerate(recs):
        if r.channels != channels or r.sample_rate_hz != fs:
            raise ValueError(f"{r.subject_id} trial {r.trial_number}: channel set or rate differs from the corpus")
        w = dsp.make_windows(notch(r, cfg), wcfg)
        xs.append(w.astype(np.float32))
        n = len(w)
        group += [int(r.group is Group.ALCOHOLIC)] * n
        keys += [r.key] * n
        rec_idx += [i] * n
        offs.append(dsp.window_offsets(r.n_samples, wcfg))
    return MainWindows(np.concatenate(xs), np.array(group), keys, np.array(rec_idx),
                       np.concatenate(offs), channels, fs)


@dataclass
class TagResult:
    flagged_fraction: np.ndarray
    removed: np.ndarray

    @property
    def n_removed(self) -> int:
        return int(self.removed.sum())


def removal_rule(flagged_fraction: np.ndarray, threshold: float) -> np.ndarray:
    """Remove when at least one channel is flagged and the flagged share reaches `threshold`."""
    f = np.asarray(flagged_fraction)
    return (f > 0) & (f >= threshold)


def detector_spans(recs: list[Recording], mw: MainWindows, cfg: PipelineConfig) -> np.ndarray:
    """(n_windows, C, W) detector inputs at the detector rate, centered on each window."""
    det_fs = cfg.dsp.detector_rate_hz
    width = cfg.dsp.window
    out = np.empty((len(mw), len(mw.channels), width), dtype=np.float64)
    cache: dict[int, np.ndarray] = {}
    for j, (ri, off) in enumerate(zip(mw.rec_index, mw.offsets)):
        if ri not in cache:
            r = recs[ri]
            x = notch(r, cfg)
            if np.isclose(r.sample_rate_hz, 2 * det_fs):
                x = dsp.resample_half(x, r.sample_rate_hz)
            elif not np.isclose(r.sample_rate_hz, det_fs):
                raise RateMismatch(f"recording at {r.sample_rate_hz} Hz, detector at {det_fs} Hz")
            if x.shape[-1] < width:
                raise dsp.TooShort(f"{x.shape[-1]} samples at {det_fs} Hz is shorter than {width}")
            cache = {ri: x}
        x = cache[ri]
        center = (off + cfg.dsp.window / 2) * det_fs / mw.fs
        start = int(np.clip(round(center - width / 2), 0, x.shape[-1] - width))
        out[j] = x[:, start : start + width]
    return out


def tag_windows(detector: nn.Network | None, prep: Preprocessor | None, recs: list[Recording],
                mw: MainWindows, cfg: PipelineConfig, threshold: float | None = None) -> TagResult:
    """Score every channel of every window with the detector and apply the removal rule."""
    if detector is None or prep is None:
        raise MissingDetector("artifact tagging needs a trained detector")
    threshold = cfg.artifact.channel_fraction_threshold if threshold is None else threshold
    spans = detector_spans(recs, mw, cfg)
    n, c, w = spans.shape
    flags = detector.predict_proba(prep.apply(spans.reshape(n * c, w))).argmax(axis=1).reshape(n, c)
    frac = flags.mean(axis=1)
    return TagResult(frac, removal_rule(frac, threshold))


# --------------------------------------------------------------------------
# main models


class Setting(str, Enum):
    ALL_NO_REMOVAL = "AllFeatures_NoArtifactRemoval"
    ALL_WITH_REMOVAL = "AllFeatures_WithArtifactRemoval"
    SELECTED_WITH_REMOVAL = "SelectedFeatures_WithArtifactRemoval"


MODELS = ("RF", "SVM", "MLP7")


def main_features(mw: MainWindows) -> dsp.FeatureMatrix:
    return dsp.feature_matrix(mw.x, mw.channels, mw.fs, group_labels=mw.group)


def trial_split(mw: MainWindows, cfg: PipelineConfig, seed: int) -> np.ndarray:
    """Boolean test mask over windows; whole trials go to one side, stratified by group."""
    return split_keys(mw.keys, mw.group, cfg.data.test_fraction, seed)


def majority_vote(pred: np.ndarray, keys: list) -> tuple[np.ndarray, list]:
    """Trial-level labels by majority of window predictions (ties -> class 0)."""
    votes: dict = {}
    for p, k in zip(pred, keys):
        votes.setdefault(k, []).append(int(p))
    order = list(votes)
    return np.array([int(np.mean(votes[k]) > 0.5) for k in order]), order


def build_main_net(cfg: PipelineConfig, input_shape: tuple[int, ...], seed: int) -> nn.Network:
    m = cfg.model
    if len(input_shape) == 2:
        return nn.cnn(input_shape[0], input_shape[1], seed, tuple(m.cnn_conv), m.cnn_kernel, m.cnn_hidden)
    return nn.main_mlp(input_shape[0], seed, cfg.training.dropout, tuple(m.mlp_hidden), m.dropout_layers)


@dataclass
class TrainedMain:
    net: nn.Network
    prep: Preprocessor
    x_train: np.ndarray  # preprocessed
    y_train: np.ndarray


def fit_main_nn(kind: str, x_raw: np.ndarray, y: np.ndarray, cfg: PipelineConfig, seed: int,
                columns=None) -> TrainedMain:
    """Train MLP-7 or the CNN. `x_raw` is (n, C, W) windows or (n, d) feature rows."""
    if x_raw.ndim == 3:
        prep = Preprocessor.fit("channel", x_raw, layout="channels" if kind == "cnn" else "flat")
    else:
        if kind == "cnn":
            raise ValueError("the CNN consumes windows, not feature rows")
        prep = Preprocessor.fit("column", x_raw, columns=columns)
    xt = prep.apply(x_raw)
    net = build_main_net(cfg, xt.shape[1:] if kind == "cnn" else (xt.shape[1],), seed)
    nn.train(net, xt, y, cfg.training.to_train_config(seed))
    return TrainedMain(net, prep, xt, y)


def _baseline_report(name, model, predict, x_test, y_test, setting, cfg, seed) -> MetricsReport:
    pred = predict(x_test)
    m = confusion_metrics(pred, y_test)
    b = latency_bench(predict, bench_batch(x_test, cfg.eval.batch, seed), cfg.eval.warmup, cfg.eval.reps)
    return MetricsReport(name, m.accuracy, m.f1, len(model.to_json().encode()), b.median_ms, False, setting, seed,
                         {"iqr_ms": b.iqr_ms, "hardware": b.hardware})


def run_setting(setting: Setting | str, mw: MainWindows, feats: dsp.FeatureMatrix, test_mask: np.ndarray,
                cfg: PipelineConfig, seed: int, tags: TagResult | None = None,
                models=MODELS) -> list[MetricsReport]:
    """Run one pipeline variant and report every requested model on the test trials.

    Settings with artifact removal drop tagged windows on both sides of the split.
    Feature selection (setting 3) is fitted on training rows only.
    """
    setting = Setting(setting)
    keep = np.ones(len(mw), dtype=bool)
    if setting is not Setting.ALL_NO_REMOVAL:
        if tags is None:
            raise MissingDetector(f"{setting.value} needs artifact tags")
        keep = ~tags.removed
    tr, te = keep & ~test_mask, keep & test_mask
    y = mw.group
    if len(np.unique(y[tr])) < 2 or len(np.unique(y[te])) < 2:
        raise ValueError(f"{setting.value}: artifact removal left a split side with one class")
    fx = feats.values
    columns = None
    if setting is Setting.SELECTED_WITH_REMOVAL:
        sel = featsel.select_features(fx[tr], y[tr], cfg.features.corr_threshold, cfg.features.p_threshold,
                                      feats.names)
        columns = sel.kept_indices
        log.info("%s: %d of %d features kept", setting.value, len(columns), fx.shape[1])
    fcols = fx if columns is None else fx[:, columns]
    reports = []
    for name in models:
        if name == "RF":
            forest = baselines.train_forest(fcols[tr], y[tr], baselines.ForestConfig(seed=seed))
            reports.append(_baseline_report("RF", forest, forest.predict, fcols[te], y[te], setting.value, cfg, seed))
        elif name == "SVM":
            svm = baselines.train_svm(fcols[tr], 2 * y[tr] - 1)
            reports.append(_baseline_report("SVM", svm, lambda v, s=svm: (baselines.predict_svm(s, v) > 0).astype(int),
                                            fcols[te], y[te], setting.value, cfg, seed))
        elif name == "MLP7":
            if columns is None:
                tm = fit_main_nn("mlp", mw.x[tr], y[tr], cfg, seed)
                x_test = mw.x[te]
            else:
                tm = fit_main_nn("mlp", fx[tr], y[tr], cfg, seed, columns=columns)
                x_test = fx[te]
            rep = _nn_report(tm.net, tm.prep, x_test, y[te], "MLP7", cfg, False, seed, setting=setting.value)
            pred = tm.net.predict_proba(tm.prep.apply(x_test)).argmax(axis=1)
            votes, order = majority_vote(pred, [mw.keys[i] for i in np.flatnonzero(te)])
            truth = {k: g for k, g in zip(mw.keys, mw.group)}
            rep.extra["trial_accuracy"] = confusion_metrics(votes, np.array([truth[k] for k in order])).accuracy
            reports.append(rep)
        else:
            raise ValueError(f"unknown model {name!r}")
    return reports


# --------------------------------------------------------------------------
# compression experiments


def compression_pair(kind: str, mw: MainWindows, test_mask: np.ndarray, cfg: PipelineConfig, seed: int,
                     keep: np.ndarray | None = None, sparsity: float | None = None
                     ) -> tuple[list[MetricsReport], TrainedMain, nn.Network]:
    """Dense twin and its pruned fine-tuned copy; the pruned row uses the sparse engine."""
    keep = np.ones(len(mw), dtype=bool) if keep is None else keep
    tr, te = keep & ~test_mask, keep & test_mask
    tm = fit_main_nn(kind, mw.x[tr], mw.group[tr], cfg, seed)
    name = "MLP7" if kind == "mlp" else "CNN"
    s = cfg.pruning.final_sparsity if sparsity is None else sparsity
    pruned = prune_finetune(tm.net, tm.x_train, tm.y_train, s, cfg, seed)
    rows = [
        _nn_report(tm.net, tm.prep, mw.x[te], mw.group[te], name, cfg, False, seed),
        _nn_report(pruned, tm.prep, mw.x[te], mw.group[te], name, cfg, True, seed, sparse=True,
                   sparsity=prune.model_sparsity(pruned)),
    ]
    return rows, tm, pruned


def run_sweep(tm: TrainedMain, x_test: np.ndarray, y_test: np.ndarray, cfg: PipelineConfig, seed: int,
              sparsities=None) -> list[evaluate.SweepRow]:
    """Prune-train at each sparsity from one dense model; every point runs on the sparse engine."""
    sparsities = cfg.eval.sweep if sparsities is None else sparsities
    xt = tm.prep.apply(x_test)
    batch = bench_batch(xt, cfg.eval.batch, seed)

    def train_pruned(s: float) -> nn.Network:
        if s == 0:
            return tm.net
        return prune_finetune(tm.net, tm.x_train, tm.y_train, s, cfg, seed)

    def accuracy(net: nn.Network) -> float:
        return confusion_metrics(net.predict_proba(xt).argmax(axis=1), y_test).accuracy

    def bench(net: nn.Network):
        return latency_bench(prune.SparseNetwork(net).forward, batch, cfg.eval.warmup, cfg.eval.reps)

    return evaluate.sparsity_sweep(train_pruned, accuracy, lambda net: len(prune.to_bytes(net)), bench, sparsities)


def report_rows(reports: list[MetricsReport], kind: str) -> list[dict]:
    if kind == "settings":
        return [{"setting": r.setting, "model": r.model, "accuracy": r.accuracy, "f1": r.f1} for r in reports]
    return [{"model": r.model, "pruned": r.pruned, "size_bytes": r.model_size_bytes,
             "latency_ms": r.latency_ms_per_minibatch, "accuracy": r.accuracy, "f1": r.f1} for r in reports]
