"""Pipeline configuration: nested dataclasses loaded from JSON with strict key checking."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .nn import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    main_dir: str | None = None  # UCI `.rd` corpus; None -> synthetic corpus
    artifact_dir: str | None = None  # artifact CSVs; None -> synthetic corpus
    condition: str | None = None  # e.g. "S1 obj"
    test_fraction: float = 0.3
    synthetic_subjects_per_group: int = 10
    synthetic_trials_per_subject: int = 10
    artifact_subjects: int = 3
    artifact_trials_per_kind: int = 2

    def validate(self):
        if not 0 < self.test_fraction < 1:
            raise ConfigError("data.test_fraction must be in (0, 1)")
        if self.condition is not None and self.condition not in ("S1 obj", "S2 match", "S2 nomatch"):
            raise ConfigError(f"data.condition {self.condition!r} unknown")


@dataclass
class DspSection:
    notch_f0: float = 60.0
    notch_q: float = 30.0
    window: int = 128
    overlap: float = 0.8
    detector_rate_hz: float = 128.0

    def validate(self):
        if self.notch_f0 <= 0 or self.notch_q <= 0:
            raise ConfigError("dsp.notch_f0 and dsp.notch_q must be positive")
        if self.window < 8:
            raise ConfigError("dsp.window must be >= 8")
        if not 0 <= self.overlap < 1:
            raise ConfigError("dsp.overlap must be in [0, 1)")


@dataclass
class ArtifactSection:
    hidden: list[int] = field(default_factory=lambda: [64, 32])
    epochs: int = 150
    learning_rate: float = 1e-3
    batch_size: int = 64
    channel_fraction_threshold: float = 0.25
    prune_sparsity: float = 0.5
    finetune_epochs: int = 30

    def validate(self):
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("artifact.hidden must list positive widths")
        if self.channel_fraction_threshold < 0:
            raise ConfigError("artifact.channel_fraction_threshold must be >= 0")
        if not 0 <= self.prune_sparsity < 1:
            raise ConfigError("artifact.prune_sparsity must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.finetune_epochs < 1:
            raise ConfigError("artifact epochs and batch size must be positive")


@dataclass
class FeaturesSection:
    select: bool = False
    corr_threshold: float = 0.9
    p_threshold: float = 0.05

    def validate(self):
        if not 0 < self.corr_threshold <= 1:
            raise ConfigError("features.corr_threshold must be in (0, 1]")
        if not 0 < self.p_threshold <= 1:
            raise ConfigError("features.p_threshold must be in (0, 1]")


@dataclass
class ModelSection:
    kind: str = "mlp"
    mlp_hidden: list[int] = field(default_factory=lambda: [512, 256, 128, 64, 32, 16])
    dropout_layers: int = 2  # hidden layers followed by dropout, counted from the input side
    cnn_conv: list[int] = field(default_factory=lambda: [16, 32])
    cnn_kernel: int = 3
    cnn_hidden: int = 64

    def validate(self):
        if self.kind not in ("mlp", "cnn"):
            raise ConfigError("model.kind must be 'mlp' or 'cnn'")
        if not 0 <= self.dropout_layers <= len(self.mlp_hidden):
            raise ConfigError("model.dropout_layers must be between 0 and the number of hidden layers")
        if len(self.cnn_conv) != 2 or self.cnn_kernel % 2 == 0:
            raise ConfigError("model.cnn_conv needs two widths and cnn_kernel must be odd")


@dataclass
class TrainingSection:
    epochs: int = 150
    learning_rate: float = 1e-3
    batch_size: int = 64
    dropout: float = 0.4

    def validate(self):
        try:
            self.to_train_config(0)
        except ValueError as exc:
            raise ConfigError(f"training: {exc}") from None

    def to_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.epochs, self.learning_rate, self.batch_size, self.dropout, seed)


@dataclass
class PruningSection:
    initial_sparsity: float = 0.0
    final_sparsity: float = 0.5
    begin_frac: float = 0.2
    end_frac: float = 0.8
    frequency: int = 100
    finetune_epochs: int = 50

    def validate(self):
        if not 0 <= self.initial_sparsity <= self.final_sparsity < 1:
            raise ConfigError("pruning sparsities must satisfy 0 <= initial <= final < 1")
        if not 0 <= self.begin_frac < self.end_frac <= 1:
            raise ConfigError("pruning needs 0 <= begin_frac < end_frac <= 1")
        if self.frequency < 1 or self.finetune_epochs < 1:
            raise ConfigError("pruning.frequency and pruning.finetune_epochs must be positive")


@dataclass
class EvalSection:
    reps: int = 30
    warmup: int = 5
    batch: int = 64
    sweep: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 0.9])

    def validate(self):
        if self.reps < 1 or self.warmup < 0 or self.batch < 1:
            raise ConfigError("eval.reps/batch must be positive and warmup >= 0")
        if self.sweep != sorted(self.sweep) or any(not 0 <= s <= 0.95 for s in self.sweep):
            raise ConfigError("eval.sweep must be ascending within [0, 0.95]")


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    dsp: DspSection = field(default_factory=DspSection)
    artifact: ArtifactSection = field(default_factory=ArtifactSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    pruning: PruningSection = field(default_factory=PruningSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0

    def validate(self) -> PipelineConfig:
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            if hasattr(section, "validate"):
                section.validate()
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> PipelineConfig:
        return _build(cls, doc, "").validate()

    @classmethod
    def load(cls, path: str | Path | None) -> PipelineConfig:
        if path is None:
            return cls().validate()
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def override(self, dotted: str, value: Any) -> PipelineConfig:
        """Set ``section.key`` (or a top-level key) and re-validate."""
        doc = self.to_dict()
        *head, last = dotted.split(".")
        node = doc
        for part in head:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[part]
        if last not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[last] = value
        return PipelineConfig.from_dict(doc)


def _check_type(default: Any, value: Any, where: str) -> None:
    if default is None:  # optional path-like fields
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")


def _build(cls, doc: Any, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}{name}.")
        else:
            _check_type(default, value, f"{where}{name}")
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None
