"""Experiment config files (YAML) with strict key checking.

Example::

    seed: 0
    output: runs/demo
    data:
      manifest: null            # or a path; null -> synthesize from `synthetic`
      synthetic: {n_classes: 3, dim: 16, frames: 16, ood_classes: 1}
    combiner: {mode: single, index: 0}
    model: {heads: 8, conv_kernel: 5, feedforward_dim: 1024, classifier_hidden: 256}
    losses: {alpha: 0.1, beta: 1.0, margin: 1.0}
    trainer: {epochs: 30, batch_size: 32, learning_rate: 0.001, slack: 1.0}
    probe: {epochs: 20}
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .datastore import SyntheticConfig
from .layercomb import CombinerSpec
from .losses import LossWeights
from .model import ModelConfig, ModuleConfig
from .probe import ProbeConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticSection:
    n_classes: int = 3
    dim: int = 16
    frames: int = 16
    cluster_separation: float = 5.0
    noise_scale: float = 0.1
    samples_per_class: int = 250
    split_counts: list[int] | None = None
    layers: int = 1
    signal_layers: list[int] | None = None
    content_scale: float = 1.0
    content_rank: int = 2
    ood_displacement: float = 1.5
    ood_classes: int = 1


@dataclass
class DataSection:
    manifest: str | None = None
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)


@dataclass
class CombinerSection:
    mode: str = "single"
    index: int = 0


@dataclass
class ModelSection:
    heads: int = 8
    conv_kernel: int = 5
    feedforward_dim: int = 1024
    classifier_hidden: int = 256
    encoder_dims: list[int] | None = None  # null -> paper widths scaled to the input dim
    dropout: float = 0.0
    dtype: str = "float32"


@dataclass
class LossesSection:
    alpha: float = 0.1
    beta: float = 1.0
    margin: float | str = 1.0  # "inf" for the unhinged form


@dataclass
class TrainerSection:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    patience: int | None = None
    slack: float = 1.0
    threshold_source: str = "eval_pass"


@dataclass
class ProbeSection:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    eval_split: str = "dev"


@dataclass
class ExperimentConfig:
    seed: int = 0
    output: str = "runs/experiment"
    data: DataSection = field(default_factory=DataSection)
    combiner: CombinerSection = field(default_factory=CombinerSection)
    model: ModelSection = field(default_factory=ModelSection)
    losses: LossesSection = field(default_factory=LossesSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    probe: ProbeSection = field(default_factory=ProbeSection)

    # -- conversions to library configs -----------------------------------

    def synthetic_config(self) -> tuple[SyntheticConfig, int]:
        s = self.data.synthetic
        return SyntheticConfig(
            n_classes=s.n_classes, dim=s.dim, frames=s.frames, cluster_separation=s.cluster_separation,
            noise_scale=s.noise_scale, seed=self.seed, samples_per_class=s.samples_per_class,
            split_counts=tuple(s.split_counts) if s.split_counts else None, layers=s.layers,
            signal_layers=tuple(s.signal_layers) if s.signal_layers is not None else None,
            content_scale=s.content_scale, content_rank=s.content_rank, ood_displacement=s.ood_displacement,
        ), s.ood_classes

    def combiner_spec(self) -> CombinerSpec:
        return CombinerSpec(self.combiner.mode, self.combiner.index)

    def model_config(self, input_dim: int, n_classes: int) -> ModelConfig:
        m = self.model
        if m.encoder_dims is None:
            return ModelConfig.scaled(input_dim, n_classes, m.heads, m.conv_kernel, m.feedforward_dim,
                                      m.classifier_hidden, m.dropout)
        mods = tuple(ModuleConfig(d, m.conv_kernel, m.heads, m.feedforward_dim) for d in m.encoder_dims)
        return ModelConfig(input_dim, n_classes, mods, m.classifier_hidden, m.dropout)

    def loss_weights(self) -> LossWeights:
        margin = self.losses.margin
        margin = math.inf if isinstance(margin, str) and margin.lower() in ("inf", "infinity") else float(margin)
        return LossWeights(self.losses.alpha, self.losses.beta, margin)

    def train_config(self) -> TrainConfig:
        t = self.trainer
        return TrainConfig(t.epochs, t.batch_size, t.learning_rate, (t.beta1, t.beta2), seed=self.seed,
                           weights=self.loss_weights(), patience=t.patience, slack=t.slack,
                           threshold_source=t.threshold_source)

    def probe_config(self) -> ProbeConfig:
        p = self.probe
        return ProbeConfig(p.epochs, p.batch_size, p.learning_rate, self.seed, p.eval_split)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        path = f"{where}.{key}" if where else str(key)
        if key not in known:
            raise ConfigError(f"unknown config key '{path}'")
        sub = known[key].default_factory if known[key].default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[key] = _build(sub, value, path)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def parse_config(raw: dict | None) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, raw or {}, "")
    # fail early on invalid values, naming the section
    for section, make in (("combiner", cfg.combiner_spec), ("losses", cfg.loss_weights),
                          ("trainer", cfg.train_config)):
        try:
            make()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return parse_config(raw)


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
