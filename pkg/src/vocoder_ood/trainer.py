"""Training loop, threshold calibration and checkpoint persistence."""

from __future__ import annotations

import io
import json
import logging
import os
import time
import zipfile
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .datastore import OOD, FeatureDataset
from .layercomb import CombinerSpec
from .losses import DivergedError, LossBreakdown, LossWeights, batch_objective, sequence_mse
from .model import ModelConfig, VocoderAutoencoder

log = logging.getLogger(__name__)

THRESHOLD_SOURCES = ("eval_pass", "last_epoch_running")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    patience: int | None = None
    slack: float = 1.0
    threshold_source: str = "eval_pass"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.slack < 0:
            raise ValueError("slack must be >= 0")
        if self.threshold_source not in THRESHOLD_SOURCES:
            raise ValueError(f"threshold_source must be one of {THRESHOLD_SOURCES}")


@dataclass(frozen=True)
class ThresholdSet:
    tau: tuple[float, ...]

    def __post_init__(self):
        if any(not np.isfinite(t) or t < 0 for t in self.tau):
            raise ValueError(f"thresholds must be finite and >= 0: {self.tau}")

    def __len__(self):
        return len(self.tau)

    def scaled(self, slack: float) -> "ThresholdSet":
        return ThresholdSet(tuple(slack * t for t in self.tau))


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)  # {"epoch", "train": {...}, "dev": {...} | None}
    thresholds: ThresholdSet | None = None
    unscaled_thresholds: ThresholdSet | None = None
    wall_time: float = 0.0
    seed: int = 0
    steps: int = 0
    early_stopped_at: int | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds.tau) if self.thresholds else None
        d["unscaled_thresholds"] = list(self.unscaled_thresholds.tau) if self.unscaled_thresholds else None
        return d


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; ``snapshot`` holds the parameters at that step."""

    def __init__(self, message: str, epoch: int, step: int, snapshot: dict):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.snapshot = snapshot


def _check_id_only(dataset: FeatureDataset, n_classes: int) -> None:
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    if any(lab == OOD for lab in dataset.labels):
        raise ValueError("training data must contain only in-distribution samples")
    if any(not 0 <= lab < n_classes for lab in dataset.labels):
        raise ValueError(f"labels outside 0..{n_classes - 1}")


def _batches_by_length(dataset: FeatureDataset, order: Sequence[int], dtype) -> list[tuple[torch.Tensor, torch.Tensor, int]]:
    """Split one batch of indices into equal-length groups."""
    groups = defaultdict(list)
    for i in order:
        groups[dataset.stacks[i].shape[1]].append(i)
    out = []
    for t in sorted(groups):
        idx = groups[t]
        stacks = torch.as_tensor(np.stack([dataset.stacks[i] for i in idx]), dtype=dtype)
        labels = torch.as_tensor([dataset.labels[i] for i in idx], dtype=torch.long)
        out.append((stacks, labels, len(idx)))
    return out


def _mean_breakdown(items: list[tuple[LossBreakdown, int]]) -> dict:
    n = sum(w for _, w in items)
    return {k: sum(getattr(b, k) * w for b, w in items) / n for k in ("rec", "con", "cls", "total")}


def evaluate_losses(model: VocoderAutoencoder, dataset: FeatureDataset, weights: LossWeights,
                    batch_size: int = 256) -> dict:
    """Mean loss breakdown over a dataset in evaluation mode."""
    was_training = model.training
    model.eval()
    items = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            for stacks, labels, n in _batches_by_length(dataset, range(start, min(start + batch_size, len(dataset))), model.dtype):
                _, b, _ = batch_objective(model, model.combine(stacks), labels, weights)
                items.append((b, n))
    model.train(was_training)
    return _mean_breakdown(items)


def fit(model: VocoderAutoencoder, dataset: FeatureDataset, config: TrainConfig,
        dev: FeatureDataset | None = None, log_path=None) -> tuple[VocoderAutoencoder, TrainReport]:
    """Train in place on ID samples; returns the model and a report with thresholds."""
    _check_id_only(dataset, model.n_classes)
    if dev is not None and len(dev) == 0:
        dev = None
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps)
    report = TrainReport(seed=config.seed, config=asdict(config))
    t0 = time.perf_counter()
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    best_dev, stale = np.inf, 0
    running = None
    try:
        for epoch in range(1, config.epochs + 1):
            model.train()
            rng = np.random.default_rng([config.seed, epoch])
            perm = rng.permutation(len(dataset))
            items = []
            running = defaultdict(list)
            for start in range(0, len(perm), config.batch_size):
                batch = perm[start:start + config.batch_size]
                opt.zero_grad(set_to_none=True)
                parts = []
                for stacks, labels, n in _batches_by_length(dataset, batch, model.dtype):
                    x = model.combine(stacks)
                    try:
                        total, b, matched = batch_objective(model, x, labels, config.weights)
                    except DivergedError as exc:
                        snapshot = {k: v.detach().clone() for k, v in model.state_dict().items()}
                        raise TrainingDiverged(f"epoch {epoch}, step {report.steps + 1}: {exc}",
                                               epoch, report.steps + 1, snapshot) from None
                    (total * (n / len(batch))).backward()
                    parts.append((b, n))
                    for lab, m in zip(labels.tolist(), matched.tolist()):
                        running[lab].append(m)
                b = LossBreakdown(**_mean_breakdown(parts))
                opt.step()
                report.steps += 1
                items.append((b, len(batch)))
                if log_fh:
                    log_fh.write(json.dumps({"epoch": epoch, "step": report.steps, **b.as_dict()}) + "\n")
            train_mean = _mean_breakdown(items)
            dev_mean = evaluate_losses(model, dev, config.weights) if dev is not None else None
            report.epochs.append({"epoch": epoch, "train": train_mean, "dev": dev_mean})
            log.info("epoch %d train %s dev %s", epoch, train_mean, dev_mean)
            if config.patience is not None and dev_mean is not None:
                if dev_mean["rec"] < best_dev:
                    best_dev, stale = dev_mean["rec"], 0
                else:
                    stale += 1
                    if stale >= config.patience:
                        report.early_stopped_at = epoch
                        break
    finally:
        if log_fh:
            log_fh.close()

    missing = sorted(set(range(model.n_classes)) - set(dataset.labels))
    if missing:
        log.warning("classes %s have no training samples; thresholds left uncalibrated", missing)
    else:
        if config.threshold_source == "eval_pass":
            base = calibrate_thresholds(model, dataset)
        else:
            base = ThresholdSet(tuple(float(np.mean(running[j])) for j in range(model.n_classes)))
        report.unscaled_thresholds = base
        report.thresholds = base.scaled(config.slack)
    report.wall_time = time.perf_counter() - t0
    model.eval()
    return model, report


def matched_mse(model: VocoderAutoencoder, dataset: FeatureDataset, batch_size: int = 256) -> np.ndarray:
    """Per-sample error of each sample's own-class decoder, evaluation mode."""
    model.eval()
    out = np.empty(len(dataset))
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = list(range(start, min(start + batch_size, len(dataset))))
            by_len = defaultdict(list)
            for i in idx:
                by_len[dataset.stacks[i].shape[1]].append(i)
            for group in by_len.values():
                x = model.combine(torch.as_tensor(np.stack([dataset.stacks[i] for i in group])))
                h = model.encode(x)
                labels = np.array([dataset.labels[i] for i in group])
                for j in np.unique(labels):
                    sel = np.flatnonzero(labels == j)
                    err = sequence_mse(x[sel], model.decode(int(j), h[sel]))
                    out[np.asarray(group)[sel]] = err.double().numpy()
    return out


def calibrate_thresholds(model: VocoderAutoencoder, dataset: FeatureDataset, slack: float = 1.0) -> ThresholdSet:
    """``tau[j]`` = slack x mean matched-decoder MSE over class-``j`` samples."""
    _check_id_only(dataset, model.n_classes)
    errors = matched_mse(model, dataset)
    labels = np.asarray(dataset.labels)
    tau = []
    for j in range(model.n_classes):
        sel = labels == j
        if not sel.any():
            raise ValueError(f"class {j} has no samples to calibrate on")
        tau.append(slack * float(errors[sel].mean()))
    return ThresholdSet(tuple(tau))


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = "VOCODER-OOD-CKPT"
CHECKPOINT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(model: VocoderAutoencoder, thresholds: ThresholdSet | None, path) -> None:
    """Write a zip archive; identical models give byte-identical files.

    Members: ``format.json`` (magic, version), ``model.json`` (config, combiner,
    seed, dtype), ``thresholds.json`` (optional) and ``params/<name>.npy``.
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with zipfile.ZipFile(tmp, "w") as zf:
        _zip_write(zf, "format.json", json.dumps({"magic": CHECKPOINT_MAGIC, "version": CHECKPOINT_VERSION}).encode())
        _zip_write(zf, "model.json", json.dumps(model.describe(), indent=2, sort_keys=True).encode())
        if thresholds is not None:
            _zip_write(zf, "thresholds.json", json.dumps({"tau": list(thresholds.tau)}).encode())
        for name, tensor in model.state_dict().items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
            _zip_write(zf, f"params/{name}.npy", buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[VocoderAutoencoder, ThresholdSet | None]:
    path = Path(path)
    if not zipfile.is_zipfile(path):
        raise CheckpointError(f"{path}: not a checkpoint archive (bad magic)")
    try:
        with zipfile.ZipFile(path) as zf:
            fmt = json.loads(zf.read("format.json"))
            if fmt.get("magic") != CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path}: bad magic {fmt.get('magic')!r}")
            if fmt.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {fmt.get('version')}")
            meta = json.loads(zf.read("model.json"))
            names = zf.namelist()
            thresholds = None
            if "thresholds.json" in names:
                thresholds = ThresholdSet(tuple(json.loads(zf.read("thresholds.json"))["tau"]))
            model = VocoderAutoencoder(
                ModelConfig.from_dict(meta["config"]),
                n_layers=meta["n_layers"],
                combiner=CombinerSpec(**meta["combiner"]),
                seed=meta["seed"],
                dtype=getattr(torch, meta["dtype"]),
            )
            state = {}
            for name in model.state_dict():
                arr = np.load(io.BytesIO(zf.read(f"params/{name}.npy")), allow_pickle=False)
                state[name] = torch.from_numpy(arr)
    except (KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    model.load_state_dict(state)
    model.eval()
    return model, thresholds


def with_ablation(config: TrainConfig, ablate: Sequence[str]) -> TrainConfig:
    """Apply ``no-contrastive`` (alpha=0) and ``no-classifier`` (beta=0).

    Both together give the stacked "without classifier" row of the ablation table."""
    w = config.weights
    for a in ablate:
        if a == "no-contrastive":
            w = replace(w, alpha=0.0)
        elif a == "no-classifier":
            w = replace(w, beta=0.0)
        else:
            raise ValueError(f"unknown ablation {a!r}")
    return replace(config, weights=w)
