"""Manifest ingestion, binary feature files, and synthetic feature generation.

Feature files (``.vpf``) are little-endian::

    b"VPF1" | u32 version (=1) | u32 L | u32 T | u32 D | L*T*D float32

with the payload in layer-major, then frame-major, then dim order.

Manifests are JSON lines, one record per line::

    {"feature_path": "features/train_0_00000.vpf", "label": 0, "split": "train"}

``label`` is a class index or the literal string ``"OOD"``. Relative feature
paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

OOD = "OOD"
SPLITS = ("train", "dev", "test")

MAGIC = b"VPF1"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")

Label = Union[int, str]


class FeatureFileError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    feature_path: Path
    label: Label
    split: str

    @property
    def is_ood(self) -> bool:
        return self.label == OOD


# ---------------------------------------------------------------------------
# feature files


def write_feature(path, feature: np.ndarray) -> None:
    """Write an ``L x T x D`` stack as float32."""
    arr = np.asarray(feature)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise FeatureFileError(f"feature must be a non-empty L x T x D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FeatureFileError("feature contains non-finite values")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = _HEADER.pack(MAGIC, VERSION, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_feature(path) -> np.ndarray:
    """Read a feature file into a float32 ``L x T x D`` array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FeatureFileError(f"{path}: file too short for header")
    magic, version, n_layers, n_frames, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    if min(n_layers, n_frames, dim) < 1:
        raise FeatureFileError(f"{path}: empty shape ({n_layers}, {n_frames}, {dim})")
    expected = n_layers * n_frames * dim * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FeatureFileError(
            f"{path}: payload size mismatch (header declares {expected} bytes, found {len(payload)})"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(n_layers, n_frames, dim).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise FeatureFileError(f"{path}: non-finite values in payload")
    return arr


# ---------------------------------------------------------------------------
# manifests


def _parse_label(value, lineno: int) -> Label:
    if value == OOD:
        return OOD
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ManifestError(f"line {lineno}: label must be a non-negative integer or {OOD!r}, got {value!r}")
    return value


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ManifestError(f"line {lineno}: malformed record (expected an object)")
            missing = {"feature_path", "label", "split"} - rec.keys()
            if missing:
                raise ManifestError(f"line {lineno}: malformed record, missing {sorted(missing)}")
            label = _parse_label(rec["label"], lineno)
            split = rec["split"]
            if split not in SPLITS:
                raise ManifestError(f"line {lineno}: unknown split {split!r}")
            if label == OOD and split != "test":
                raise ManifestError(f"line {lineno}: OOD sample in {'training' if split == 'train' else split} split")
            fpath = Path(rec["feature_path"])
            if not fpath.is_absolute():
                fpath = root / fpath
            entries.append(ManifestEntry(fpath, label, split))

    labels = {e.label for e in entries if e.label != OOD}
    if labels and labels != set(range(max(labels) + 1)):
        raise ManifestError(f"non-contiguous class indices: {sorted(labels)}")
    return entries


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    path = Path(path)
    root = path.parent.resolve()
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fp = Path(e.feature_path)
            try:
                fp = fp.resolve().relative_to(root)
            except ValueError:
                pass
            fh.write(json.dumps({"feature_path": fp.as_posix(), "label": e.label, "split": e.split}) + "\n")


def n_classes_of(entries: Sequence[ManifestEntry]) -> int:
    labels = [e.label for e in entries if e.label != OOD]
    return max(labels) + 1 if labels else 0


# ---------------------------------------------------------------------------
# in-memory datasets


@dataclass
class FeatureDataset:
    """Feature stacks with labels; the unit the trainer, detector and probe consume."""

    stacks: list[np.ndarray]
    labels: list[Label]
    splits: list[str]
    ids: list[str]
    n_classes: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not (len(self.stacks) == len(self.labels) == len(self.splits) == len(self.ids)):
            raise ValueError("dataset columns have unequal lengths")
        if not self.class_names:
            self.class_names = [f"class_{i}" for i in range(self.n_classes)]
        if self.stacks:
            n_layers, _, dim = self.stacks[0].shape
            for s, sid in zip(self.stacks, self.ids):
                if s.shape[0] != n_layers or s.shape[2] != dim:
                    raise ValueError(f"{sid}: stack shape {s.shape} disagrees with L={n_layers}, D={dim}")

    def __len__(self):
        return len(self.stacks)

    @property
    def n_layers(self) -> int:
        return self.stacks[0].shape[0]

    @property
    def dim(self) -> int:
        return self.stacks[0].shape[2]

    def split(self, name: str) -> "FeatureDataset":
        idx = [i for i, s in enumerate(self.splits) if s == name]
        return self.take(idx)

    def take(self, idx: Sequence[int]) -> "FeatureDataset":
        return FeatureDataset(
            [self.stacks[i] for i in idx],
            [self.labels[i] for i in idx],
            [self.splits[i] for i in idx],
            [self.ids[i] for i in idx],
            self.n_classes,
            list(self.class_names),
        )

    def split_counts(self) -> dict[str, dict[Label, int]]:
        counts: dict[str, dict[Label, int]] = {s: {} for s in SPLITS}
        for lab, sp in zip(self.labels, self.splits):
            counts[sp][lab] = counts[sp].get(lab, 0) + 1
        return counts


def load_dataset(manifest_path) -> FeatureDataset:
    entries = load_manifest(manifest_path)
    if not entries:
        raise ManifestError(f"{manifest_path}: empty manifest")
    stacks = [read_feature(e.feature_path) for e in entries]
    return FeatureDataset(
        stacks=stacks,
        labels=[e.label for e in entries],
        splits=[e.split for e in entries],
        ids=[e.feature_path.stem for e in entries],
        n_classes=n_classes_of(entries),
    )


# ---------------------------------------------------------------------------
# synthetic features


@dataclass(frozen=True)
class SyntheticConfig:
    """Desk-scale stand-in for extractor features.

    Each frame is ``class_mean + content + noise``. Class means sit on
    orthogonal directions with pairwise Euclidean distance
    ``cluster_separation``. ``content`` is a smooth low-rank per-utterance
    signal drawn from one class-independent distribution, so decoders have to
    reconstruct it rather than memorise a template. With ``layers > 1`` only
    ``signal_layers`` (default: all) carry the class mean.
    """

    n_classes: int = 3
    dim: int = 16
    frames: int = 16
    cluster_separation: float = 5.0
    noise_scale: float = 0.1
    seed: int = 0
    samples_per_class: int = 250
    split_counts: tuple[int, int, int] | None = None
    layers: int = 1
    signal_layers: tuple[int, ...] | None = None
    content_scale: float = 1.0
    content_rank: int = 2
    ood_displacement: float = 1.5

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if min(self.dim, self.frames, self.layers) < 1:
            raise ValueError("dim, frames and layers must be >= 1")
        if self.cluster_separation < 0 or self.noise_scale <= 0:
            raise ValueError("cluster_separation must be >= 0 and noise_scale > 0")
        if self.signal_layers is not None and any(not 0 <= k < self.layers for k in self.signal_layers):
            raise ValueError("signal_layers out of range")

    def counts(self) -> tuple[int, int, int]:
        if self.split_counts is not None:
            return tuple(self.split_counts)
        n = self.samples_per_class
        n_dev = n // 10
        n_test = n // 10
        return n - n_dev - n_test, n_dev, n_test


def _class_directions(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    g = rng.standard_normal((dim, count))
    if count <= dim:
        q, r = np.linalg.qr(g)
        return (q * np.sign(np.diag(r))).T
    return (g / np.linalg.norm(g, axis=0)).T


def _smooth_content(rng, frames: int, rank: int) -> np.ndarray:
    # unit-variance AR(1) trajectories
    rho = 0.8
    z = np.empty((frames, rank))
    z[0] = rng.standard_normal(rank)
    for t in range(1, frames):
        z[t] = rho * z[t - 1] + np.sqrt(1 - rho**2) * rng.standard_normal(rank)
    return z


def synthesize(config: SyntheticConfig, ood_classes: int = 0) -> FeatureDataset:
    """Generate a dataset in memory. Pure function of ``(config, ood_classes)``."""
    rng = np.random.default_rng(config.seed)
    n, d = config.n_classes, config.dim
    dirs = _class_directions(rng, d, n + ood_classes)
    scale = config.cluster_separation / np.sqrt(2.0)
    means = [scale * dirs[c] for c in range(n)]
    means += [config.ood_displacement * scale * dirs[n + o] for o in range(ood_classes)]
    rank = max(1, min(config.content_rank, d))
    mixing = _class_directions(rng, d, rank).T  # d x rank

    signal = set(range(config.layers) if config.signal_layers is None else config.signal_layers)
    n_train, n_dev, n_test = config.counts()

    def sample(mean):
        content = config.content_scale * _smooth_content(rng, config.frames, rank) @ mixing.T
        stack = np.empty((config.layers, config.frames, d))
        for k in range(config.layers):
            noise = config.noise_scale * rng.standard_normal((config.frames, d))
            stack[k] = content + noise + (mean if k in signal else 0.0)
        return stack.astype(np.float32)

    stacks, labels, splits, ids = [], [], [], []
    for split, count in zip(SPLITS, (n_train, n_dev, n_test)):
        for c in range(n):
            for i in range(count):
                stacks.append(sample(means[c]))
                labels.append(c)
                splits.append(split)
                ids.append(f"{split}_{c}_{i:05d}")
    for o in range(ood_classes):
        for i in range(n_test):
            stacks.append(sample(means[n + o]))
            labels.append(OOD)
            splits.append("test")
            ids.append(f"test_ood{o}_{i:05d}")
    return FeatureDataset(stacks, labels, splits, ids, n)


def generate_synthetic(config: SyntheticConfig, ood_classes: int, out_dir) -> Path:
    """Write a synthetic dataset under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    ds = synthesize(config, ood_classes)
    entries = []
    for stack, label, split, sid in zip(ds.stacks, ds.labels, ds.splits, ds.ids):
        fpath = feat_dir / f"{sid}.vpf"
        write_feature(fpath, stack)
        entries.append(ManifestEntry(fpath, label, split))
    manifest = out_dir / "manifest.jsonl"
    tmp = manifest.with_name(manifest.name + ".partial")
    write_manifest(tmp, entries)
    os.replace(tmp, manifest)
    return manifest
