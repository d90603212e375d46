"""Per-layer linear probes: how much class information each layer carries."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .datastore import OOD, FeatureDataset


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    eval_split: str = "dev"


@dataclass
class ProbeResult:
    accuracies: list[float]
    best_layer: int
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ProbeResult":
        return cls(**json.loads(text))


def _pooled(dataset: FeatureDataset, layer: int) -> np.ndarray:
    return np.stack([s[layer].mean(axis=0) for s in dataset.stacks]).astype(np.float32)


def probe_layer(train_x: np.ndarray, train_y: np.ndarray, eval_x: np.ndarray, eval_y: np.ndarray,
                n_classes: int, config: ProbeConfig) -> float:
    """Fit one affine softmax classifier and return its accuracy on the eval set."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        clf = nn.Linear(train_x.shape[1], n_classes)
    opt = torch.optim.Adam(clf.parameters(), lr=config.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    x, y = torch.from_numpy(train_x), torch.from_numpy(train_y)
    for epoch in range(config.epochs):
        perm = np.random.default_rng([config.seed, epoch]).permutation(len(x))
        for start in range(0, len(x), config.batch_size):
            idx = torch.from_numpy(perm[start:start + config.batch_size])
            opt.zero_grad()
            loss_fn(clf(x[idx]), y[idx]).backward()
            opt.step()
    with torch.no_grad():
        pred = clf(torch.from_numpy(eval_x)).argmax(dim=1).numpy()
    return float((pred == eval_y).mean())


def probe_layers(dataset: FeatureDataset, config: ProbeConfig = ProbeConfig(),
                 layers=None) -> ProbeResult:
    """Train a probe on mean-pooled frames of each layer (train split) and
    report accuracy on ``config.eval_split``. Every layer uses the same seed."""
    if any(lab == OOD for lab in dataset.labels):
        raise ValueError("probe is closed-set; remove OOD samples first")
    train, held = dataset.split("train"), dataset.split(config.eval_split)
    if len(train) == 0 or len(held) == 0:
        raise ValueError(f"probe needs non-empty train and {config.eval_split} splits")
    n_classes = len(set(train.labels))
    if n_classes < 2:
        raise ValueError("probe needs at least two classes")
    n_classes = max(n_classes, dataset.n_classes)
    ty = np.asarray(train.labels, dtype=np.int64)
    ey = np.asarray(held.labels, dtype=np.int64)
    layers = range(dataset.n_layers) if layers is None else layers
    acc = {k: probe_layer(_pooled(train, k), ty, _pooled(held, k), ey, n_classes, config) for k in layers}
    accuracies = [acc[k] for k in sorted(acc)]
    return ProbeResult(accuracies, int(np.argmax(accuracies)), asdict(config))
