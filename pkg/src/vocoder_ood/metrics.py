"""Accuracy and macro precision / recall / F1 over ``n`` ID classes plus OOD.

OOD is a full class (index ``n``) in every macro average. Empty rows or
columns give 0 for the affected per-class value rather than a division error.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .datastore import OOD, Label


def label_index(label: Label, n_classes: int) -> int:
    if label == OOD:
        return n_classes
    if isinstance(label, (int, np.integer)) and 0 <= label < n_classes:
        return int(label)
    raise ValueError(f"unknown label {label!r} for {n_classes} ID classes")


def confusion(predictions: Sequence, truths: Sequence[Label], n_classes: int) -> np.ndarray:
    """Tally an ``(n+1) x (n+1)`` matrix; rows are true labels.

    ``predictions`` may be Decisions or raw labels.
    """
    if len(predictions) != len(truths):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(truths)} truths")
    cm = np.zeros((n_classes + 1, n_classes + 1), dtype=np.int64)
    for p, t in zip(predictions, truths):
        p = getattr(p, "label", p)
        cm[label_index(t, n_classes), label_index(p, n_classes)] += 1
    return cm


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass
class MetricsReport:
    acc: float
    map: float
    recall: float
    f1: float
    precision_per_class: list[float]
    recall_per_class: list[float]
    f1_per_class: list[float]

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def table(self, name: str = "model") -> str:
        head = f"{'Model':<24}{'Acc':>8}{'MAP':>8}{'Recall':>8}{'F1':>8}"
        row = f"{name:<24}" + "".join(f"{100 * v:>8.2f}" for v in (self.acc, self.map, self.recall, self.f1))
        return head + "\n" + row


def report(cm: np.ndarray) -> MetricsReport:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(cm).astype(np.float64)
    precision = _safe_div(diag, cm.sum(axis=0).astype(np.float64))
    recall = _safe_div(diag, cm.sum(axis=1).astype(np.float64))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return MetricsReport(
        acc=float(diag.sum() / total),
        map=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        precision_per_class=precision.tolist(),
        recall_per_class=recall.tolist(),
        f1_per_class=f1.tolist(),
    )
