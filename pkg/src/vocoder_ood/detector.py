"""ID/OOD decisions from per-decoder reconstruction errors."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .datastore import OOD, FeatureDataset, Label
from .trainer import ThresholdSet

SCORE_COLUMNS = ("sample_id", "true_label", "predicted", "margin_to_threshold", "mse")


class UncalibratedModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class Decision:
    kind: str  # "ID" or "OOD"
    class_index: int | None
    mse_vector: tuple[float, ...]
    margin_to_threshold: float | None = None

    @property
    def label(self) -> Label:
        return OOD if self.kind == OOD else self.class_index


def decide(mse_vector: Sequence[float], thresholds: ThresholdSet | Sequence[float]) -> Decision:
    """Accept the lowest-error decoder among those at or under their threshold.

    No decoder under threshold means OOD. Ties go to the lowest index.
    """
    tau = thresholds.tau if isinstance(thresholds, ThresholdSet) else tuple(thresholds)
    mse = tuple(float(v) for v in mse_vector)
    if len(mse) != len(tau):
        raise ValueError(f"length mismatch: {len(mse)} errors vs {len(tau)} thresholds")
    if not all(math.isfinite(v) for v in mse + tuple(tau)):
        raise ValueError("non-finite error or threshold")
    best = None
    for j, (m, t) in enumerate(zip(mse, tau)):
        if m <= t and (best is None or m < mse[best]):
            best = j
    if best is None:
        return Decision(OOD, None, mse)
    return Decision("ID", best, mse, tau[best] - mse[best])


def mse_table(model, stacks: Sequence[np.ndarray], batch_size: int = 256) -> np.ndarray:
    """``(N, n)`` reconstruction errors for a list of layer stacks."""
    model.eval()
    out = np.empty((len(stacks), model.n_classes))
    with torch.no_grad():
        for start in range(0, len(stacks), batch_size):
            idx = range(start, min(start + batch_size, len(stacks)))
            by_len: dict[int, list[int]] = {}
            for i in idx:
                by_len.setdefault(stacks[i].shape[1], []).append(i)
            for group in by_len.values():
                x = model.combine(np.stack([stacks[i] for i in group]))
                _, _, mse = model.reconstruct_all(x)
                out[group] = mse.double().numpy()
    return out


def _require(thresholds) -> ThresholdSet:
    if thresholds is None:
        raise UncalibratedModelError("model has no calibrated thresholds; train or calibrate first")
    return thresholds


def detect(model, thresholds: ThresholdSet | None, stack) -> Decision:
    """Decision for one sample given as an ``L x T x D`` stack (or a ``T x D``
    sequence for single-layer models)."""
    thresholds = _require(thresholds)
    stack = np.asarray(stack)
    if stack.ndim == 2:
        stack = stack[None]
    return decide(mse_table(model, [stack])[0], thresholds)


@dataclass(frozen=True)
class ScoreRow:
    sample_id: str
    true_label: Label
    decision: Decision


def score_matrix(model, thresholds: ThresholdSet | None, dataset: FeatureDataset) -> list[ScoreRow]:
    thresholds = _require(thresholds)
    table = mse_table(model, dataset.stacks)
    return [
        ScoreRow(sid, lab, decide(row, thresholds))
        for sid, lab, row in zip(dataset.ids, dataset.labels, table)
    ]


def write_score_table(path, rows: Sequence[ScoreRow], thresholds: ThresholdSet) -> None:
    """JSON lines: a header record, then one record per sample with keys in
    ``SCORE_COLUMNS`` order. ``predicted`` is a class index or ``"OOD"``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"columns": list(SCORE_COLUMNS), "thresholds": list(thresholds.tau)}) + "\n")
        for r in rows:
            d = r.decision
            rec = dict(zip(SCORE_COLUMNS, (r.sample_id, r.true_label, d.label, d.margin_to_threshold,
                                           list(d.mse_vector))))
            fh.write(json.dumps(rec) + "\n")
    os.replace(tmp, path)


def read_score_table(path) -> tuple[list[ScoreRow], ThresholdSet]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty score table")
    header = json.loads(lines[0])
    if header.get("columns") != list(SCORE_COLUMNS):
        raise ValueError(f"{path}: unexpected columns {header.get('columns')}")
    thresholds = ThresholdSet(tuple(header["thresholds"]))
    rows = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        pred = rec["predicted"]
        decision = Decision(
            OOD if pred == OOD else "ID",
            None if pred == OOD else pred,
            tuple(rec["mse"]),
            rec["margin_to_threshold"],
        )
        rows.append(ScoreRow(rec["sample_id"], rec["true_label"], decision))
    return rows, thresholds
