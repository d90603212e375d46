"""Reconstruction, contrastive and auxiliary-classification objectives.

Every distance here is the mean squared error over the ``T x D`` elements of a
sequence, so training losses and the inference-time thresholds measure the
same quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

PROB_FLOOR = 1e-12


class DivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1  # contrastive
    beta: float = 1.0  # auxiliary classifier
    margin: float = 1.0  # hinge on the nearest rival distance; math.inf -> plain negative min

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    con: float
    cls: float
    total: float

    def as_dict(self) -> dict:
        return {"rec": self.rec, "con": self.con, "cls": self.cls, "total": self.total}


def sequence_mse(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error over the last two axes (frames, dims)."""
    return ((x - x_hat) ** 2).mean(dim=(-2, -1))


def loss_rec(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return sequence_mse(x, x_hat).mean()


def rival_distances(x_hat_true: torch.Tensor, recons: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """``(B, n)`` distances from each matched reconstruction to every decoder's
    output; the own-class column is ``+inf``."""
    d = sequence_mse(x_hat_true[None], recons).transpose(0, 1)
    own = torch.nn.functional.one_hot(labels, recons.shape[0]).bool()
    return d.masked_fill(own, math.inf)


def loss_con(model, h: torch.Tensor, labels, x_hat_true: torch.Tensor, margin: float = 1.0,
             recons: torch.Tensor | None = None) -> torch.Tensor:
    """Push the matched reconstruction away from the closest rival decoder output.

    Per sample, ``d_min = min_{j != i} mse(x_hat_i, Dec_j(h))`` and the loss is
    ``max(0, margin - d_min)``; ``margin=inf`` gives ``-d_min``. Averaged over
    the batch. ``recons`` (``(n, B, T, D)``) may be passed to reuse a forward.
    """
    if model.n_classes < 2:
        raise ValueError("contrastive loss needs at least two decoders")
    labels = torch.as_tensor(labels, dtype=torch.long)
    unbatched = h.dim() == 2
    if unbatched:
        h, x_hat_true, labels = h[None], x_hat_true[None], labels.reshape(1)
    if recons is None:
        recons = model.decode_all(h)
    d_min = rival_distances(x_hat_true, recons, labels).min(dim=1).values
    if math.isinf(margin):
        per_sample = -d_min
    else:
        per_sample = torch.relu(margin - d_min)
    return per_sample.mean()


def loss_cls(probs: torch.Tensor, labels) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    if probs.dim() == 1:
        probs, labels = probs[None], labels.reshape(1)
    picked = probs.gather(1, labels[:, None])[:, 0]
    return -torch.log(picked.clamp_min(PROB_FLOOR)).mean()


def weighted_total(rec, con, cls, weights: LossWeights):
    return rec + weights.alpha * con + weights.beta * cls


def loss_total(rec, con, cls, weights: LossWeights) -> LossBreakdown:
    parts = [float(v) for v in (rec, con, cls)]
    bad = [name for name, v in zip(("rec", "con", "cls"), parts) if not math.isfinite(v)]
    if bad:
        raise DivergedError(f"non-finite loss part(s): {', '.join(bad)}")
    return LossBreakdown(*parts, weighted_total(*parts, weights))


def batch_objective(model, x: torch.Tensor, labels: torch.Tensor, weights: LossWeights):
    """Full training objective for a batch of equal-length sequences.

    Each sample is reconstructed by its own class decoder. Rival decoders only
    run when the contrastive term is active (``alpha > 0``).

    Returns ``(total, breakdown, matched_mse)`` where ``total`` carries the
    graph and ``matched_mse`` is the detached per-sample reconstruction error.
    """
    h = model.encode(x)
    if weights.alpha > 0:
        recons = model.decode_all(h)
        x_hat = recons[labels, torch.arange(x.shape[0])]
        con = loss_con(model, h, labels, x_hat, weights.margin, recons=recons)
    else:
        x_hat = torch.empty_like(x)
        for j in torch.unique(labels).tolist():
            mask = labels == j
            x_hat[mask] = model.decode(j, h[mask])
        con = torch.zeros((), dtype=x.dtype)
    matched = sequence_mse(x, x_hat)
    rec = matched.mean()
    cls = loss_cls(model.classify_latent(h), labels)
    total = weighted_total(rec, con, cls, weights)
    breakdown = loss_total(rec.detach(), con.detach(), cls.detach(), weights)
    return total, breakdown, matched.detach()
