"""Reduce an ``L x T x D`` layer stack to the single ``T x D`` sequence the
autoencoder reconstructs.

Three modes are supported: a single layer ``k``, a softmax-weighted sum over
the first ``m`` layers, and a softmax-weighted sum over all layers. Layer 0 is
the output of the extractor's first transformer layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

MODES = ("single", "weighted_prefix", "weighted_all")


@dataclass(frozen=True)
class CombinerSpec:
    mode: str = "single"
    index: int = 0  # k for single, m for weighted_prefix; unused for weighted_all

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown combiner mode {self.mode!r}; expected one of {MODES}")

    def n_selected(self, n_layers: int) -> int:
        if self.mode == "single":
            return 1
        if self.mode == "weighted_prefix":
            return self.index
        return n_layers

    def validate(self, n_layers: int) -> None:
        if self.mode == "single" and not 0 <= self.index < n_layers:
            raise IndexError(f"single({self.index}) out of range for {n_layers} layers")
        if self.mode == "weighted_prefix" and not 1 <= self.index <= n_layers:
            raise IndexError(f"weighted_prefix({self.index}) out of range for {n_layers} layers")


class LayerCombiner(nn.Module):
    def __init__(self, spec: CombinerSpec, n_layers: int):
        super().__init__()
        spec.validate(n_layers)
        self.spec = spec
        self.n_layers = n_layers
        if spec.mode == "single":
            self.logits = None
        else:
            # zero logits -> uniform weights
            self.logits = nn.Parameter(torch.zeros(spec.n_selected(n_layers)))

    def weights(self) -> torch.Tensor | None:
        if self.logits is None:
            return None
        return torch.softmax(self.logits, dim=0)

    def parameters_view(self) -> list[nn.Parameter]:
        """Free (pre-softmax) parameters; empty in single-layer mode."""
        return [] if self.logits is None else [self.logits]

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        """``(..., L, T, D) -> (..., T, D)``."""
        if stack.shape[-3] != self.n_layers:
            raise IndexError(f"stack has {stack.shape[-3]} layers, combiner expects {self.n_layers}")
        if self.logits is None:
            return stack[..., self.spec.index, :, :]
        w = self.weights().to(stack.dtype)
        selected = stack[..., : w.shape[0], :, :]
        return torch.einsum("l,...ltd->...td", w, selected)


def combine(stack, combiner: LayerCombiner) -> torch.Tensor:
    return combiner(torch.as_tensor(stack))
