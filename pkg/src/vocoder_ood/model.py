"""Single encoder, one decoder per vocoder class, and an auxiliary classifier."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from .layercomb import CombinerSpec, LayerCombiner
from .losses import sequence_mse

REFERENCE_DIM = 1024
PAPER_ENCODER_DIMS = (1024, 512, 256)


@dataclass(frozen=True)
class ModuleConfig:
    out_dim: int
    conv_kernel: int = 5
    attention_heads: int = 8
    feedforward_dim: int = 1024

    def __post_init__(self):
        if self.out_dim % self.attention_heads:
            raise ValueError(f"out_dim {self.out_dim} not divisible by {self.attention_heads} heads")


def _largest_divisor_at_most(n: int, cap: int) -> int:
    return max(h for h in range(1, min(n, cap) + 1) if n % h == 0)


def _round_up(value: float, multiple: int) -> int:
    return max(multiple, multiple * math.ceil(value / multiple))


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    n_decoders: int
    encoder_modules: tuple[ModuleConfig, ...]
    classifier_hidden: int = 256
    dropout: float = 0.0

    def __post_init__(self):
        if self.n_decoders < 2:
            raise ValueError("need at least two decoders")
        if not self.encoder_modules:
            raise ValueError("encoder needs at least one module")

    @property
    def latent_dim(self) -> int:
        return self.encoder_modules[-1].out_dim

    @property
    def decoder_modules(self) -> tuple[ModuleConfig, ...]:
        """Encoder modules mirrored; the last one projects back to ``input_dim``."""
        mirrored = list(reversed(self.encoder_modules))
        out = []
        for k, m in enumerate(mirrored):
            out_dim = mirrored[k + 1].out_dim if k + 1 < len(mirrored) else self.input_dim
            heads = _largest_divisor_at_most(out_dim, m.attention_heads)
            out.append(ModuleConfig(out_dim, m.conv_kernel, heads, m.feedforward_dim))
        return tuple(out)

    @classmethod
    def scaled(cls, input_dim: int, n_decoders: int, heads: int = 8, conv_kernel: int = 5,
               feedforward_dim: int = 1024, classifier_hidden: int = 256, dropout: float = 0.0) -> "ModelConfig":
        """Paper-sized widths rescaled by ``input_dim / 1024`` (multiples of ``heads``)."""
        s = input_dim / REFERENCE_DIM
        mods = tuple(
            ModuleConfig(_round_up(w * s, heads), conv_kernel, heads, _round_up(feedforward_dim * s, heads))
            for w in PAPER_ENCODER_DIMS
        )
        return cls(input_dim, n_decoders, mods, _round_up(classifier_hidden * s, heads), dropout)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder_modules"] = tuple(ModuleConfig(**m) for m in d["encoder_modules"])
        return cls(**d)


def sinusoidal_positions(n_frames: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n_frames, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(n_frames, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe.to(dtype)


class TransformerModule(nn.Module):
    """conv (same padding) + ReLU -> positional encoding -> transformer block -> linear."""

    def __init__(self, in_dim: int, cfg: ModuleConfig, dropout: float = 0.0):
        super().__init__()
        self.conv = nn.Conv1d(in_dim, cfg.out_dim, cfg.conv_kernel, padding="same")
        self.block = nn.TransformerEncoderLayer(
            cfg.out_dim, cfg.attention_heads, cfg.feedforward_dim, dropout=dropout, batch_first=True
        )
        self.proj = nn.Linear(cfg.out_dim, cfg.out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.relu(self.conv(x.transpose(1, 2))).transpose(1, 2)
        y = y + sinusoidal_positions(y.shape[1], y.shape[2], y.dtype)
        return self.proj(self.block(y))


class Stack(nn.Sequential):
    def __init__(self, in_dim: int, modules: tuple[ModuleConfig, ...], dropout: float):
        layers = []
        for m in modules:
            layers.append(TransformerModule(in_dim, m, dropout))
            in_dim = m.out_dim
        super().__init__(*layers)


class VocoderAutoencoder(nn.Module):
    """Encoder, ``n`` class decoders, auxiliary classifier and layer combiner.

    Sequence inputs are ``(B, T, D)`` or ``(T, D)`` tensors; an unbatched input
    gives unbatched outputs.
    """

    def __init__(self, config: ModelConfig, n_layers: int = 1, combiner: CombinerSpec | None = None,
                 seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.combiner_spec = combiner or CombinerSpec()
        self.seed = seed
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.combiner = LayerCombiner(self.combiner_spec, n_layers)
            self.encoder = Stack(config.input_dim, config.encoder_modules, config.dropout)
            self.decoders = nn.ModuleList(
                Stack(config.latent_dim, config.decoder_modules, config.dropout) for _ in range(config.n_decoders)
            )
            self.classifier = nn.Sequential(
                nn.Linear(config.latent_dim, config.classifier_hidden),
                nn.ReLU(),
                nn.Linear(config.classifier_hidden, config.n_decoders),
            )
        self.to(dtype)

    @property
    def n_classes(self) -> int:
        return self.config.n_decoders

    @property
    def n_layers(self) -> int:
        return self.combiner.n_layers

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _batched(self, x):
        x = torch.as_tensor(x, dtype=self.dtype)
        return (x[None], True) if x.dim() == 2 else (x, False)

    def combine(self, stack) -> torch.Tensor:
        return self.combiner(torch.as_tensor(stack, dtype=self.dtype))

    def encode(self, x) -> torch.Tensor:
        x, squeeze = self._batched(x)
        if x.shape[-1] != self.config.input_dim:
            raise ValueError(f"input dim {x.shape[-1]} != model input_dim {self.config.input_dim}")
        h = self.encoder(x)
        return h[0] if squeeze else h

    def decode(self, j: int, h) -> torch.Tensor:
        if not 0 <= j < self.n_classes:
            raise IndexError(f"decoder index {j} out of range for {self.n_classes} decoders")
        h, squeeze = self._batched(h)
        out = self.decoders[j](h)
        return out[0] if squeeze else out

    def decode_all(self, h) -> torch.Tensor:
        """``(B, T, H) -> (n, B, T, D)``."""
        return torch.stack([dec(h) for dec in self.decoders])

    def reconstruct_all(self, x):
        """Encode once, decode with every decoder.

        Returns ``(h, recons, mse)`` with ``recons`` of shape ``(n, B, T, D)``
        and ``mse`` of shape ``(B, n)`` (unbatched input drops the ``B`` axis).
        """
        x, squeeze = self._batched(x)
        h = self.encode(x)
        recons = self.decode_all(h)
        mse = sequence_mse(x[None], recons).transpose(0, 1)
        if squeeze:
            return h[0], recons[:, 0], mse[0]
        return h, recons, mse

    def classifier_logits(self, h) -> torch.Tensor:
        h, squeeze = self._batched(h)
        logits = self.classifier(h.mean(dim=1))
        return logits[0] if squeeze else logits

    def classify_latent(self, h) -> torch.Tensor:
        return torch.softmax(self.classifier_logits(h), dim=-1)

    def describe(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "n_layers": self.n_layers,
            "combiner": {"mode": self.combiner_spec.mode, "index": self.combiner_spec.index},
            "seed": self.seed,
            "dtype": str(self.dtype).replace("torch.", ""),
        }
