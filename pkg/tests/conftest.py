import numpy as np
import pytest
import torch

from vocoder_ood import ModelConfig, SyntheticConfig, VocoderAutoencoder, synthesize
from vocoder_ood.layercomb import CombinerSpec
from vocoder_ood.model import ModuleConfig

torch.set_num_threads(1)


def tiny_config(input_dim=6, n=3, latent=4):
    mods = (
        ModuleConfig(6, conv_kernel=5, attention_heads=2, feedforward_dim=8),
        ModuleConfig(4, conv_kernel=5, attention_heads=2, feedforward_dim=8),
        ModuleConfig(latent, conv_kernel=5, attention_heads=2, feedforward_dim=8),
    )
    return ModelConfig(input_dim, n, mods, classifier_hidden=5)


def tiny_model(seed=0, n=3, dtype=torch.float64, n_layers=1, combiner=None):
    return VocoderAutoencoder(tiny_config(n=n), n_layers=n_layers, combiner=combiner, seed=seed, dtype=dtype)


@pytest.fixture
def tiny():
    return tiny_model()


@pytest.fixture(scope="session")
def small_synthetic():
    cfg = SyntheticConfig(n_classes=3, dim=8, frames=6, cluster_separation=5.0, noise_scale=0.1, seed=3,
                          split_counts=(12, 4, 4))
    return synthesize(cfg, ood_classes=1)


def small_model(ds, seed=0, **kw):
    cfg = ModelConfig.scaled(ds.dim, ds.n_classes, heads=2)
    return VocoderAutoencoder(cfg, n_layers=ds.n_layers, seed=seed, **kw)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
