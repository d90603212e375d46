import numpy as np
import pytest

from vocoder_ood import SyntheticConfig, synthesize
from vocoder_ood.probe import ProbeConfig, ProbeResult, probe_layers


def signal_dataset(seed, layers=4, signal=2):
    cfg = SyntheticConfig(n_classes=3, dim=16, frames=16, cluster_separation=5.0, noise_scale=0.1, seed=seed,
                          split_counts=(40, 20, 0), layers=layers, signal_layers=(signal,))
    return synthesize(cfg)


def test_constructed_signal_layer_wins():
    res = probe_layers(signal_dataset(0), ProbeConfig(seed=0))
    assert len(res.accuracies) == 4
    assert res.best_layer == 2
    assert res.accuracies[2] == max(res.accuracies)


def test_identical_layers_equal_accuracy():
    ds = signal_dataset(1, layers=1, signal=0)
    ds.stacks = [np.repeat(s, 3, axis=0) for s in ds.stacks]
    res = probe_layers(ds, ProbeConfig(seed=0))
    assert max(res.accuracies) - min(res.accuracies) <= 0.02


def test_layer_order_independent_and_reproducible():
    ds = signal_dataset(2)
    fwd = probe_layers(ds, ProbeConfig(seed=3))
    rev = probe_layers(ds, ProbeConfig(seed=3), layers=[3, 2, 1, 0])
    assert fwd.accuracies == rev.accuracies
    assert probe_layers(ds, ProbeConfig(seed=3)).accuracies == fwd.accuracies


def test_single_class_and_ood_rejected():
    ds = signal_dataset(0)
    only0 = ds.take([i for i, lab in enumerate(ds.labels) if lab == 0])
    with pytest.raises(ValueError, match="two classes"):
        probe_layers(only0)
    withood = synthesize(SyntheticConfig(n_classes=2, dim=4, frames=4, split_counts=(4, 2, 2)), ood_classes=1)
    with pytest.raises(ValueError, match="closed-set"):
        probe_layers(withood)


def test_result_roundtrip():
    res = ProbeResult([0.5, 0.9], 1, {"seed": 0})
    assert ProbeResult.from_json(res.to_json()) == res
