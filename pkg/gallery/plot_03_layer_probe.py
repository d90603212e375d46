"""
Which layer carries the fingerprint?
====================================

A linear probe is fitted on mean-pooled frames of each layer. Here only
layer 2 of 4 carries the class signal. The autoencoder can then read a single
layer or a learned softmax-weighted mix of layers.
"""

import torch

from vocoder_ood import ModelConfig, SyntheticConfig, TrainConfig, VocoderAutoencoder, fit, synthesize
from vocoder_ood.layercomb import CombinerSpec
from vocoder_ood.plotting import plot_probe
from vocoder_ood.probe import ProbeConfig, probe_layers

torch.set_num_threads(1)

cfg = SyntheticConfig(n_classes=3, dim=16, frames=16, seed=1, split_counts=(60, 20, 10), layers=4,
                      signal_layers=(2,))
ds = synthesize(cfg)
result = probe_layers(ds, ProbeConfig(seed=0))
print(result.accuracies, "best:", result.best_layer)
plot_probe(result, "probe.png")

###############################################################################
# Weighted combination over all layers starts uniform and is trained with the
# model. Inspect where the weight mass goes.

for spec in (CombinerSpec("single", result.best_layer), CombinerSpec("weighted_all")):
    model = VocoderAutoencoder(ModelConfig.scaled(16, 3), n_layers=4, combiner=spec, seed=0)
    model, rep = fit(model, ds.split("train"), TrainConfig(epochs=10, slack=2.0))
    w = model.combiner.weights()
    print(spec, "rec", round(rep.epochs[-1]["train"]["rec"], 4),
          "weights", None if w is None else [round(float(v), 3) for v in w.detach()])
