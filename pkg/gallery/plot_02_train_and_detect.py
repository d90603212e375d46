"""
Train, calibrate, detect
========================

One encoder and three class decoders are trained on in-distribution
samples only. Thresholds come from the mean matched-decoder error on the
training set; at test time a sample is assigned to the lowest-error decoder
that stays under its threshold, or flagged OOD when none does.
"""

import torch

from vocoder_ood import ModelConfig, SyntheticConfig, TrainConfig, VocoderAutoencoder, fit, synthesize
from vocoder_ood.detector import decide, score_matrix
from vocoder_ood.metrics import confusion, report
from vocoder_ood.plotting import plot_mse_heatmap

torch.set_num_threads(1)

ds = synthesize(SyntheticConfig(n_classes=3, dim=16, frames=16, seed=0, split_counts=(200, 25, 40)),
                ood_classes=1)
model = VocoderAutoencoder(ModelConfig.scaled(16, 3), seed=0)
print(model.config.encoder_modules)

model, rep = fit(model, ds.split("train"), TrainConfig(epochs=30, slack=2.0), dev=ds.split("dev"))
print("thresholds", [round(t, 4) for t in rep.thresholds.tau])
for e in rep.epochs[::10]:
    print(e["epoch"], {k: round(v, 4) for k, v in e["train"].items()})

###############################################################################
# The decision rule itself is a pure function of the error vector.

print(decide((0.1, 5.0, 5.0), (1, 1, 1)))
print(decide((2.0, 3.0, 4.0), (1, 1, 1)))

###############################################################################
# Score the test split (ID classes plus the unseen class) and report the
# four summary metrics. OOD counts as a class in the macro averages.

test = ds.split("test")
rows = score_matrix(model, rep.thresholds, test)
cm = confusion([r.decision for r in rows], test.labels, 3)
print(cm)
print(report(cm).table("synthetic"))

plot_mse_heatmap(rows, rep.thresholds, "mse_heatmap.png")
