"""
Ablating the auxiliary objectives
=================================

``alpha`` weights the contrastive term and ``beta`` the auxiliary classifier.
Setting them to zero gives the "without contrastive" and "without
classifier" variants. This runs each variant on a few seeds.
"""

import numpy as np
import torch

from vocoder_ood import ModelConfig, SyntheticConfig, TrainConfig, VocoderAutoencoder, fit, synthesize
from vocoder_ood.detector import score_matrix
from vocoder_ood.metrics import confusion, report
from vocoder_ood.trainer import with_ablation

torch.set_num_threads(1)

variants = {"full": [], "no-contrastive": ["no-contrastive"],
            "no-contrastive+no-classifier": ["no-contrastive", "no-classifier"]}
seeds = range(3)

for name, ablate in variants.items():
    scores = []
    for seed in seeds:
        ds = synthesize(SyntheticConfig(n_classes=3, dim=16, frames=16, seed=seed, split_counts=(200, 25, 40)),
                        ood_classes=1)
        model = VocoderAutoencoder(ModelConfig.scaled(16, 3), seed=seed)
        cfg = with_ablation(TrainConfig(epochs=30, seed=seed, slack=2.0), ablate)
        model, rep = fit(model, ds.split("train"), cfg)
        test = ds.split("test")
        rows = score_matrix(model, rep.thresholds, test)
        scores.append(report(confusion([r.decision for r in rows], test.labels, 3)).f1)
    print(f"{name:<30} macro-F1 {np.mean(scores):.4f}  per seed {np.round(scores, 4)}")
