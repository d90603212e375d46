"""
Synthetic layered features
==========================

Features are ``L x T x D`` stacks stored in ``.vpf`` files and listed in a
JSON-lines manifest. This script writes a small synthetic corpus to disk,
reads it back and checks the class geometry.
"""

import tempfile
from pathlib import Path

import numpy as np

from vocoder_ood.datastore import SyntheticConfig, generate_synthetic, load_dataset, load_manifest, read_feature

out = Path(tempfile.mkdtemp())
cfg = SyntheticConfig(n_classes=3, dim=16, frames=16, cluster_separation=5.0, noise_scale=0.1, seed=7,
                      samples_per_class=50)
manifest = generate_synthetic(cfg, ood_classes=1, out_dir=out)
print(manifest.read_text().splitlines()[0])

###############################################################################
# Every entry carries a split; OOD samples only ever appear in ``test``.

entries = load_manifest(manifest)
for split in ("train", "dev", "test"):
    labels = [e.label for e in entries if e.split == split]
    print(split, {lab: labels.count(lab) for lab in sorted(set(labels), key=str)})

###############################################################################
# One feature file, and the per-class mean frame. ID class means are
# ``cluster_separation`` apart; the OOD mean sits further out.

print(read_feature(entries[0].feature_path).shape)

ds = load_dataset(manifest)
means = {}
for lab in [0, 1, 2, "OOD"]:
    frames = [s[0].mean(axis=0) for s, l in zip(ds.stacks, ds.labels) if l == lab]
    means[lab] = np.mean(frames, axis=0)
for a in means:
    print(a, [round(float(np.linalg.norm(means[a] - means[b])), 2) for b in means])
