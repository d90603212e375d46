"""Probe accuracy curve and reconstruction-error heatmap."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .datastore import OOD  # noqa: E402

# no version/date metadata so identical inputs give identical bytes
_PNG_META = {"Software": None}


def plot_probe(result, path) -> None:
    acc = np.asarray(result.accuracies)
    fig, ax = plt.subplots(figsize=(max(3.0, 0.45 * len(acc) + 1.5), 3.0))
    colors = ["tab:red" if k == result.best_layer else "tab:blue" for k in range(len(acc))]
    ax.bar(np.arange(len(acc)), acc, color=colors)
    ax.set_xticks(np.arange(len(acc)))
    ax.set_xlabel("layer")
    ax.set_ylabel("probe accuracy")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def _sort_key(row):
    lab = row.true_label
    return (1, 0, row.sample_id) if lab == OOD else (0, lab, row.sample_id)


def plot_mse_heatmap(rows: Sequence, thresholds, path) -> None:
    """Samples (grouped by true label, OOD last) x decoders, coloured by
    log10 MSE. Dots mark cells at or under that decoder's threshold."""
    if not rows:
        raise ValueError("empty score table")
    rows = sorted(rows, key=_sort_key)
    mse = np.array([r.decision.mse_vector for r in rows])
    tau = np.asarray(thresholds.tau)
    n_rows, n_dec = mse.shape

    fig, ax = plt.subplots(figsize=(1.2 + 0.6 * n_dec, 2.0 + min(8.0, 0.04 * n_rows)))
    im = ax.imshow(np.log10(np.maximum(mse, 1e-12)), aspect="auto", cmap="magma", interpolation="nearest")
    under = np.argwhere(mse <= tau[None, :])
    if len(under):
        ax.scatter(under[:, 1], under[:, 0], s=4, c="white", marker="o", linewidths=0)

    labels = [r.true_label for r in rows]
    ticks, names = [], []
    for k, lab in enumerate(labels):
        if k == 0 or lab != labels[k - 1]:
            if k:
                ax.axhline(k - 0.5, color="cyan", lw=0.6)
            ticks.append(k)
            names.append(str(lab))
    ax.set_yticks(ticks)
    ax.set_yticklabels(names)
    ax.set_xticks(np.arange(n_dec))
    ax.set_xlabel("decoder")
    ax.set_ylabel("true label")
    fig.colorbar(im, ax=ax, label="log10 MSE")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
