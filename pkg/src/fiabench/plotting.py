"""Image outputs: importance heatmaps and feature-map montages."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_heatmap(heat, path, title=None):
    """Write a ``[0, 1]`` heatmap as a colour-mapped PNG."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(3, 3))
    ax.imshow(np.asarray(heat), cmap="jet", vmin=0.0, vmax=1.0)
    ax.axis("off")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def save_montage(features, path, max_channels=16):
    """Grid of the first ``max_channels`` channels of a ``(C, H, W)`` feature map."""
    plt = _plt()
    feats = np.asarray(features)
    if feats.ndim == 1:
        feats = feats[:, None, None]
    n = min(max_channels, feats.shape[0])
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.6 * rows), squeeze=False)
    for k, ax in enumerate(axes.flat):
        ax.axis("off")
        if k < n:
            ax.imshow(feats[k], cmap="gray")
            ax.set_title(f"ch {k}", fontsize=7)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def save_bar(labels, values, path, ylabel="mean transfer success (%)"):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(labels, [100 * v for v in values])
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
