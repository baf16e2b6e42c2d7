"""File-based matplotlib figures for the report-producing commands."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import ARM_LABELS
from .scenes import CHANNELS, HEIGHT, WIDTH


def save_ablation_figure(agg: dict, arms: list[str], keys: list[str], path):
    """Grouped bars with std whiskers, one panel per metric column."""
    n = len(keys)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.4), squeeze=False)
    for ax, key in zip(axes[0], keys):
        labels, means, stds = [], [], []
        for arm in arms:
            if arm in agg and key in agg[arm]:
                labels.append(ARM_LABELS.get(arm, arm))
                means.append(agg[arm][key]["mean"])
                stds.append(agg[arm][key]["std"])
        pos = np.arange(len(labels))
        ax.bar(pos, means, yerr=stds, capsize=3, color="#4878cf")
        ax.set_xticks(pos)
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
        ax.set_title(key, fontsize=9)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle("Held-out combination metrics, mean (std) over seeds", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_law_report_figure(records: list[dict], path):
    """Residuals per augmenter grouped by law, log scale."""
    laws = sorted({r["law"] for r in records})
    factors = sorted({r["factor"] for r in records})
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(laws), 3.6))
    width = 0.8 / max(len(factors), 1)
    floor = 1e-12
    for k, factor in enumerate(factors):
        vals = []
        for law in laws:
            match = [r["value"] for r in records if r["law"] == law and r["factor"] == factor]
            vals.append(max(match[0], floor) if match else floor)
        ax.bar(np.arange(len(laws)) + k * width, vals, width=width, label=factor)
    ax.set_yscale("log")
    ax.set_xticks(np.arange(len(laws)) + 0.4 - width / 2)
    ax.set_xticklabels(laws, fontsize=8)
    ax.set_ylabel("mean residual (mse) / rate")
    ax.legend(fontsize=7)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_sample_grid(images: np.ndarray, path, max_tiles: int = 64):
    """Montage of the first dataset images for a quick visual check."""
    count = min(len(images), max_tiles)
    cols = int(np.ceil(np.sqrt(count)))
    rows = int(np.ceil(count / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(1.1 * cols, 1.1 * rows), squeeze=False)
    for idx in range(rows * cols):
        ax = axes[idx // cols][idx % cols]
        ax.axis("off")
        if idx < count:
            img = images[idx].reshape(CHANNELS, HEIGHT, WIDTH).transpose(1, 2, 0)
            ax.imshow(img, interpolation="nearest")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
