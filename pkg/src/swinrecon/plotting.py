"""Figures for learning curves, metric comparisons and example reconstructions.

Everything renders through the Agg backend straight to files.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .losses import LossRecord  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0
COLORS = ["#08589e", "#d95f0e", "#2b8c3e", "#7b3294", "#636363"]

STYLE = {
    "axes.prop_cycle": matplotlib.cycler(color=COLORS),
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 8,
    "font.family": "sans-serif",
    "font.sans-serif": ["DejaVu Sans"],
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.0,
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}

CURVE_PANELS = (
    ("pix", "Pixel (Charbonnier)"),
    ("freq", "Frequency (Charbonnier)"),
    ("vgg_like", "Perceptual"),
    ("adv1", "Adversarial D1"),
    ("adv2", "Adversarial D2"),
    ("total", "Total"),
)


def figure_size(width: float = 6.8, rows: int = 1, cols: int = 1) -> tuple[float, float]:
    return width, width * GOLDEN * rows / cols


def smooth(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first points average what is available."""
    v = np.asarray(values, dtype=np.float64)
    if window <= 1 or v.size == 0:
        return v
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def plot_curves(records: Sequence[LossRecord], path, title: str | None = None, window: int = 25) -> Path:
    """One panel per loss component, raw trace faint and smoothed trace solid.

    Panels whose component is identically zero (e.g. adv2 for ST runs) are
    dropped.
    """
    panels = [(k, label) for k, label in CURVE_PANELS if any(getattr(r, k) != 0 for r in records)]
    if not panels:
        panels = [("total", "Total")]
    cols = min(3, len(panels))
    rows = math.ceil(len(panels) / cols)
    steps = np.array([r.step for r in records])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=figure_size(6.8, rows, cols * 0.9), squeeze=False)
        for ax, (key, label) in zip(axes.flat, panels):
            values = np.array([getattr(r, key) for r in records])
            ax.plot(steps, values, color=COLORS[0], alpha=0.25, linewidth=0.6)
            ax.plot(steps, smooth(values, window), color=COLORS[0])
            ax.set_title(label)
            ax.set_xlabel("step")
            if values.size and values.min() > 0 and values.max() / values.min() > 50:
                ax.set_yscale("log")
        for ax in list(axes.flat)[len(panels):]:
            ax.set_visible(False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_metrics(reports: dict, path, title: str | None = None) -> Path:
    """Grouped bars of PSNR, SSIM and FID for each report (e.g. ZF vs recon)."""
    names = list(reports)
    metrics = (("psnr_db", "PSNR (dB)"), ("ssim", "SSIM"), ("fid", "FID (proxy)"))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=figure_size(6.8, 1, 2.2))
        for ax, (key, label) in zip(axes, metrics):
            vals = [float(getattr(reports[n], key)) for n in names]
            shown = [v if math.isfinite(v) else 0.0 for v in vals]
            bars = ax.bar(names, shown, color=COLORS[: len(names)])
            for bar, v in zip(bars, vals):
                text = f"{v:.3g}" if math.isfinite(v) else "inf"
                ax.annotate(text, (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                            ha="center", va="bottom", fontsize=7)
            ax.set_title(label)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_examples(rows: dict[str, Sequence[np.ndarray]], path, max_images: int = 4) -> Path:
    """Image grid: one row per named set (truth, ZF, recon, ...), shared gray scale."""
    names = list(rows)
    n = min(max_images, min(len(v) for v in rows.values()))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(names), n, figsize=(1.4 * n, 1.4 * len(names)), squeeze=False)
        for i, name in enumerate(names):
            for j in range(n):
                ax = axes[i, j]
                ax.imshow(np.asarray(rows[name][j]).squeeze(), cmap="gray", vmin=0, vmax=1)
                ax.set_xticks([])
                ax.set_yticks([])
                if j == 0:
                    ax.set_ylabel(name)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
