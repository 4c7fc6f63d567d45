"""Report figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evalkit import BAND_NAMES  # noqa: E402
from .trainer import smoothed  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp" + path.suffix)
    fig.savefig(tmp, dpi=120, bbox_inches="tight")
    plt.close(fig)
    tmp.replace(path)
    return path


def loss_curves(curves: dict[str, list[list[float]]], path, window: int = 25,
                title: str = "training loss") -> Path:
    """``curves`` maps a label to one L_total series per seed; draws the seed mean and spread."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for label, series in curves.items():
        n = min(len(s) for s in series)
        arr = np.stack([smoothed(s[:n], window) for s in series])
        steps = np.arange(1, n + 1)
        line, = ax.plot(steps, arr.mean(0), label=label, lw=1.4)
        if len(series) > 1:
            ax.fill_between(steps, arr.min(0), arr.max(0), color=line.get_color(), alpha=0.15, lw=0)
    ax.set_xlabel("step")
    ax.set_ylabel(f"L_total (moving avg, {window})")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, frameon=False)
    return _save(fig, path)


def band_bars(scores: dict[str, list[float | None]], path, title: str = "delta1 by depth band") -> Path:
    """Grouped bars: one group per depth band, one bar per config."""
    labels = list(scores)
    nb = len(BAND_NAMES)
    width = 0.8 / max(len(labels), 1)
    fig, ax = plt.subplots(figsize=(1.2 + 1.4 * nb, 3.6))
    x = np.arange(nb)
    for i, label in enumerate(labels):
        vals = [np.nan if v is None else v for v in scores[label]]
        ax.bar(x + (i - (len(labels) - 1) / 2) * width, vals, width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(BAND_NAMES)
    ax.set_xlabel("ground-truth depth band (percentile position)")
    ax.set_ylabel("delta1")
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.legend(fontsize=7, frameon=False, ncol=2)
    return _save(fig, path)
