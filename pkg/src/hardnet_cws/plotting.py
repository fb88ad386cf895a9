"""Report figures written next to the CLI's CSV outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .encoder import BlockSchedule, schedule_stats  # noqa: E402

# PNG metadata would embed the matplotlib version and break byte comparisons
_PNG_META = {"Software": None}


def save_fig(fig, path: str | Path, dpi: int = 120) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=dpi, metadata=_PNG_META)
    plt.close(fig)
    return path


def figure_path(csv_path: str | Path, suffix: str) -> Path:
    p = Path(csv_path)
    return p.with_name(f"{p.stem}_{suffix}.png")


def plot_schedules(schedules: list[BlockSchedule], path):
    """Per-block layer counts; the legend carries each schedule's sd."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for s in schedules:
        counts = s.layer_counts
        sd = schedule_stats(s)["sd"]
        ax.plot(range(1, len(counts) + 1), counts, marker="o", label=f"{s.name} (sd {sd:.4f})")
    ax.set_xlabel("block")
    ax.set_ylabel("layers")
    ax.legend(frameon=False)
    fig.tight_layout()
    return save_fig(fig, path)


def plot_planes(img: np.ndarray, planes: dict[str, np.ndarray], path):
    """Input image followed by one grey panel per derived plane."""
    n = 1 + len(planes)
    fig, axes = plt.subplots(1, n, figsize=(2.4 * n, 2.6))
    axes = np.atleast_1d(axes)
    axes[0].imshow(img)
    axes[0].set_title("RGB")
    for ax, (name, plane) in zip(axes[1:], planes.items()):
        ax.imshow(plane, cmap="gray", vmin=0, vmax=255)
        ax.set_title(name)
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    return save_fig(fig, path)


def plot_metrics(summary, path):
    ids = [r.image_id for r in summary.records]
    x = np.arange(len(ids))
    fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(ids) + 1.5), 3.2))
    ax.bar(x - 0.2, [r.iou for r in summary.records], 0.4, label=f"IoU (mean {summary.iou:.3f})")
    ax.bar(x + 0.2, [r.dsc for r in summary.records], 0.4, label=f"DSC (mean {summary.dsc:.3f})")
    ax.set_xticks(x)
    ax.set_xticklabels(ids, rotation=90, fontsize=6)
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return save_fig(fig, path)


def plot_history(history: list[dict], path, title: str = ""):
    epochs = [h["epoch"] for h in history]
    fig, ax1 = plt.subplots(figsize=(5, 3.2))
    ax1.plot(epochs, [h["train_loss"] for h in history], color="k", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [h["iou"] for h in history], label="val IoU")
    ax2.plot(epochs, [h["dsc"] for h in history], label="val DSC")
    ax2.set_ylim(0, 1.05)
    ax2.legend(frameon=False, fontsize=7, loc="lower right")
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    return save_fig(fig, path)


def plot_rating_bars(rows: list[dict], path, value_keys: list[str]):
    """Grouped bars: one group per rater, one bar per column in ``value_keys``."""
    raters = [r["Rater"] for r in rows]
    x = np.arange(len(raters))
    w = 0.8 / max(len(value_keys), 1)
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(raters) + 1), 3.2))
    for i, key in enumerate(value_keys):
        ax.bar(x + (i - (len(value_keys) - 1) / 2) * w, [r[key] for r in rows], w, label=key)
    ax.set_xticks(x)
    ax.set_xticklabels(raters)
    ax.set_ylabel("% of ratings")
    ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return save_fig(fig, path)
