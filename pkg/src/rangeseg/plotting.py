"""
Matplotlib report figures written next to the CSV outputs.

Figures are rendered with the Agg backend and saved without a software tag so
identical inputs give identical PNG bytes.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from rangeseg._atomic import atomic_write_bytes  # noqa: E402
from rangeseg.evaluation import STAGE_LABELS  # noqa: E402
from rangeseg.pointcloud_io import CLASS_NAMES  # noqa: E402
from rangeseg.training import trailing_mean  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_row_ranges(stats, path, bin_width: float = 1.0) -> None:
    """Per-row range histogram of one class with the row medians overlaid."""
    hist = stats.histogram(bin_width) if stats.height else np.zeros((1, 1))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    extent = (0.0, hist.shape[1] * bin_width, hist.shape[0] - 0.5, -0.5)
    im = ax.imshow(np.log1p(hist), aspect="auto", cmap="viridis", extent=extent,
                   interpolation="nearest")
    rows = stats.rows
    if rows:
        medians = [stats.summary(r)["median"] for r in rows]
        ax.plot(medians, rows, color="white", lw=1.2, label="median range")
        ax.legend(loc="lower right")
    ax.set_xlabel("range (m)")
    ax.set_ylabel("laser row (0 = top)")
    ax.set_title(f"{CLASS_NAMES.get(stats.class_id, stats.class_id)} cells per row and range")
    fig.colorbar(im, ax=ax, label="log(1 + count)")
    fig.tight_layout()
    _save(fig, path)


def plot_loss_curve(metrics, path, window: int = 20) -> None:
    """Raw and moving-average total loss against training step."""
    metrics = list(metrics)
    steps = np.array([row[0] for row in metrics], dtype=np.float64)
    total = np.array([row[4] for row in metrics], dtype=np.float64)
    lr = np.array([row[1] for row in metrics], dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, total, color="0.75", lw=0.8, label="total loss")
    if total.size:
        ax.plot(steps, trailing_mean(total, window), color="C0", lw=1.6,
                label=f"moving average ({window})")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(steps, lr, color="C3", lw=1.0, ls="--", label="learning rate")
    ax2.set_ylabel("learning rate")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="upper right")
    fig.tight_layout()
    _save(fig, path)


def plot_bench(results, path) -> None:
    """Bar chart of mean per-frame time with one-std error bars."""
    results = list(results)
    labels = [STAGE_LABELS.get(r.stage, r.stage) for r in results]
    means = [r.mean_ms for r in results]
    stds = [r.std_ms for r in results]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(labels, means, yerr=stds, capsize=4, color="C0")
    ax.set_ylabel("time per frame (ms)")
    fig.tight_layout()
    _save(fig, path)
