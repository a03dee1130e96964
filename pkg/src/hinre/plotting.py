"""Figures written next to the delimited reports.

Every function takes plain data, draws onto a fresh figure and saves it to
``path``.  PNG metadata is stripped so identical inputs give identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_curve(log, path, smooth: int = 10):
    """Mean loss per epoch (left axis) and dev F1 (right axis)."""
    epochs = np.array([e.epoch for e in log])
    loss = np.array([e.loss for e in log])
    f1 = np.array([e.f1 for e in log])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(epochs, loss, color="0.6", lw=1, label="loss")
        if len(loss) >= smooth:
            ma = np.convolve(loss, np.ones(smooth) / smooth, mode="valid")
            ax.plot(epochs[smooth - 1:], ma, color="k", lw=1.5, label=f"loss, {smooth}-epoch mean")
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss")
        ax2 = ax.twinx()
        ax2.plot(epochs, f1, color="tab:blue", lw=1.5, label="dev F1")
        ax2.set_ylim(0, 1.02)
        ax2.set_ylabel("dev F1", color="tab:blue")
        ax2.grid(False)
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="center right")
        return _save(fig, path)


def plot_recall_by_evidence(table: dict, path, title: str | None = None):
    """Bars of recall per evidence-count bucket, annotated with fact counts."""
    buckets = list(table)
    recall = [table[b]["recall"] or 0.0 for b in buckets]
    counts = [table[b]["count"] for b in buckets]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(buckets))
        bars = ax.bar(x, recall, color="tab:blue", width=0.6)
        for bar, n in zip(bars, counts):
            ax.annotate(f"n={n}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                        ha="center", va="bottom", fontsize=7, xytext=(0, 2), textcoords="offset points")
        ax.set_xticks(x, buckets)
        ax.set_ylim(0, 1.1)
        ax.set_xlabel("evidence sentences per fact")
        ax.set_ylabel("recall")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_ablation(rows: list[tuple[str, float, float]], path):
    """Grouped bars of (label, F1, Ign F1) for the base model and each ablation."""
    labels = [r[0] for r in rows]
    x = np.arange(len(rows))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(x - 0.2, [r[1] for r in rows], width=0.4, label="F1")
        ax.bar(x + 0.2, [r[2] for r in rows], width=0.4, label="Ign F1")
        ax.set_xticks(x, labels, rotation=20, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("score")
        ax.legend()
        return _save(fig, path)
