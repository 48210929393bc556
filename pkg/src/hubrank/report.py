"""Figures for training and evaluation reports (PNG, no embedded metadata)."""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "hubrank",
}


def _save(fig, path) -> None:
    # no Software/date chunks, so reruns give identical bytes
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def plot_training(epochs: Sequence[dict], path, best_epoch: int | None = None) -> None:
    """Train/val loss and validation tau_w per epoch."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
        x = [r["epoch"] for r in epochs]
        ax1.plot(x, [r["train_loss"] for r in epochs], label="train")
        if epochs and "val_loss" in epochs[0]:
            ax1.plot(x, [r["val_loss"] for r in epochs], label="val")
            ax2.plot(x, [r["val_tau_w"] for r in epochs], color="C2")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("loss")
        ax1.legend(frameon=False)
        ax2.set_xlabel("epoch")
        ax2.set_ylabel(r"val weighted $\tau$")
        ax2.axhline(0.0, color="0.6", lw=0.8)
        if best_epoch is not None and best_epoch >= 0:
            ax2.axvline(best_epoch, color="0.4", ls="--", lw=0.8)
        fig.tight_layout()
        _save(fig, path)


def plot_eval(case_labels: Sequence[str], tau_w: Sequence[float], topk: Sequence[float], path) -> None:
    """Per-case weighted tau bars next to the Pr(top-k) curve."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2), gridspec_kw={"width_ratios": [2, 1]})
        pos = np.arange(len(tau_w))
        ax1.bar(pos, tau_w, color=["C0" if v >= 0 else "C3" for v in tau_w])
        ax1.set_xticks(pos)
        ax1.set_xticklabels(case_labels, rotation=90)
        ax1.set_ylim(-1.05, 1.05)
        ax1.axhline(0.0, color="0.6", lw=0.8)
        ax1.set_ylabel(r"weighted $\tau$")
        k = np.arange(1, len(topk) + 1)
        ax2.plot(k, topk, marker="o")
        ax2.set_ylim(0, 1.05)
        ax2.set_xticks(k)
        ax2.set_xlabel("k")
        ax2.set_ylabel("Pr(top-k)")
        fig.tight_layout()
        _save(fig, path)
