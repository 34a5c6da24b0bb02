"""Report figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.figsize": (4.5, 3.4),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "svg.hashsalt": "enfnet",
}


def _save(fig, path) -> None:
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)


def plot_pr_curve(records: dict, path, title: str = "Precision-recall") -> None:
    """One PR curve per labelled record; the legend carries max F-beta and MAE."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for label, rec in records.items():
            ax.plot(rec.recall, rec.precision, label=f"{label} (maxF={rec.max_f:.3f}, MAE={rec.mae:.3f})")
        ax.set_xlim(0, 1.0)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("Recall")
        ax.set_ylabel("Precision")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        ax.legend(loc="lower left", frameon=False)
        _save(fig, path)


def plot_loss_curve(rows, path, title: str = "Training loss") -> None:
    steps = np.array([r["step"] for r in rows])
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for key, label in (("total_loss", "total"), ("ce_loss", "cross-entropy"), ("boundary_loss", "boundary")):
            ax.plot(steps, [r[key] for r in rows], label=label)
        if len(rows) and min(min(r["ce_loss"], r["boundary_loss"]) for r in rows) > 0:
            ax.set_yscale("log")
        ax.set_xlabel("Step")
        ax.set_ylabel("Loss")
        ax.set_title(title)
        ax.grid(alpha=0.3, which="both")
        ax.legend(frameon=False)
        _save(fig, path)
