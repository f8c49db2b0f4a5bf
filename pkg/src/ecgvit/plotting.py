"""Report figures (PNG via matplotlib's Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.dpi": 100,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def fold_metrics(report, path: str | Path) -> None:
    """Grouped bars of accuracy/precision/recall/F1 per held-out subject plus the average."""
    names = ("accuracy", "precision", "recall", "f1")
    rows = [(f.held_out_subject, [getattr(f.metrics, k) for k in names]) for f in report.folds]
    rows.append(("Average", [report.average[k] for k in names]))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(5.0, 0.9 * len(rows) + 2), 3.2))
        x = np.arange(len(rows))
        width = 0.2
        for i, k in enumerate(names):
            ax.bar(x + (i - 1.5) * width, [100 * r[1][i] for r in rows], width, label=k.capitalize() if k != "f1" else "F1")
        ax.set_xticks(x, [r[0] for r in rows])
        ax.set_xlabel("Testing subject")
        ax.set_ylabel("%")
        ax.set_ylim(0, 105)
        ax.legend(ncol=4, loc="lower right")
        _save(fig, path)


def training_curves(report, path: str | Path) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for f in report.folds:
            ax.plot(np.arange(1, len(f.curve) + 1), f.curve, marker="o", ms=3, label=f.held_out_subject)
        ax.set_xlabel("Epoch")
        ax.set_ylabel("Mean cross-entropy")
        ax.legend(title="held out", ncol=2)
        _save(fig, path)


def confusion(report, class_names, path: str | Path) -> None:
    """Confusion matrix summed over all folds."""
    cm = sum(f.metrics.confusion for f in report.folds)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        im = ax.imshow(cm, cmap="Blues")
        ticks = np.arange(len(class_names))
        ax.set_xticks(ticks, class_names)
        ax.set_yticks(ticks, class_names)
        ax.set_xlabel("Predicted")
        ax.set_ylabel("True")
        for (i, j), v in np.ndenumerate(cm):
            ax.text(j, i, str(v), ha="center", va="center", color="white" if v > cm.max() / 2 else "black", fontsize=8)
        fig.colorbar(im, ax=ax, shrink=0.8)
        _save(fig, path)


def attention_overlay(image: np.ndarray, maps, path: str | Path) -> None:
    """Input spectrogram (first channel) next to each layer's map overlaid on it."""
    base = (np.asarray(image)[:, :, 0] + 1.0) / 2.0
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(maps) + 1, figsize=(2.4 * (len(maps) + 1), 2.6))
        axes = np.atleast_1d(axes)
        axes[0].imshow(base, cmap="gray", vmin=0, vmax=1)
        axes[0].set_title("spectrogram")
        for ax, m in zip(axes[1:], maps):
            ax.imshow(base, cmap="gray", vmin=0, vmax=1)
            ax.imshow(m.image, cmap="jet", alpha=0.45, vmin=0, vmax=1)
            ax.set_title(f"layer {m.layer}")
        for ax in axes:
            ax.set_xticks([])
            ax.set_yticks([])
        _save(fig, path)
