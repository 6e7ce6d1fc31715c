"""Report figures rendered next to the delimited output (no GUI backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

from matplotlib.figure import Figure

from .metrics import SweepCurve

__all__ = ["save_box_plot", "save_sweep_plot"]


def save_box_plot(
    path: str | Path,
    values_by_label: Mapping[str, Sequence[float]],
    ylabel: str,
    title: str | None = None,
) -> None:
    """Box plot with 1.5 IQR whiskers, one box per labeled value list."""
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot(111)
    labels = list(values_by_label)
    ax.boxplot([values_by_label[k] for k in labels], tick_labels=labels, whis=1.5)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)


def save_sweep_plot(path: str | Path, curve: SweepCurve, title: str | None = None) -> None:
    """Precision/recall/F1 against the post-processing threshold."""
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot(111)
    ax.plot(curve.thresholds, curve.precision, marker="o", label="precision")
    ax.plot(curve.thresholds, curve.recall, marker="s", label="recall")
    ax.plot(curve.thresholds, curve.f1, marker="^", label="F1")
    ax.axvline(curve.best_threshold, color="gray", linestyle="--", alpha=0.7)
    ax.set_xlabel("Hough threshold t")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
