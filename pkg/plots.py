# -*- encoding: utf-8 -*-

"""Figures of sweeps and confusion matrices, rendered off-screen with matplotlib"""

from pathlib import Path
from typing import Union

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from evalharness import ConfusionMatrix, SweepResult, class_names  # noqa: E402
from misc import atomic_write  # noqa: E402

_AXIS_LABELS = {
    "duration_s": "Trace duration [s]",
    "distance_m": "Antenna distance [cm]",
}

_STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.bbox": "tight",
}


def _save(fig, path: Union[str, Path], dpi: int):
    with atomic_write(path) as outf:
        fig.savefig(outf, format="png", dpi=dpi)
    plt.close(fig)


def plot_sweep(sweep: SweepResult, path: Union[str, Path], dpi: int = 150):
    """Plot accuracy against the swept quantity, one line per (modality, carrier) pair"""
    scale = 100.0 if sweep.axis == "distance_m" else 1.0
    with mpl.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        series = {}
        for row in sweep.rows:
            series.setdefault((row.modality, row.carrier_hz), []).append((row.setting * scale, row.accuracy * 100))

        for (modality, carrier), points in series.items():
            points.sort()
            ax.plot([p[0] for p in points], [p[1] for p in points], marker="o",
                    label=f"{modality.value}, {carrier / 1e9:g} GHz")

        ax.set_xlabel(_AXIS_LABELS.get(sweep.axis, sweep.axis))
        ax.set_ylabel("Accuracy [%]")
        ax.set_ylim(0, 105)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="lower right")
        _save(fig, path, dpi)


def plot_confusion(cm: ConfusionMatrix, path: Union[str, Path], dpi: int = 150):
    """Draw the row-normalized confusion matrix as a heat map annotated with the raw counts"""
    names = class_names(cm.n_classes)
    normalized = cm.row_normalized()
    with mpl.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.0))
        image = ax.imshow(normalized, cmap="Blues", vmin=0.0, vmax=1.0)
        fig.colorbar(image, ax=ax)

        ax.set_xticks(range(cm.n_classes))
        ax.set_yticks(range(cm.n_classes))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_yticklabels(names)
        ax.set_xlabel("Predicted class")
        ax.set_ylabel("True class")

        for row in range(cm.n_classes):
            for col in range(cm.n_classes):
                ax.text(col, row, str(int(cm.counts[row, col])), ha="center", va="center",
                        color="white" if normalized[row, col] > 0.5 else "black")
        _save(fig, path, dpi)
