"""Figure rendering for run reports (file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.family": "serif",
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "lines.linewidth": 1.4,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def heatmap(matrix: np.ndarray, path: str | Path, title: str = "", vmin=None, vmax=None) -> None:
    m = np.asarray(matrix)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(m, cmap="viridis", vmin=vmin, vmax=vmax, interpolation="nearest")
        ax.set_xlabel("client")
        ax.set_ylabel("client")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        fig.savefig(path)
        plt.close(fig)


def accuracy_curves(curves: dict[str, tuple[np.ndarray, np.ndarray]], path: str | Path,
                    ylabel: str = "mean test accuracy") -> None:
    """``curves`` maps a label to (rounds, values)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        for label, (x, y) in curves.items():
            ax.plot(x, y, label=label)
        ax.set_xlabel("round")
        ax.set_ylabel(ylabel)
        if len(curves) > 1:
            ax.legend()
        fig.savefig(path)
        plt.close(fig)
