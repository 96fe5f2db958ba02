"""Report figures.

Everything renders through the Agg canvas with a fixed style and without
timestamps in the PNG metadata, so reruns write identical bytes.
"""

from __future__ import annotations

from contextlib import contextmanager

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
WIDTH = 5.0
PALETTE = ["#1b5e96", "#d9622b", "#3d9a50", "#8c3f9e", "#b5a233", "#5a5a5a"]

STYLE = {
    "axes.prop_cycle": matplotlib.cycler(color=PALETTE),
    "axes.grid": True,
    "grid.linestyle": ":",
    "grid.alpha": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.4,
    "lines.markersize": 3,
    "figure.figsize": (WIDTH, WIDTH * GOLDEN),
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "image.cmap": "viridis",
    "svg.hashsalt": "crossmap",
}


@contextmanager
def styled():
    with matplotlib.rc_context(STYLE):
        fig, ax = plt.subplots()
        try:
            yield fig, ax
        finally:
            plt.close(fig)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def plot_convergence(histories: dict, path):
    """Objective value per iteration, one line per map."""
    with styled() as (fig, ax):
        for name, hist in histories.items():
            h = np.asarray(hist, dtype=float)
            ax.semilogy(np.arange(h.size), np.maximum(h, np.finfo(float).tiny), label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel("objective")
        ax.legend(loc="upper right")
        return _save(fig, path)


def plot_map(C, title, path):
    with styled() as (fig, ax):
        fig.set_size_inches(WIDTH * 0.8, WIDTH * 0.7)
        lim = float(np.max(np.abs(C))) or 1.0
        im = ax.imshow(C, cmap="RdBu_r", vmin=-lim, vmax=lim, interpolation="nearest")
        ax.grid(False)
        ax.set_title(title)
        ax.set_xlabel("target basis index")
        ax.set_ylabel("source basis index")
        fig.colorbar(im, ax=ax, shrink=0.85)
        return _save(fig, path)


def plot_precision_at_rank(curves: dict, path):
    """Mean precision@p over admissible queries, one curve per direction."""
    with styled() as (fig, ax):
        for name, prec in curves.items():
            prec = np.asarray(prec, dtype=float)
            ax.plot(np.arange(1, prec.size + 1), prec, label=name)
        ax.set_xlabel("rank")
        ax.set_ylabel("precision")
        ax.set_ylim(0.0, 1.02)
        ax.legend(loc="lower left")
        return _save(fig, path)


def plot_accuracies(groups: dict, path):
    """Grouped bars: ``groups[modality][split] = accuracy``."""
    with styled() as (fig, ax):
        mods = list(groups)
        splits = sorted({s for v in groups.values() for s in v})
        width = 0.8 / max(len(splits), 1)
        x = np.arange(len(mods))
        for n, split in enumerate(splits):
            vals = [groups[m].get(split, np.nan) for m in mods]
            ax.bar(x + (n - (len(splits) - 1) / 2) * width, vals, width, label=split)
        ax.set_xticks(x, mods)
        ax.set_ylim(0.0, 1.0)
        ax.set_ylabel("accuracy")
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_embedding(X, labels, title, path):
    """Samples on their two leading principal directions, colored by class."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    # pin the sign of each direction for reproducible orientation
    Vt = Vt * np.where(np.take_along_axis(Vt, np.argmax(np.abs(Vt), axis=1)[:, None], 1) < 0, -1.0, 1.0)
    Y = Xc @ Vt[:2].T if Vt.shape[0] >= 2 else np.column_stack([Xc @ Vt[0], np.zeros(len(X))])
    labels = np.asarray(labels)
    with styled() as (fig, ax):
        for n, c in enumerate(np.unique(labels)):
            sel = labels == c
            ax.scatter(Y[sel, 0], Y[sel, 1], s=6, color=PALETTE[n % len(PALETTE)], label=f"class {c}")
        ax.set_title(title)
        ax.set_xlabel("component 1")
        ax.set_ylabel("component 2")
        ax.legend(loc="best")
        return _save(fig, path)
