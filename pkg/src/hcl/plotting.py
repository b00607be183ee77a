"""Report figures rendered to PNG next to the tabular output.

Uses the object-oriented ``Figure`` API so no global pyplot state or
interactive backend is involved.
"""

from __future__ import annotations

import os
import tempfile
from collections import defaultdict
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

STYLE = {"dpi": 120, "width": 6.4, "height": 4.0}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=STYLE["dpi"], format="png")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def _figure(ncols: int = 1, width_scale: float = 1.0):
    fig = Figure(figsize=(STYLE["width"] * width_scale, STYLE["height"]), layout="constrained")
    axes = fig.subplots(1, ncols, squeeze=False)[0]
    return fig, axes


def plot_bench(summary_rows: list[dict], path) -> Path:
    """Mean +/- std of ARI, TPR and FDR per benchmark condition."""
    conditions = [r["condition"] for r in summary_rows]
    x = np.arange(len(conditions))
    fig, axes = _figure(3, width_scale=1.8)
    for ax, metric in zip(axes, ("ari", "tpr", "fdr")):
        mean = np.array([r[f"{metric}_mean"] for r in summary_rows], dtype=float)
        std = np.array([np.nan if r[f"{metric}_std"] is None else r[f"{metric}_std"] for r in summary_rows], dtype=float)
        ax.bar(x, mean, yerr=np.nan_to_num(std), capsize=3, color="0.55")
        ax.set_xticks(x, conditions, rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_title(metric.upper())
    return _save(fig, path)


def plot_adjacency(graphs, names, path, titles=None) -> Path:
    """Signed weight heatmap of each cluster graph."""
    k = max(len(graphs), 1)
    fig, axes = _figure(k, width_scale=min(0.6 * k, 3.0))
    vmax = max([float(np.abs(g.weights).max()) for g in graphs] + [1e-9])
    for i, (ax, g) in enumerate(zip(axes, graphs)):
        im = ax.imshow(g.weights, cmap="RdBu_r", vmin=-vmax, vmax=vmax)
        ax.set_xticks(range(len(names)), names, rotation=90, fontsize=6)
        ax.set_yticks(range(len(names)), names, fontsize=6)
        ax.set_title(titles[i] if titles else f"cluster {i + 1}", fontsize=9)
    fig.colorbar(im, ax=list(axes), shrink=0.8, label="weight (row -> column)")
    return _save(fig, path)


def plot_node_scores(rows: list[dict], value: str, path, ylabel: str) -> Path:
    """Grouped bars of a per-node score for every cluster."""
    by_cluster = defaultdict(dict)
    nodes = []
    for r in rows:
        by_cluster[r["cluster"]][r["node"]] = r[value]
        if r["node"] not in nodes:
            nodes.append(r["node"])
    clusters = sorted(by_cluster)
    x = np.arange(len(nodes))
    width = 0.8 / max(len(clusters), 1)
    fig, axes = _figure(1, width_scale=1.4)
    ax = axes[0]
    for i, c in enumerate(clusters):
        heights = [by_cluster[c].get(n, np.nan) for n in nodes]
        ax.bar(x + (i - (len(clusters) - 1) / 2) * width, heights, width, label=f"cluster {c}")
    ax.set_xticks(x, nodes, rotation=45, ha="right")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    return _save(fig, path)
