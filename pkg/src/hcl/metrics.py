"""Clustering and structure-recovery metrics plus per-node graph summaries."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import comb
from scipy.stats import norm

from hcl.sem import WeightedDag


def _contingency(labels_a, labels_b):
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label vectors differ in shape: {a.shape} vs {b.shape}")
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ua.size, ub.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table, ua, ub


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index from pair counts."""
    if len(labels_a) < 2:
        raise ValueError("need at least two labels")
    table, _, _ = _contingency(labels_a, labels_b)
    n = table.sum()
    sum_cells = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(n, 2)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all singletons or one block): agreement is perfect
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


@dataclass(frozen=True)
class EdgeConfusion:
    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def fdr(self) -> float:
        return self.false_positives / max(self.false_positives + self.true_positives, 1)

    @property
    def tpr(self) -> float:
        return self.true_positives / max(self.true_positives + self.false_negatives, 1)


def edge_confusion(predicted: WeightedDag, truth: WeightedDag) -> EdgeConfusion:
    p, t = predicted.adjacency, truth.adjacency
    if p.shape != t.shape:
        raise ValueError(f"graphs differ in size: {p.shape} vs {t.shape}")
    tp = int(np.sum(p & t))
    return EdgeConfusion(tp, int(np.sum(p & ~t)), int(np.sum(~p & t)))


def edge_metrics(predicted: WeightedDag, truth: WeightedDag) -> tuple[float, float]:
    """Directed-edge ``(FDR, TPR)``."""
    c = edge_confusion(predicted, truth)
    return c.fdr, c.tpr


def match_clusters(pred_labels, true_labels) -> dict:
    """Map predicted cluster ids to true ids by maximum total overlap.

    Predicted clusters left over after the one-to-one assignment map to the
    majority true label among their members.
    """
    table, up, ut = _contingency(pred_labels, true_labels)
    rows, cols = linear_sum_assignment(table, maximize=True)
    mapping = {up[r].item(): ut[c].item() for r, c in zip(rows, cols)}
    for r, label in enumerate(up):
        if label.item() not in mapping:
            mapping[label.item()] = ut[int(np.argmax(table[r]))].item()
    return mapping


def cluster_edge_metrics(pred_labels, pred_graphs, true_labels, true_graphs) -> list[dict]:
    """Per predicted cluster FDR/TPR against the graph of its matched true class.

    ``pred_graphs[k]`` belongs to the k-th sorted unique predicted label, and
    ``true_graphs[k]`` to the k-th sorted unique true label.
    """
    mapping = match_clusters(pred_labels, true_labels)
    pred_ids = sorted(mapping)
    true_ids = sorted(np.unique(true_labels).tolist())
    rows = []
    for k, pid in enumerate(pred_ids):
        tid = mapping[pid]
        fdr, tpr = edge_metrics(pred_graphs[k], true_graphs[true_ids.index(tid)])
        rows.append({"cluster": pid, "matched": tid, "size": int(np.sum(np.asarray(pred_labels) == pid)), "fdr": fdr, "tpr": tpr})
    return rows


@lru_cache(maxsize=None)
def _rank_sum_distribution(n_a: int, n_b: int, doubled_ranks: tuple) -> dict:
    """Exact null distribution of the doubled rank sum of group a over all splits."""
    # dist[k][s]: number of ways to pick k items with doubled rank sum s
    dist = [dict() for _ in range(n_a + 1)]
    dist[0][0] = 1
    for r in doubled_ranks:
        for k in range(min(n_a, len(doubled_ranks)) - 1, -1, -1):
            for s, c in dist[k].items():
                dist[k + 1][s + r] = dist[k + 1].get(s + r, 0) + c
    return dist[n_a]


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


EXACT_LIMIT = 20


def wilcoxon_rank_sum(sample_a, sample_b) -> tuple[float, float]:
    """Mann-Whitney ``U`` of ``sample_a`` and its two-sided p-value.

    Pooled sizes up to ``EXACT_LIMIT`` enumerate every split of the observed
    midranks; larger samples use the tie-corrected normal approximation with
    continuity correction.
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    n_a, n_b = a.size, b.size
    ranks = _midranks(np.concatenate([a, b]))
    r_a = ranks[:n_a].sum()
    u = r_a - n_a * (n_a + 1) / 2.0
    mean_u = n_a * n_b / 2.0
    if n_a + n_b <= EXACT_LIMIT:
        doubled = tuple(sorted(int(round(2 * r)) for r in ranks))
        dist = _rank_sum_distribution(n_a, n_b, doubled)
        total = sum(dist.values())
        observed = abs(2 * r_a - n_a * (n_a + n_b + 1))
        extreme = sum(c for s, c in dist.items() if abs(s - n_a * (n_a + n_b + 1)) >= observed - 1e-9)
        return float(u), min(1.0, extreme / total)
    n = n_a + n_b
    _, counts = np.unique(ranks, return_counts=True)
    tie = np.sum(counts**3 - counts) / (n * (n - 1))
    var_u = n_a * n_b / 12.0 * ((n + 1) - tie)
    if var_u <= 0:
        return float(u), 1.0
    z = (abs(u - mean_u) - 0.5) / np.sqrt(var_u)
    return float(u), float(min(1.0, 2.0 * norm.sf(max(z, 0.0))))


def flow_ratio(graph: WeightedDag, smoothed: bool = True) -> np.ndarray:
    """Out-degree over in-degree per node, ``(out + 1) / (in + 1)`` when smoothed.

    The raw ratio is ``inf`` for nodes with out-edges and no in-edges and
    ``nan`` for isolated nodes.
    """
    adj = graph.adjacency
    out_deg = adj.sum(axis=1).astype(float)
    in_deg = adj.sum(axis=0).astype(float)
    if smoothed:
        return (out_deg + 1.0) / (in_deg + 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return out_deg / in_deg


def total_effects(graph: WeightedDag) -> np.ndarray:
    """Sum of path products for every ordered pair: ``(I - B)^-1 - I``.

    Computed as the finite series ``B + B^2 + ...`` (B is nilpotent on a DAG) so
    pairs without a directed path are exactly zero.
    """
    b = graph.weights
    total = b.copy()
    power = b
    for _ in range(graph.num_vars - 2):
        power = power @ b
        if not power.any():
            break
        total += power
    return total


def downstream_influence(graph: WeightedDag) -> np.ndarray:
    """Per node, the summed absolute total effect on all of its descendants."""
    return np.abs(total_effects(graph)).sum(axis=1)
