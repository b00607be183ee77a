"""Bi-directional clustering / structure-learning loop.

Each iteration splits every active cluster on its latent representation,
fits backbone-regularized graphs to the pieces, merges structurally similar
pieces back together with a consensus refit, merges similar leaf clusters
across the hierarchy, then reassigns samples to the cluster whose structural
model explains them best. The loop stops once an iteration produces no graph
that is new with respect to the previous family.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from hcl import vbgmm
from hcl.latent import latent_matrix
from hcl.learner import LearnedGraph, LearnerConfig, PenaltySpec, fit_structure, sigmoid_penalty
from hcl.sem import MixedDataset, WeightedDag

log = logging.getLogger(__name__)

ACTIVE, SPLIT, MERGED, FINALIZED, DISSOLVED = "active", "split", "merged", "finalized", "dissolved"


def _adjacency(g) -> np.ndarray:
    if isinstance(g, LearnedGraph):
        g = g.dag
    if isinstance(g, WeightedDag):
        return g.adjacency
    return np.asarray(g) != 0


def shd(g_a, g_b) -> int:
    """Structural Hamming distance; a reversed edge counts once."""
    a, b = _adjacency(g_a), _adjacency(g_b)
    if a.shape != b.shape:
        raise ValueError(f"graphs differ in size: {a.shape} vs {b.shape}")
    iu = np.triu_indices(a.shape[0], k=1)
    a_pair = a[iu] + 2 * a.T[iu]
    b_pair = b[iu] + 2 * b.T[iu]
    return int(np.count_nonzero(a_pair != b_pair))


def nshd(g_a, g_b) -> float:
    """SHD divided by the mean edge count of the two graphs (0 when both are empty)."""
    a, b = _adjacency(g_a), _adjacency(g_b)
    mean_edges = 0.5 * (a.sum() + b.sum())
    if mean_edges == 0:
        return 0.0
    return shd(a, b) / mean_edges


def consensus_weights(graphs, sizes) -> np.ndarray:
    """Size-weighted edge-presence frequency across ``graphs``."""
    sizes = np.asarray(sizes, dtype=float)
    total = sizes.sum()
    if total <= 0:
        raise ValueError("sizes must sum to a positive number")
    stack = np.array([_adjacency(g) for g in graphs], dtype=float)
    return np.tensordot(sizes / total, stack, axes=1)


@dataclass
class EngineConfig:
    delta: float = 1.0
    lambda1: float = 0.1
    lambda2: float = 0.3
    max_iter: int = 100
    eta: float = 20.0
    tau: float = 0.5
    min_cluster_size: Optional[int] = None
    max_components: int = 10
    alpha0: float = 1e-2
    mass_floor: float = 0.01
    vbgmm_max_iter: int = 1000
    reassign_rounds: int = 3
    # uniform penalty for refitting leaves whose membership changed; None means lambda1
    reassign_lambda: Optional[float] = None
    allow_inverted: bool = False
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    seed: int = 0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.eta <= 0 or not 0 < self.tau < 1:
            raise ValueError("eta must be > 0 and tau in (0, 1)")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if self.reassign_lambda is not None and self.reassign_lambda < 0:
            raise ValueError("reassign_lambda must be >= 0")
        if self.lambda1 >= self.lambda2 and not self.allow_inverted:
            raise ValueError(
                f"backbone edges need a smaller penalty: lambda1={self.lambda1} >= lambda2={self.lambda2}; "
                "set allow_inverted=True to override"
            )

    @property
    def delta_conv(self) -> float:
        return self.delta / 2.0

    @property
    def refit_lambda(self) -> float:
        return self.lambda1 if self.reassign_lambda is None else self.reassign_lambda

    def min_size(self, num_vars: int) -> int:
        return 3 * num_vars if self.min_cluster_size is None else int(self.min_cluster_size)


def merge_refit(data: MixedDataset, consensus: np.ndarray, config: EngineConfig, w_init=None) -> LearnedGraph:
    """Refit a merged cluster with per-edge sigmoid penalties derived from edge consensus."""
    lam = sigmoid_penalty(consensus, config.eta, config.tau)
    return fit_structure(data, PenaltySpec.per_edge(lam), config.learner, w_init=w_init)


def convergence_check(previous, current, delta_conv: float) -> bool:
    """True when every graph in ``current`` lies within ``delta_conv`` NSHD of some graph in ``previous``."""
    previous = list(previous)
    for g in current:
        if not any(nshd(g, p) <= delta_conv for p in previous):
            return False
    return True


@dataclass
class ClusterNode:
    id: int
    members: np.ndarray
    graph: LearnedGraph
    parent: Optional[int] = None
    status: str = ACTIVE
    level: int = 0

    @property
    def size(self) -> int:
        return int(self.members.size)


@dataclass
class HclResult:
    K: int
    labels: np.ndarray
    graphs: list[WeightedDag]
    trace: list[dict]
    converged: bool
    nodes: list[ClusterNode] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "labels": [int(v) for v in self.labels],
            "graphs": [g.to_dict() for g in self.graphs],
            "converged": self.converged,
            "trace": self.trace,
        }


class HclEngine:
    def __init__(self, data: MixedDataset, config: Optional[EngineConfig] = None):
        self.data = data
        self.config = config or EngineConfig()
        self.nodes: dict[int, ClusterNode] = {}
        self.trace: list[dict] = []
        self._next_id = 0

    # -- helpers -----------------------------------------------------------
    def _seed(self, *keys) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.config.seed, *keys])

    def _new_node(self, members, graph, parent=None, status=ACTIVE, level=0) -> ClusterNode:
        node = ClusterNode(self._next_id, np.sort(np.asarray(members)), graph, parent, status, level)
        self.nodes[node.id] = node
        self._next_id += 1
        return node

    def _fit(self, members, penalty, w_init=None) -> LearnedGraph:
        return fit_structure(self.data.subset(members), penalty, self.config.learner, w_init=w_init)

    def _backbone_penalty(self, graph: LearnedGraph) -> PenaltySpec:
        c = self.config
        return PenaltySpec.with_backbone(graph.dag, c.lambda1, c.lambda2, allow_inverted=c.allow_inverted)

    def leaves(self) -> list[ClusterNode]:
        return [n for n in self.nodes.values() if n.status in (ACTIVE, FINALIZED)]

    def _check_partition(self):
        members = np.concatenate([n.members for n in self.leaves()])
        if members.size != self.data.num_samples or np.unique(members).size != members.size:
            raise RuntimeError("leaf clusters no longer partition the samples")

    # -- top-down ----------------------------------------------------------
    def split(self, node: ClusterNode) -> list[np.ndarray]:
        """Subcluster a node on its latent representation; tiny components are folded back."""
        sub = self.data.subset(node.members)
        z = latent_matrix(sub, node.graph.dag, design=node.graph.transform(sub.values)).values
        prior = vbgmm.VbgmmPrior.from_data(z, alpha0=self.config.alpha0)
        post = vbgmm.fit(
            z,
            prior,
            max_components=self.config.max_components,
            seed=self._seed(node.id, 1),
            mass_floor=self.config.mass_floor,
            max_iter=self.config.vbgmm_max_iter,
        )
        resp = post.resp
        labels = vbgmm.hard_assign(resp)
        min_size = self.config.min_size(self.data.num_vars)
        keep = [k for k in np.unique(labels) if np.sum(labels == k) >= min_size]
        if len(keep) < 2:
            return [node.members]
        labels = np.asarray(keep)[vbgmm.hard_assign(resp[:, keep])]
        return [node.members[labels == k] for k in keep]

    def merge_group(self, parts: list[np.ndarray], graphs: list[LearnedGraph], status=ACTIVE):
        """Agglomerate parts whose graphs are within ``delta`` NSHD, smallest distance first."""
        parts, graphs = list(parts), list(graphs)
        merges = []
        while len(parts) > 1:
            best, pair = None, None
            for i in range(len(parts)):
                for j in range(i + 1, len(parts)):
                    d = nshd(graphs[i], graphs[j])
                    if d <= self.config.delta and (best is None or d < best):
                        best, pair = d, (i, j)
            if pair is None:
                break
            i, j = pair
            members = np.concatenate([parts[i], parts[j]])
            w = consensus_weights([graphs[i], graphs[j]], [parts[i].size, parts[j].size])
            graph = merge_refit(self.data.subset(members), w, self.config)
            merges.append({"sizes": [int(parts[i].size), int(parts[j].size)], "nshd": float(best)})
            parts = [p for k, p in enumerate(parts) if k not in pair] + [members]
            graphs = [g for k, g in enumerate(graphs) if k not in pair] + [graph]
        return parts, graphs, merges

    # -- bottom-up ---------------------------------------------------------
    def merge_leaves(self, level: int) -> list[dict]:
        """Merge structurally similar leaf clusters anywhere in the hierarchy."""
        merges = []
        while True:
            leaves = self.leaves()
            best, pair = None, None
            for a in range(len(leaves)):
                for b in range(a + 1, len(leaves)):
                    d = nshd(leaves[a].graph, leaves[b].graph)
                    if d <= self.config.delta and (best is None or d < best):
                        best, pair = d, (leaves[a], leaves[b])
            if pair is None:
                return merges
            na, nb = pair
            members = np.concatenate([na.members, nb.members])
            w = consensus_weights([na.graph, nb.graph], [na.size, nb.size])
            graph = merge_refit(self.data.subset(members), w, self.config)
            for n in pair:
                n.status = MERGED
                self._dissolve_children(n.id)
            # the merged cluster is split afresh in the next iteration
            node = self._new_node(members, graph, parent=None, status=ACTIVE, level=level)
            merges.append({"merged": [na.id, nb.id], "into": node.id, "nshd": float(best)})

    def _dissolve_children(self, node_id: int):
        for n in self.nodes.values():
            if n.parent == node_id and n.status in (ACTIVE, SPLIT):
                n.status = DISSOLVED

    def _log_likelihood(self, node: ClusterNode) -> np.ndarray:
        """Per-sample Gaussian log-likelihood of all data under a leaf's structural model."""
        g = node.graph
        x = g.transform(self.data.values)
        resid = x - x @ g.dag.weights
        own = resid[node.members]
        sigma = np.maximum(own.std(axis=0), 1e-3)
        mu = own.mean(axis=0)
        return norm.logpdf(resid, loc=mu, scale=sigma).sum(axis=1)

    def reassign(self) -> int:
        """Move every sample to the leaf whose model scores it highest, then refit changed leaves.

        Changed leaves are refit under a light uniform penalty warm-started from
        their current weights: the backbone inherited from a pooled parent is
        biased toward the larger clusters, and sparsity is still enforced by the
        edge threshold after the support refit.
        """
        moved_total = 0
        refit_penalty = PenaltySpec.uniform(self.config.refit_lambda)
        min_size = self.config.min_size(self.data.num_vars)
        for _ in range(self.config.reassign_rounds):
            leaves = self.leaves()
            if len(leaves) < 2:
                break
            n = self.data.num_samples
            prior = np.log(np.array([l.size for l in leaves], dtype=float) / n)
            scores = np.column_stack([self._log_likelihood(l) for l in leaves]) + prior
            current = np.empty(n, dtype=int)
            for k, l in enumerate(leaves):
                current[l.members] = k
            new = scores.argmax(axis=1)
            # dissolve leaves that would fall below the minimum size
            counts = np.bincount(new, minlength=len(leaves))
            small = np.flatnonzero(counts < min_size)
            if small.size == len(leaves):
                break
            if small.size:
                scores[:, small] = -np.inf
                new = scores.argmax(axis=1)
            moved = int(np.sum(new != current))
            if moved == 0:
                break
            moved_total += moved
            for k, l in enumerate(leaves):
                members = np.flatnonzero(new == k)
                if members.size == 0:
                    l.status = DISSOLVED
                    l.members = members
                    continue
                if np.array_equal(members, l.members):
                    continue
                l.members = members
                l.graph = self._fit(members, refit_penalty, w_init=l.graph.raw_weights)
        return moved_total

    # -- main loop ---------------------------------------------------------
    def run(self) -> HclResult:
        c = self.config
        n, d = self.data.num_samples, self.data.num_vars
        min_size = c.min_size(d)
        if n < 2 * min_size:
            log.warning("only %d samples for minimum cluster size %d; no split is possible", n, min_size)
        root_graph = fit_structure(self.data, PenaltySpec.uniform(c.lambda2), c.learner)
        self._new_node(np.arange(n), root_graph)
        converged = False
        for t in range(1, c.max_iter + 1):
            before = [l.graph for l in self.leaves()]
            record = {"iteration": t, "splits": [], "sibling_merges": [], "leaf_merges": [], "finalized": []}
            for node in [l for l in self.leaves() if l.status == ACTIVE]:
                if node.size < 2 * min_size:
                    node.status = FINALIZED
                    record["finalized"].append(node.id)
                    continue
                parts = self.split(node)
                if len(parts) < 2:
                    node.status = FINALIZED
                    record["finalized"].append(node.id)
                    continue
                penalty = self._backbone_penalty(node.graph)
                graphs = [self._fit(p, penalty) for p in parts]
                parts, graphs, merges = self.merge_group(parts, graphs)
                record["sibling_merges"].extend(merges)
                if len(parts) == 1:
                    node.graph = graphs[0]
                    node.status = FINALIZED
                    record["finalized"].append(node.id)
                    continue
                node.status = SPLIT
                children = [self._new_node(p, g, parent=node.id, level=node.level + 1) for p, g in zip(parts, graphs)]
                record["splits"].append({"parent": node.id, "children": [ch.id for ch in children], "sizes": [ch.size for ch in children]})
            record["leaf_merges"] = self.merge_leaves(level=t)
            record["reassigned"] = self.reassign() if record["splits"] or record["leaf_merges"] else 0
            self._check_partition()
            leaves = self.leaves()
            record["clusters"] = [{"id": l.id, "size": l.size, "edges": l.graph.dag.num_edges, "status": l.status} for l in leaves]
            record["partition_ok"] = True
            no_active = not any(l.status == ACTIVE for l in leaves)
            no_novelty = convergence_check(before, [l.graph for l in leaves], c.delta_conv)
            record["novel"] = not no_novelty
            self.trace.append(record)
            log.info("iteration %d: %d clusters, novel=%s", t, len(leaves), record["novel"])
            if no_active or no_novelty:
                converged = True
                break
        for l in self.leaves():
            l.status = FINALIZED
        return self._result(converged)

    def _result(self, converged: bool) -> HclResult:
        leaves = sorted(self.leaves(), key=lambda l: (-l.size, int(l.members.min())))
        labels = np.zeros(self.data.num_samples, dtype=int)
        for k, l in enumerate(leaves, start=1):
            labels[l.members] = k
        return HclResult(len(leaves), labels, [l.graph.dag for l in leaves], self.trace, converged, list(self.nodes.values()))


def run(data: MixedDataset, config: Optional[EngineConfig] = None) -> HclResult:
    """Cluster ``data`` and learn one DAG per cluster; labels are 1..K by decreasing size."""
    return HclEngine(data, config).run()
