"""Random DAGs, mixed linear SEM simulation and the synthetic benchmark generators.

Weights follow the row-to-column convention: ``weights[i, j]`` is the direct
effect of variable ``i`` on variable ``j``, so a sample row satisfies
``x = x @ B + u`` for continuous variables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import networkx as nx
import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"
KINDS = (CONTINUOUS, BINARY)


class CycleError(ValueError):
    """Raised when a weight matrix does not describe a DAG."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        path = " -> ".join(str(i) for i in self.cycle + self.cycle[:1])
        super().__init__(f"graph contains a cycle: {path}")


def _digraph(support: np.ndarray) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(range(support.shape[0]))
    g.add_edges_from(zip(*np.nonzero(support)))
    return g


def find_cycle(weights: np.ndarray) -> Optional[list[int]]:
    """Return the node list of one directed cycle in the support, or None."""
    g = _digraph(np.asarray(weights) != 0)
    try:
        edges = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        return None
    return [int(u) for u, _ in edges]


def topological_order(dag) -> list[int]:
    """Topological order of a DAG (``WeightedDag`` or square matrix).

    Ties are broken by lowest index, so the empty graph yields the identity.
    """
    weights = dag.weights if isinstance(dag, WeightedDag) else np.asarray(dag)
    g = _digraph(weights != 0)
    try:
        return [int(v) for v in nx.lexicographical_topological_sort(g)]
    except nx.NetworkXUnfeasible:
        raise CycleError(find_cycle(weights)) from None


@dataclass
class WeightedDag:
    """Weighted adjacency matrix with an acyclic support and zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weights must be square, got shape {w.shape}")
        if np.any(np.diag(w) != 0):
            raise ValueError("self-loops are not allowed")
        cycle = find_cycle(w)
        if cycle is not None:
            raise CycleError(cycle)
        self.weights = w

    @classmethod
    def empty(cls, num_vars: int) -> "WeightedDag":
        return cls(np.zeros((num_vars, num_vars)))

    @property
    def num_vars(self) -> int:
        return self.weights.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        return self.weights != 0

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(self.weights))

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.weights))]

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.weights[:, j])

    def children(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.weights[i])

    def to_dict(self) -> dict:
        return {
            "num_vars": self.num_vars,
            "edges": [
                {"from": i, "to": j, "weight": float(self.weights[i, j])}
                for i, j in self.edges()
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "WeightedDag":
        d = int(payload["num_vars"])
        w = np.zeros((d, d))
        for e in payload["edges"]:
            w[int(e["from"]), int(e["to"])] = float(e.get("weight", 1.0))
        return cls(w)


@dataclass
class VariableSchema:
    kinds: list[str]
    names: Optional[list[str]] = None

    def __post_init__(self):
        self.kinds = list(self.kinds)
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise ValueError(f"unknown variable kind(s): {sorted(set(bad))}")
        if self.names is None:
            self.names = [f"X{j + 1}" for j in range(len(self.kinds))]
        elif len(self.names) != len(self.kinds):
            raise ValueError("names and kinds differ in length")
        self.names = list(self.names)

    @classmethod
    def all_continuous(cls, num_vars: int) -> "VariableSchema":
        return cls([CONTINUOUS] * num_vars)

    def __len__(self) -> int:
        return len(self.kinds)

    @property
    def binary_mask(self) -> np.ndarray:
        return np.array([k == BINARY for k in self.kinds], dtype=bool)

    @property
    def continuous_mask(self) -> np.ndarray:
        return ~self.binary_mask

    def to_dict(self, labels_column: Optional[str] = None) -> dict:
        out = {"variables": [{"name": n, "kind": k} for n, k in zip(self.names, self.kinds)]}
        if labels_column is not None:
            out["labels_column"] = labels_column
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "VariableSchema":
        variables = payload["variables"]
        return cls([v["kind"] for v in variables], [v["name"] for v in variables])


@dataclass
class MixedDataset:
    values: np.ndarray
    schema: VariableSchema
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("values must be an N x D matrix with N >= 1")
        if self.values.shape[1] != len(self.schema):
            raise ValueError(
                f"schema has {len(self.schema)} variables but data has {self.values.shape[1]} columns"
            )
        for j in np.flatnonzero(self.schema.binary_mask):
            col = self.values[:, j]
            if not np.all((col == 0) | (col == 1)):
                raise ValueError(f"binary column {self.schema.names[j]!r} has values outside {{0, 1}}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.values.shape[0],):
                raise ValueError("labels must have one entry per sample")

    @property
    def num_samples(self) -> int:
        return self.values.shape[0]

    @property
    def num_vars(self) -> int:
        return self.values.shape[1]

    def subset(self, index) -> "MixedDataset":
        labels = None if self.labels is None else self.labels[index]
        return MixedDataset(self.values[index], self.schema, labels)


@dataclass
class ScmSpec:
    dag: WeightedDag
    schema: VariableSchema
    noise_std: np.ndarray = None

    def __post_init__(self):
        d = self.dag.num_vars
        if len(self.schema) != d:
            raise ValueError("schema length does not match the DAG")
        if self.noise_std is None:
            self.noise_std = np.ones(d)
        self.noise_std = np.broadcast_to(np.asarray(self.noise_std, dtype=float), (d,)).copy()
        if np.any(self.noise_std <= 0):
            raise ValueError("noise_std must be positive")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def generate_er_dag(num_vars: int, num_edges: int, seed=None) -> WeightedDag:
    """Erdos-Renyi DAG with exactly ``num_edges`` edges and unit weights.

    Edges are drawn without replacement from the pairs that point forward in a
    uniformly random permutation of the variables.
    """
    max_edges = num_vars * (num_vars - 1) // 2
    if not 0 <= num_edges <= max_edges:
        raise ValueError(f"num_edges must lie in [0, {max_edges}] for {num_vars} variables, got {num_edges}")
    rng = _rng(seed)
    perm = rng.permutation(num_vars)
    rows, cols = np.triu_indices(num_vars, k=1)
    chosen = rng.choice(rows.size, size=num_edges, replace=False)
    w = np.zeros((num_vars, num_vars))
    w[perm[rows[chosen]], perm[cols[chosen]]] = 1.0
    return WeightedDag(w)


def sample_edge_weights(dag: WeightedDag, seed=None, low: float = 0.5, high: float = 2.0) -> WeightedDag:
    """Draw |w| ~ U[low, high] with a fair random sign for every edge."""
    rng = _rng(seed)
    mask = dag.adjacency
    k = int(mask.sum())
    magnitude = rng.uniform(low, high, size=k)
    sign = np.where(rng.random(k) < 0.5, -1.0, 1.0)
    w = np.zeros_like(dag.weights)
    w[mask] = sign * magnitude
    return WeightedDag(w)


def simulate(spec: ScmSpec, n: int, seed=None) -> MixedDataset:
    """Sample ``n`` rows from the mixed linear SEM.

    Continuous variables take ``parents @ beta + u``; binary variables take the
    indicator ``parents @ beta + u > 0``. Exogenous draws are ``N(0, noise_std^2)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    order = topological_order(spec.dag)
    rng = _rng(seed)
    d = spec.dag.num_vars
    noise = rng.standard_normal((n, d)) * spec.noise_std
    w = spec.dag.weights
    binary = spec.schema.binary_mask
    x = np.zeros((n, d))
    for j in order:
        latent = x @ w[:, j] + noise[:, j]
        x[:, j] = (latent > 0).astype(float) if binary[j] else latent
    return MixedDataset(x, spec.schema)


# Per-dataset grids of the synthetic benchmark.
BENCHMARK_GRIDS = {
    1: {"n_per_class": [200, 300, 500]},
    2: {"sizes": [[500, 500], [100, 500], [50, 500]]},
    3: {"edges": [5, 10, 20]},
    4: {"complexity": ["sparse", "low", "moderate", "high"]},
    5: {"k": [1, 3, 5, 7]},
}

COMPLEXITY = {"sparse": (10, 5), "low": (10, 10), "moderate": (10, 20), "high": (20, 100)}


@dataclass
class BenchmarkSpec:
    dataset_id: int
    class_sizes: list[int]
    class_graphs: list[tuple[int, int]]
    seed: int = 0
    binary_fraction: float = 0.0
    setting: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dataset_id not in BENCHMARK_GRIDS:
            raise ValueError(f"dataset_id must be one of {sorted(BENCHMARK_GRIDS)}")
        if len(self.class_sizes) != len(self.class_graphs) or not self.class_sizes:
            raise ValueError("need one (nodes, edges) pair per class")
        if any(n <= 0 for n in self.class_sizes):
            raise ValueError("class sizes must be positive")
        if len({nodes for nodes, _ in self.class_graphs}) != 1:
            raise ValueError("all classes must share the same variable set")
        if not 0.0 <= self.binary_fraction <= 1.0:
            raise ValueError("binary_fraction must lie in [0, 1]")

    @property
    def num_classes(self) -> int:
        return len(self.class_sizes)

    @property
    def num_vars(self) -> int:
        return self.class_graphs[0][0]

    @classmethod
    def for_dataset(
        cls,
        dataset_id: int,
        seed: int = 0,
        *,
        n_per_class: Optional[int] = None,
        sizes: Optional[Sequence[int]] = None,
        edges: Optional[int] = None,
        complexity: Optional[str] = None,
        k: Optional[int] = None,
        binary_fraction: float = 0.0,
    ) -> "BenchmarkSpec":
        """Build the spec of one benchmark instance; unset knobs take the first grid value."""
        if dataset_id == 1:
            n = 500 if n_per_class is None else int(n_per_class)
            setting = {"n_per_class": n}
            class_sizes, graphs = [n, n], [(10, 10)] * 2
        elif dataset_id == 2:
            sz = [500, 500] if sizes is None else [int(s) for s in sizes]
            setting = {"sizes": sz}
            class_sizes, graphs = sz, [(10, 10)] * len(sz)
        elif dataset_id == 3:
            e = 10 if edges is None else int(edges)
            setting = {"edges": e}
            class_sizes, graphs = [500, 500], [(10, e), (10, 10)]
        elif dataset_id == 4:
            c = "low" if complexity is None else complexity
            if c not in COMPLEXITY:
                raise ValueError(f"complexity must be one of {list(COMPLEXITY)}")
            setting = {"complexity": c}
            class_sizes, graphs = [500, 500], [COMPLEXITY[c]] * 2
        elif dataset_id == 5:
            kk = 1 if k is None else int(k)
            if kk < 1:
                raise ValueError("k must be >= 1")
            setting = {"k": kk}
            class_sizes, graphs = [500] * kk, [(10, 10)] * kk
        else:
            raise ValueError(f"dataset_id must be one of {sorted(BENCHMARK_GRIDS)}")
        return cls(dataset_id, class_sizes, graphs, seed, binary_fraction, setting)

    @property
    def in_grid(self) -> bool:
        grid = BENCHMARK_GRIDS[self.dataset_id]
        if not self.setting:
            return False
        (key, value), = self.setting.items()
        return key in grid and value in grid[key] and self.binary_fraction == 0.0


def grid_settings(dataset_id: int) -> list[dict]:
    """Keyword settings covering the benchmark grid of one dataset."""
    (key, values), = BENCHMARK_GRIDS[dataset_id].items()
    return [{key: v} for v in values]


def generate_benchmark(spec: BenchmarkSpec) -> tuple[MixedDataset, list[WeightedDag]]:
    """Draw one fresh weighted ER DAG per class and sample each class from its own DAG.

    Labels are 0-based class ids, rows are grouped by class.
    """
    if not spec.in_grid:
        warnings.warn(
            f"dataset {spec.dataset_id} setting {spec.setting} is outside the benchmark grid",
            stacklevel=2,
        )
    root = np.random.SeedSequence(spec.seed)
    schema_seq, *class_seqs = root.spawn(spec.num_classes + 1)
    d = spec.num_vars
    n_binary = int(round(spec.binary_fraction * d))
    kinds = [CONTINUOUS] * d
    for j in np.random.default_rng(schema_seq).choice(d, size=n_binary, replace=False):
        kinds[j] = BINARY
    schema = VariableSchema(kinds)

    blocks, labels, graphs = [], [], []
    for c, ((nodes, edges), size, seq) in enumerate(zip(spec.class_graphs, spec.class_sizes, class_seqs)):
        rng = np.random.default_rng(seq)
        dag = sample_edge_weights(generate_er_dag(nodes, edges, rng), rng)
        blocks.append(simulate(ScmSpec(dag, schema), size, rng).values)
        labels.append(np.full(size, c))
        graphs.append(dag)
    return MixedDataset(np.vstack(blocks), schema, np.concatenate(labels)), graphs
