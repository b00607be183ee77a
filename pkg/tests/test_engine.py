import itertools
import json
from collections import deque

import numpy as np
import pytest

from hcl.engine import (
    ACTIVE,
    EngineConfig,
    HclEngine,
    consensus_weights,
    convergence_check,
    merge_refit,
    nshd,
    run,
    shd,
)
from hcl.learner import PenaltySpec
from hcl.metrics import ari
from hcl.sem import (
    BenchmarkSpec,
    MixedDataset,
    ScmSpec,
    VariableSchema,
    WeightedDag,
    generate_benchmark,
    generate_er_dag,
    sample_edge_weights,
    simulate,
)


def graph_from_edges(d, edges):
    w = np.zeros((d, d))
    for i, j in edges:
        w[i, j] = 1.0
    return w


def bfs_edit_distance(d=3):
    """Minimum add/delete/reverse edits between every pair of 2-cycle-free digraphs on ``d`` nodes."""
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    states = list(itertools.product(range(3), repeat=len(pairs)))  # 0 none, 1 i->j, 2 j->i

    def neighbours(s):
        for k, v in enumerate(s):
            for other in range(3):
                if other != v:  # add, delete or reverse each take one edit
                    yield s[:k] + (other,) + s[k + 1 :]

    def to_matrix(s):
        edges = [(i, j) if v == 1 else (j, i) for (i, j), v in zip(pairs, s) if v]
        return graph_from_edges(d, edges)

    dist = {}
    for src in states:
        seen = {src: 0}
        queue = deque([src])
        while queue:
            s = queue.popleft()
            for t in neighbours(s):
                if t not in seen:
                    seen[t] = seen[s] + 1
                    queue.append(t)
        for dst, v in seen.items():
            dist[src, dst] = v
    return states, to_matrix, dist


def two_class_data(n_per=300, d=6, seed=0):
    rng = np.random.default_rng(seed)
    schema = VariableSchema.all_continuous(d)
    graphs, blocks = [], []
    for k in range(2):
        g = sample_edge_weights(generate_er_dag(d, d, rng), rng)
        graphs.append(g)
        blocks.append(simulate(ScmSpec(g, schema), n_per, rng).values)
    return MixedDataset(np.concatenate(blocks), schema, np.repeat([0, 1], n_per)), graphs


class TestShd:
    def test_against_bfs_oracle(self):
        states, to_matrix, dist = bfs_edit_distance(3)
        for a, b in itertools.product(states, repeat=2):
            assert shd(to_matrix(a), to_matrix(b)) == dist[a, b]

    def test_reversal_counts_once(self):
        assert shd(graph_from_edges(2, [(0, 1)]), graph_from_edges(2, [(1, 0)])) == 1

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            shd(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_nshd(self):
        a = graph_from_edges(3, [(0, 1), (1, 2)])
        b = graph_from_edges(3, [(0, 1)])
        assert nshd(a, b) == pytest.approx(1 / 1.5)
        assert nshd(np.zeros((3, 3)), np.zeros((3, 3))) == 0.0
        assert nshd(a, a) == 0.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = generate_er_dag(6, int(rng.integers(0, 15)), rng)
            b = generate_er_dag(6, int(rng.integers(0, 15)), rng)
            assert shd(a, b) == shd(b, a) and nshd(a, b) == nshd(b, a)


class TestConsensus:
    def test_size_weighting(self):
        a = graph_from_edges(2, [(0, 1)])
        w = consensus_weights([a, np.zeros((2, 2))], [300, 100])
        assert w[0, 1] == pytest.approx(0.75)
        w = consensus_weights([a, np.zeros((2, 2))], [100, 300])
        assert w[0, 1] == pytest.approx(0.25)

    def test_rejects_zero_sizes(self):
        with pytest.raises(ValueError):
            consensus_weights([np.zeros((2, 2))], [0])

    def test_merge_refit_keeps_consensus_edges(self):
        data, graphs = two_class_data(seed=1)
        w = consensus_weights([graphs[0], graphs[0]], [1, 1])
        fitted = merge_refit(data.subset(np.arange(300)), w, EngineConfig())
        assert nshd(fitted.dag, graphs[0]) < 0.5


class TestConvergence:
    def test_identical_families(self):
        g = [graph_from_edges(3, [(0, 1)]), graph_from_edges(3, [(1, 2), (0, 2)])]
        assert convergence_check(g, list(reversed(g)), 0.5)

    def test_novel_graph(self):
        prev = [graph_from_edges(3, [(0, 1)])]
        assert not convergence_check(prev, [graph_from_edges(3, [(1, 2), (0, 2)])], 0.5)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(delta=0), dict(max_iter=0), dict(tau=1.0), dict(eta=0), dict(lambda1=-1), dict(lambda1=0.3, lambda2=0.1), dict(reassign_lambda=-0.1)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            EngineConfig(**kwargs)

    def test_inverted_allowed_explicitly(self):
        EngineConfig(lambda1=0.3, lambda2=0.1, allow_inverted=True)

    def test_defaults(self):
        c = EngineConfig()
        assert c.delta_conv == 0.5 and c.min_size(10) == 30
        assert c.refit_lambda == c.lambda1 and EngineConfig(reassign_lambda=0.2).refit_lambda == 0.2


class TestEngine:
    def test_two_classes_separated(self):
        data, graphs = two_class_data(seed=2)
        result = run(data, EngineConfig(seed=0))
        assert result.K == 2
        assert ari(result.labels, data.labels) > 0.8

    def test_partition_invariant_every_iteration(self):
        data, _ = two_class_data(seed=3)
        engine = HclEngine(data, EngineConfig(seed=0))
        result = engine.run()
        assert all(r["partition_ok"] for r in result.trace)
        assert sorted(np.concatenate([np.flatnonzero(result.labels == k) for k in range(1, result.K + 1)]).tolist()) == list(range(600))

    def test_labels_ordered_by_size(self):
        data, _ = two_class_data(seed=4)
        result = run(data, EngineConfig(seed=0))
        counts = np.bincount(result.labels)[1:]
        assert counts.min() > 0 and np.all(np.diff(counts) <= 0)
        assert set(result.labels) == set(range(1, result.K + 1))

    def test_deterministic(self):
        data, _ = two_class_data(seed=5)
        a = run(data, EngineConfig(seed=3))
        b = run(data, EngineConfig(seed=3))
        np.testing.assert_array_equal(a.labels, b.labels)
        for ga, gb in zip(a.graphs, b.graphs):
            np.testing.assert_array_equal(ga.weights, gb.weights)

    def test_identical_structures_single_cluster(self):
        data, _ = generate_benchmark(BenchmarkSpec.for_dataset(5, 0, k=1))
        result = run(data, EngineConfig(seed=0))
        assert result.K == 1 and np.all(result.labels == 1)

    def test_final_graphs_pairwise_distinct(self):
        data, _ = two_class_data(seed=6)
        result = run(data, EngineConfig(seed=0))
        for a, b in itertools.combinations(result.graphs, 2):
            assert nshd(a, b) > EngineConfig().delta

    def test_too_few_samples_is_single_cluster(self):
        data, _ = two_class_data(n_per=20, seed=7)
        result = run(data, EngineConfig(seed=0))
        assert result.K == 1 and result.converged

    def test_merge_group_soundness(self):
        # two halves of one homogeneous cluster share a structure and must be merged
        data, graphs = two_class_data(seed=8)
        engine = HclEngine(data, EngineConfig(seed=0))
        halves = [np.arange(0, 150), np.arange(150, 300)]
        fits = [engine._fit(h, PenaltySpec.uniform(0.3)) for h in halves]
        parts, _, merges = engine.merge_group(halves, fits)
        assert len(parts) == 1 and len(merges) == 1

    def test_merge_group_separation(self):
        data, graphs = two_class_data(seed=9)
        assert nshd(graphs[0], graphs[1]) > 1.0
        engine = HclEngine(data, EngineConfig(seed=0))
        groups = [np.arange(300), np.arange(300, 600)]
        fits = [engine._fit(g, PenaltySpec.uniform(0.3)) for g in groups]
        parts, _, merges = engine.merge_group(groups, fits)
        assert len(parts) == 2 and not merges

    def test_trace_serializable(self):
        data, _ = two_class_data(seed=10)
        json.dumps(run(data, EngineConfig(seed=0)).to_dict())

    def test_merged_node_reactivated(self):
        data, _ = two_class_data(seed=11)
        engine = HclEngine(data, EngineConfig(seed=0))
        a = engine._new_node(np.arange(0, 150), engine._fit(np.arange(0, 150), PenaltySpec.uniform(0.3)), status="finalized")
        b = engine._new_node(np.arange(150, 300), engine._fit(np.arange(150, 300), PenaltySpec.uniform(0.3)), status="finalized")
        merges = engine.merge_leaves(level=1)
        assert len(merges) == 1
        assert engine.nodes[merges[0]["into"]].status == ACTIVE
        assert a.status == b.status == "merged"
