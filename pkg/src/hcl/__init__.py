"""Joint clustering and cluster-specific causal structure learning for mixed data."""

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
    topological_order,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkSpec",
    "MixedDataset",
    "ScmSpec",
    "VariableSchema",
    "WeightedDag",
    "generate_benchmark",
    "generate_er_dag",
    "sample_edge_weights",
    "simulate",
    "topological_order",
]
