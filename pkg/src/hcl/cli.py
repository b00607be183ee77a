"""Command-line entry point: ``hcl {generate,run,bench,oracle,analyze}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 oracle failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from hcl import io, metrics, plotting, theory
from hcl.engine import EngineConfig, HclResult, run as run_engine
from hcl.learner import LearnerConfig
from hcl.sem import COMPLEXITY, BENCHMARK_GRIDS, BenchmarkSpec, MixedDataset, WeightedDag, generate_benchmark, grid_settings

log = logging.getLogger("hcl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ORACLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_engine_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("engine")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--delta", type=float, default=1.0, help="NSHD merge threshold")
    g.add_argument("--lambda1", type=float, default=0.1, help="penalty on backbone edges")
    g.add_argument("--lambda2", type=float, default=0.3, help="penalty on non-backbone edges")
    g.add_argument("--allow-inverted", action="store_true", help="accept lambda1 >= lambda2")
    g.add_argument("--max-iter", type=int, default=100)
    g.add_argument("--eta", type=float, default=20.0)
    g.add_argument("--tau", type=float, default=0.5)
    g.add_argument("--edge-threshold", type=float, default=0.3)
    g.add_argument("--reassign-lambda", type=float, default=None, help="penalty for refits after reassignment (default: lambda1)")
    g.add_argument("--min-cluster-size", type=int, default=None, help="default: 3 x number of variables")


def _add_grid_flags(p: argparse.ArgumentParser):
    p.add_argument("--dataset", type=int, required=True, choices=sorted(BENCHMARK_GRIDS))
    p.add_argument("--binary-fraction", type=float, default=0.0, help="share of variables made binary")


def _engine_config(args) -> EngineConfig:
    try:
        return EngineConfig(
            delta=args.delta,
            lambda1=args.lambda1,
            lambda2=args.lambda2,
            allow_inverted=args.allow_inverted,
            max_iter=args.max_iter,
            eta=args.eta,
            tau=args.tau,
            min_cluster_size=args.min_cluster_size,
            reassign_lambda=args.reassign_lambda,
            learner=LearnerConfig(edge_threshold=args.edge_threshold),
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _grid_help() -> str:
    lines = ["valid benchmark grid:"]
    for ds, grid in BENCHMARK_GRIDS.items():
        (key, values), = grid.items()
        lines.append(f"  dataset {ds}: --{key.replace('_', '-')} in {values}")
    return "\n".join(lines)


def _write_report(out: Path, stem: str, rows: list[dict], fmt: str, columns=None) -> Path:
    if fmt == "json":
        return io.write_json(out / f"{stem}.json", rows)
    return io.write_table(out / f"{stem}.csv", rows, columns)


# -- generate --------------------------------------------------------------

def cmd_generate(args) -> int:
    grid = {
        1: {"n_per_class": args.n_per_class},
        2: {"sizes": args.sizes},
        3: {"edges": args.edges},
        4: {"complexity": args.complexity},
        5: {"k": args.k},
    }
    foreign = [
        flag for ds, kw in grid.items() if ds != args.dataset for flag, v in kw.items() if v is not None
    ]
    if foreign:
        raise UsageError(f"--{foreign[0].replace('_', '-')} does not apply to dataset {args.dataset}\n{_grid_help()}")
    try:
        spec = BenchmarkSpec.for_dataset(args.dataset, args.seed, binary_fraction=args.binary_fraction, **grid[args.dataset])
        data, graphs = generate_benchmark(spec)
    except ValueError as exc:
        raise UsageError(f"{exc}\n{_grid_help()}") from exc
    out = Path(args.out)
    io.write_dataset(data, out / "data.csv", out / "schema.json")
    io.write_graphs(out / "truth_graphs.json", graphs)
    io.write_labels(out / "labels.csv", data.labels)
    print(f"wrote {data.num_samples} rows x {data.num_vars} variables and {len(graphs)} graphs to {out}")
    return EXIT_OK


# -- run -------------------------------------------------------------------

def evaluate(result: HclResult, truth_labels, truth_graphs: Optional[list[WeightedDag]]) -> list[dict]:
    """One row per predicted cluster with ARI, K-hat and (given truth graphs) FDR/TPR."""
    score = metrics.ari(truth_labels, result.labels)
    if truth_graphs is None:
        mapping = metrics.match_clusters(result.labels, truth_labels)
        return [
            {"cluster": k, "matched": mapping[k], "size": int(np.sum(result.labels == k)), "ari": score, "k_hat": result.K}
            for k in sorted(mapping)
        ]
    rows = metrics.cluster_edge_metrics(result.labels, result.graphs, truth_labels, truth_graphs)
    for r in rows:
        r.update(ari=score, k_hat=result.K)
    return rows


def _load_truth(args, data: MixedDataset):
    labels = io.read_labels(args.truth_labels) if args.truth_labels else data.labels
    graphs = io.read_graphs(args.truth_graphs) if args.truth_graphs else None
    if labels is not None and len(labels) != data.num_samples:
        raise io.DataError(f"{len(labels)} truth labels for {data.num_samples} samples")
    if graphs is not None:
        if labels is None:
            raise io.DataError("truth graphs need truth labels to match clusters")
        if len(graphs) != np.unique(labels).size:
            raise io.DataError(f"{len(graphs)} truth graphs for {np.unique(labels).size} labeled classes")
        if any(g.num_vars != data.num_vars for g in graphs):
            raise io.DataError("truth graphs do not match the number of variables")
    return labels, graphs


def _result_payload(result: HclResult, data: MixedDataset) -> dict:
    payload = result.to_dict()
    payload["variables"] = list(data.schema.names)
    return payload


def cmd_run(args) -> int:
    config = _engine_config(args)
    data = io.read_dataset(args.data, args.schema)
    truth_labels, truth_graphs = _load_truth(args, data)
    result = run_engine(data, config)
    out = Path(args.out)
    io.write_json(out / "result.json", _result_payload(result, data))
    if args.trace_jsonl:
        io.atomic_write(out / "trace.jsonl", "".join(json.dumps(t) + "\n" for t in result.trace))
    if not args.no_plots:
        plotting.plot_adjacency(result.graphs, data.schema.names, out / "graphs.png")
    msg = f"K = {result.K}"
    if truth_labels is not None:
        rows = evaluate(result, truth_labels, truth_graphs)
        _write_report(out, "metrics", rows, args.format)
        msg += f", ARI = {rows[0]['ari']:.3f}"
    print(msg)
    return EXIT_OK


# -- bench -----------------------------------------------------------------

def _summary(values: list[float]) -> tuple[float, Optional[float]]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), (float(arr.std(ddof=1)) if arr.size > 1 else None)


def cmd_bench(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    config = _engine_config(args)
    out = Path(args.out)
    long_rows, summary_rows = [], []
    for setting in grid_settings(args.dataset):
        (key, value), = setting.items()
        condition = f"{key}={value if not isinstance(value, list) else ':'.join(map(str, value))}"
        per_rep = []
        for rep in range(args.reps):
            seed = args.seed + rep
            spec = BenchmarkSpec.for_dataset(args.dataset, seed, binary_fraction=args.binary_fraction, **setting)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                data, graphs = generate_benchmark(spec)
            result = run_engine(data, replace(config, seed=seed))
            rows = evaluate(result, data.labels, graphs)
            for r in rows:
                long_rows.append({"dataset": args.dataset, "condition": condition, "rep": rep, "seed": seed, **r})
            per_rep.append(
                {
                    "ari": rows[0]["ari"],
                    "k_hat": result.K,
                    "tpr": float(np.mean([r["tpr"] for r in rows])),
                    "fdr": float(np.mean([r["fdr"] for r in rows])),
                }
            )
            log.info("%s rep %d: K=%d ARI=%.3f", condition, rep, result.K, rows[0]["ari"])
        row = {"dataset": args.dataset, "condition": condition, "reps": args.reps}
        for m in ("ari", "k_hat", "tpr", "fdr"):
            row[f"{m}_mean"], row[f"{m}_std"] = _summary([p[m] for p in per_rep])
        summary_rows.append(row)
        print(f"{condition}: ARI {row['ari_mean']:.3f}, K {row['k_hat_mean']:.2f}, TPR {row['tpr_mean']:.3f}, FDR {row['fdr_mean']:.3f}")
    long_cols = ["dataset", "condition", "rep", "seed", "cluster", "matched", "size", "ari", "k_hat", "fdr", "tpr"]
    _write_report(out, "bench_long", long_rows, args.format, long_cols)
    _write_report(out, "bench_summary", summary_rows, args.format)
    if not args.no_plots:
        plotting.plot_bench(summary_rows, out / "bench_summary.png")
    return EXIT_OK


# -- oracle ----------------------------------------------------------------

def _oracle_prop2(args) -> list[dict]:
    grid = theory.default_grid()
    worst_fdr = max(theory.backbone_fdr_ratio(p) for p in grid)
    worst_spec = min(theory.specificity_gain_ratio(p) for p in grid)
    mc = theory.prop2_monte_carlo(theory.Prop2Params(n=args.n or 100), args.trials, args.seed)
    lo = mc.mean_backbone - mc.mean_uniform
    se = float(np.hypot(mc.se_backbone, mc.se_uniform))
    return [
        {"check": "max backbone FDR ratio on grid", "value": worst_fdr, "target": "< 1", "pass": worst_fdr < 1},
        {"check": "min specificity gain ratio on grid", "value": worst_spec, "target": "> 1", "pass": worst_spec > 1},
        {
            "check": f"false edges backbone - uniform (+/- {1.96 * se:.3f})",
            "value": lo,
            "target": "< 0",
            "pass": lo < 0,
        },
        {"check": "sign test p-value", "value": mc.sign_test_p, "target": "< 0.05", "pass": mc.sign_test_p < 0.05},
    ]


def _oracle_prop1(args) -> list[dict]:
    r = theory.prop1_report(args.n or 2000, args.seed)
    ari_z, ari_x = theory.prop1_separation(args.n or 2000, args.seed)
    return [
        {"check": "model a vs b 2-means ARI, latent minus raw", "value": ari_z - ari_x, "target": ">= 0", "pass": ari_z >= ari_x},
        {"check": "model a correlation", "value": r["corr_a"], "target": "> 0.3", "pass": abs(r["corr_a"]) > 0.3},
        {"check": "model a vs b latent KS p-value", "value": r["ks_p_a_vs_b"], "target": "< 0.01", "pass": r["ks_p_a_vs_b"] < 0.01},
        {"check": "model d 2-means ARI on latent", "value": r["ari_d_latent"], "target": ">= 0.6", "pass": r["ari_d_latent"] >= 0.6},
        {"check": "model d 2-means ARI on raw data", "value": r["ari_d_raw"], "target": "(reference)", "pass": True},
    ]


def _oracle_phi(args) -> list[dict]:
    ident = theory.phi_identity_check(args.n or 10_000, args.seed)
    mc = theory.phi_monte_carlo_check(seed=args.seed)
    return [
        {"check": "total-expectation identity, max error", "value": ident, "target": "<= 1e-9", "pass": ident <= 1e-9},
        {"check": "truncated mean vs Monte Carlo, max gap", "value": mc, "target": "<= 0.01", "pass": mc <= 0.01},
    ]


ORACLES = {"prop1": _oracle_prop1, "prop2": _oracle_prop2, "phi": _oracle_phi}


def cmd_oracle(args) -> int:
    rows = ORACLES[args.which](args)
    for r in rows:
        r["value"], r["pass"] = float(r["value"]), bool(r["pass"])
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['check']:<{width}}  {r['value']:.6g}  ({r['target']})")
    if args.out:
        io.write_json(Path(args.out) / f"oracle_{args.which}.json", rows)
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_ORACLE


# -- analyze ---------------------------------------------------------------

def node_activity(data: MixedDataset, labels, graphs, center=None) -> dict[int, np.ndarray]:
    """Per-sample node activity: ``|x - mean| * downstream influence`` under the sample's cluster graph."""
    center = data.values.mean(axis=0) if center is None else center
    out = {}
    for k, g in zip(sorted(np.unique(labels).tolist()), graphs):
        rows = np.asarray(labels) == k
        out[k] = np.abs(data.values[rows] - center) * metrics.downstream_influence(g)
    return out


def analyze(data: MixedDataset, labels, graphs: list[WeightedDag], raw_flow_ratio: bool = False):
    names = data.schema.names
    clusters = sorted(np.unique(labels).tolist())
    score_rows = []
    for k, g in zip(clusters, graphs):
        fr = metrics.flow_ratio(g, smoothed=not raw_flow_ratio)
        infl = metrics.downstream_influence(g)
        for j, name in enumerate(names):
            score_rows.append({"cluster": k, "node": name, "flow_ratio": float(fr[j]), "influence": float(infl[j])})
    activity = node_activity(data, labels, graphs)
    test_rows = []
    for a in range(len(clusters)):
        for b in range(a + 1, len(clusters)):
            ka, kb = clusters[a], clusters[b]
            for j, name in enumerate(names):
                u, p = metrics.wilcoxon_rank_sum(activity[ka][:, j], activity[kb][:, j])
                test_rows.append({"node": name, "cluster_a": ka, "cluster_b": kb, "u": u, "p_value": p})
    return score_rows, test_rows


def cmd_analyze(args) -> int:
    config = None if args.result else _engine_config(args)
    data = io.read_dataset(args.data, args.schema)
    if args.result:
        payload = io.read_json(args.result)
        try:
            labels = np.asarray(payload["labels"])
            graphs = [WeightedDag.from_dict(g) for g in payload["graphs"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise io.DataError(f"{args.result}: malformed result ({exc})") from exc
        if labels.size != data.num_samples:
            raise io.DataError(f"result has {labels.size} labels for {data.num_samples} samples")
        if len(graphs) != np.unique(labels).size:
            raise io.DataError("result has a different number of graphs and clusters")
    else:
        result = run_engine(data, config)
        labels, graphs = result.labels, result.graphs
        io.write_json(Path(args.out) / "result.json", _result_payload(result, data))
    if any(g.num_vars != data.num_vars for g in graphs):
        raise io.DataError("result graphs do not match the number of variables")
    out = Path(args.out)
    score_rows, test_rows = analyze(data, labels, graphs, args.raw_flow_ratio)
    _write_report(out, "node_scores", score_rows, args.format, ["cluster", "node", "flow_ratio", "influence"])
    _write_report(out, "pairwise_tests", test_rows, args.format, ["node", "cluster_a", "cluster_b", "u", "p_value"])
    summary = {"k_hat": int(np.unique(labels).size), "sizes": {str(k): int(np.sum(labels == k)) for k in np.unique(labels)}}
    truth = io.read_labels(args.truth_labels) if args.truth_labels else data.labels
    if truth is not None:
        summary["ari"] = metrics.ari(truth, labels)
    io.write_json(out / "summary.json", summary)
    if not args.no_plots:
        names = data.schema.names
        plotting.plot_node_scores(score_rows, "flow_ratio", out / "flow_ratio.png", "flow ratio")
        plotting.plot_node_scores(score_rows, "influence", out / "influence.png", "downstream influence")
        plotting.plot_adjacency(graphs, names, out / "graphs.png")
    msg = f"K = {summary['k_hat']}"
    if "ari" in summary:
        msg += f", ARI = {summary['ari']:.3f}"
    print(msg)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hcl", description="Joint clustering and causal structure learning on mixed data")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="simulate a benchmark dataset")
    _add_grid_flags(p)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--sizes", type=_int_list, help="class sizes, e.g. 50,500")
    p.add_argument("--edges", type=int)
    p.add_argument("--complexity", choices=list(COMPLEXITY))
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="cluster a dataset and learn one graph per cluster")
    p.add_argument("--data", required=True)
    p.add_argument("--schema")
    p.add_argument("--truth-graphs")
    p.add_argument("--truth-labels")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--trace-jsonl", action="store_true", help="also write the iteration trace as JSON lines")
    p.add_argument("--no-plots", action="store_true")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="repeat generate/run/evaluate over a dataset's grid")
    _add_grid_flags(p)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--no-plots", action="store_true")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="numerical checks of the theory")
    p.add_argument("which", choices=sorted(ORACLES))
    p.add_argument("--n", type=int, default=None, help="sample size (prop1, prop2) or number of inputs (phi)")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("analyze", help="flow ratios, downstream influence and rank-sum tests per cluster")
    p.add_argument("--data", required=True)
    p.add_argument("--schema")
    p.add_argument("--result", help="result JSON from 'run'; the engine is run when omitted")
    p.add_argument("--truth-labels")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--raw-flow-ratio", action="store_true", help="unsmoothed out/in degree ratio")
    p.add_argument("--no-plots", action="store_true")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    level = os.environ.get("HCL_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except io.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
