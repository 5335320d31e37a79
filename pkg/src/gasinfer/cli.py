"""Command-line interface.

Subcommands generate graphs, create models, run full-graph inference on either backend,
run the k-hop oracle and the sampled baseline, compare outputs and export metrics.
Exit codes: 0 success, 1 comparison failure, 2 usage, IO or format error.
"""

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path

from pydantic import ValidationError

from gasinfer import __version__
from gasinfer.core.config import Settings, get_settings
from gasinfer.core.logging import get_logger, setup_logging
from gasinfer.core.models import Algorithm, Backend, InferenceConfig, SkewMode, Strategy
from gasinfer.graph.degrees import compute_degree_stats
from gasinfer.graph.generator import (
    GeneratorError,
    PowerLawParams,
    generate_power_law,
    write_generated,
)
from gasinfer.graph.tables import Graph, GraphTableError, IngestOptions, ingest_tables
from gasinfer.model.aggregate import AggregateError
from gasinfer.model.bundle import (
    ModelBundle,
    ModelFormatError,
    load_model,
    save_model,
    seeded_random_model,
)
from gasinfer.model.fused import NeighborhoodError
from gasinfer.nn.linalg import DimensionError
from gasinfer.services.comparison import ComparisonError, ComparisonReport, compare_outputs
from gasinfer.services.mapreduce import PipelineCorruptionError, run_mr_inference
from gasinfer.services.metrics import (
    MetricsError,
    export_metrics,
    load_metrics_json,
    save_metrics_json,
)
from gasinfer.services.oracle import oracle_khop_forward
from gasinfer.services.outputs import (
    OutputTableError,
    read_output_table,
    write_embeddings,
    write_output_table,
)
from gasinfer.services.pregel import PartitioningError, run_pregel_inference
from gasinfer.services.records import ShuffleError
from gasinfer.services.sampling import sampled_inference
from gasinfer.services.strategies import BroadcastResolutionError

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_ERROR = 2

# failures reported as exit code 2 instead of a traceback
HANDLED_ERRORS: tuple[type[Exception], ...] = (
    AggregateError,
    BroadcastResolutionError,
    ComparisonError,
    DimensionError,
    GeneratorError,
    GraphTableError,
    MetricsError,
    ModelFormatError,
    NeighborhoodError,
    OSError,
    OutputTableError,
    PartitioningError,
    PipelineCorruptionError,
    ShuffleError,
    ValidationError,
    ValueError,
)


def parse_strategies(text: str) -> frozenset[Strategy]:
    """Parse ``pg,bc,sn`` (any subset, ``none`` for the empty set)."""
    text = text.strip()
    if text in ("", "none"):
        return frozenset()
    try:
        return frozenset(Strategy(part.strip()) for part in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(
            f"invalid strategy list {text!r}; expected a subset of pg,bc,sn"
        ) from e


def _enabled(args: argparse.Namespace) -> frozenset[Strategy] | None:
    """Union of every ``--enable`` occurrence; None when the flag was not given."""
    if getattr(args, "no_strategies", False):
        return frozenset()
    if args.enable is None:
        return None
    return frozenset().union(*args.enable)


def _print_json(payload: object) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _print_report(report: ComparisonReport) -> None:
    payload = report.model_dump(mode="json")
    payload["passed"] = report.passed
    payload["multi_class_nodes"] = report.multi_class_nodes
    _print_json(payload)


def _load_graph(args: argparse.Namespace) -> Graph:
    options = IngestOptions(
        add_reverse_edges=getattr(args, "reverse_edges", False),
        add_self_loops=getattr(args, "self_loops", False),
    )
    return ingest_tables(args.nodes, args.edges, options)


def _resolve_model(args: argparse.Namespace, graph: Graph, settings: Settings) -> ModelBundle:
    """Load ``--model`` from disk, or build a seeded model when it names a layer family."""
    path = Path(args.model)
    if path.exists() or args.model not in {algorithm.value for algorithm in Algorithm}:
        model = load_model(path)
        if model.feature_dim != graph.feature_dim:
            raise ModelFormatError(
                f"model expects {model.feature_dim}-dim features, graph has {graph.feature_dim}"
            )
        return model
    return seeded_random_model(
        Algorithm(args.model),
        feature_dim=graph.feature_dim,
        hidden_dim=args.hidden_dim or settings.hidden_dim,
        num_layers=args.layers,
        num_classes=args.classes or settings.num_classes,
        seed=args.seed,
    )


# ============================================================================
# Commands
# ============================================================================


def cmd_gen_graph(args: argparse.Namespace, settings: Settings) -> int:
    params = PowerLawParams(
        num_nodes=args.nodes,
        target_edges=args.edges,
        exponent=args.exponent,
        skew_mode=SkewMode(args.skew),
        feature_dim=args.feature_dim or settings.feature_dim,
        edge_feature_dim=args.edge_feature_dim,
        num_classes=args.classes or settings.num_classes,
        seed=args.seed,
    )
    generated = generate_power_law(params)
    node_path, edge_path, label_path = write_generated(generated, args.out_dir)
    stats = compute_degree_stats(generated.graph)
    _print_json(
        {
            "nodes": str(node_path),
            "edges": str(edge_path),
            "labels": str(label_path),
            "num_nodes": generated.graph.num_nodes,
            "num_edges": generated.graph.num_edges,
            "max_in_degree": stats.max_in,
            "max_out_degree": stats.max_out,
            "mean_degree": stats.mean_degree,
            "in_histogram": stats.in_histogram,
        }
    )
    return EXIT_OK


def cmd_init_model(args: argparse.Namespace, settings: Settings) -> int:
    model = seeded_random_model(
        Algorithm(args.model),
        feature_dim=args.feature_dim or settings.feature_dim,
        hidden_dim=args.hidden_dim or settings.hidden_dim,
        num_layers=args.layers,
        num_classes=args.classes or settings.num_classes,
        seed=args.seed,
        strategies=_enabled(args),
    )
    save_model(model, args.out)
    logger.info("model_written", path=str(args.out), algorithm=model.algorithm.value)
    return EXIT_OK


def cmd_infer(args: argparse.Namespace, settings: Settings) -> int:
    graph = _load_graph(args)
    model = _resolve_model(args, graph, settings)
    backend = Backend(args.backend)
    num_workers = args.workers
    if backend is Backend.MAPREDUCE and args.reducers is not None:
        num_workers = args.reducers

    config = InferenceConfig(
        backend=backend,
        num_workers=num_workers,
        strategies=_enabled(args),
        hub_lambda=args.hub_lambda if args.hub_lambda is not None else settings.hub_lambda,
        threshold_override=args.threshold_override,
        memory_budget_bytes=(
            args.memory_budget_bytes
            if args.memory_budget_bytes is not None
            else settings.memory_budget_bytes
        ),
        spill_dir=args.spill_dir or settings.spill_dir,
        parallel_workers=args.parallel or settings.parallel_workers,
        emit_embeddings=args.emit_embeddings is not None,
    )
    run = run_pregel_inference if backend is Backend.PREGEL else run_mr_inference
    result = run(graph, model, config)

    write_output_table(result.rows, args.out)
    if args.emit_embeddings is not None:
        write_embeddings(result.rows, args.emit_embeddings)
    if args.metrics_json is not None:
        save_metrics_json(result.metrics, args.metrics_json)
    if args.metrics_csv is not None:
        export_metrics(result.metrics, args.metrics_csv)
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace, settings: Settings) -> int:
    graph = _load_graph(args)
    model = _resolve_model(args, graph, settings)
    result = oracle_khop_forward(graph, model, parallel_workers=args.parallel)
    write_output_table(result.rows, args.out)
    _print_json(
        {
            "targets": len(result.rows),
            "nodes_visited": result.total_nodes_visited,
            "edge_visits": result.total_edge_visits,
        }
    )
    return EXIT_OK


def cmd_sample_infer(args: argparse.Namespace, settings: Settings) -> int:
    graph = _load_graph(args)
    model = _resolve_model(args, graph, settings)
    report = sampled_inference(graph, model, args.fanout, args.runs, args.sample_seed)
    _print_report(report)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, settings: Settings) -> int:
    atol = args.atol if args.atol is not None else settings.compare_atol
    report = compare_outputs(read_output_table(args.a), read_output_table(args.b), atol)
    _print_report(report)
    if not report.passed:
        logger.warning(
            "outputs_differ",
            max_abs_diff=report.max_abs_diff,
            mismatched_classes=report.mismatched_class_count,
            atol=atol,
        )
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_metrics_export(args: argparse.Namespace, settings: Settings) -> int:
    metrics = load_metrics_json(args.input)
    export_metrics(metrics, args.output)
    return EXIT_OK


# ============================================================================
# Parser
# ============================================================================


def _add_graph_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--nodes", type=Path, required=True, help="node table TSV")
    parser.add_argument("--edges", type=Path, default=None, help="edge table TSV")
    parser.add_argument("--reverse-edges", action="store_true", help="add v->u for every u->v")
    parser.add_argument("--self-loops", action="store_true", help="add u->u for every node")


def _add_model_source(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--model",
        required=True,
        help="model file, or sage|gat|gcn to build a seeded model on the fly",
    )
    parser.add_argument("--layers", type=int, default=2, help="K for on-the-fly models")
    parser.add_argument("--hidden-dim", type=int, default=None)
    parser.add_argument("--classes", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gasinfer", description="Full-graph GNN inference on BSP and MapReduce backends."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--debug", action="store_true", help="console logs at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-graph", help="generate a synthetic power-law graph")
    gen.add_argument("--nodes", type=int, required=True)
    gen.add_argument("--edges", type=int, required=True)
    gen.add_argument("--exponent", type=float, default=2.1)
    gen.add_argument("--skew", choices=[mode.value for mode in SkewMode], default="in")
    gen.add_argument("--feature-dim", type=int, default=None)
    gen.add_argument("--edge-feature-dim", type=int, default=0)
    gen.add_argument("--classes", type=int, default=None)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", type=Path, required=True)
    gen.set_defaults(handler=cmd_gen_graph)

    init = commands.add_parser("init-model", help="write a seeded random model file")
    init.add_argument("--model", choices=[a.value for a in Algorithm], required=True)
    init.add_argument("--layers", type=int, required=True)
    init.add_argument("--feature-dim", type=int, default=None)
    init.add_argument("--hidden-dim", type=int, default=None)
    init.add_argument("--classes", type=int, default=None)
    init.add_argument("--seed", type=int, default=0)
    init.add_argument(
        "--enable", type=parse_strategies, action="append", default=None, help="e.g. pg,bc,sn"
    )
    init.add_argument("--out", type=Path, required=True)
    init.set_defaults(handler=cmd_init_model)

    infer = commands.add_parser("infer", help="run full-graph inference")
    infer.add_argument("--backend", choices=[b.value for b in Backend], default="pregel")
    infer.add_argument("--workers", type=int, default=1)
    infer.add_argument("--reducers", type=int, default=None, help="reducer count (mr only)")
    _add_graph_inputs(infer)
    _add_model_source(infer)
    strategies = infer.add_mutually_exclusive_group()
    strategies.add_argument(
        "--enable", type=parse_strategies, action="append", default=None, help="e.g. pg,bc"
    )
    strategies.add_argument(
        "--no-strategies", action="store_true", help="ignore the model's strategy switches"
    )
    infer.add_argument("--lambda", dest="hub_lambda", type=float, default=None)
    infer.add_argument("--threshold-override", type=int, default=None)
    infer.add_argument("--memory-budget-bytes", type=int, default=None)
    infer.add_argument("--spill-dir", type=Path, default=None)
    infer.add_argument("--parallel", type=int, default=None, help="threads for workers/tasks")
    infer.add_argument("--out", type=Path, required=True)
    infer.add_argument("--emit-embeddings", type=Path, default=None)
    infer.add_argument("--metrics-json", type=Path, default=None)
    infer.add_argument("--metrics-csv", type=Path, default=None)
    infer.set_defaults(handler=cmd_infer)

    oracle = commands.add_parser("oracle", help="brute-force k-hop inference")
    _add_graph_inputs(oracle)
    _add_model_source(oracle)
    oracle.add_argument("--parallel", type=int, default=None)
    oracle.add_argument("--out", type=Path, required=True)
    oracle.set_defaults(handler=cmd_oracle)

    sample = commands.add_parser("sample-infer", help="neighbor-sampled consistency demo")
    _add_graph_inputs(sample)
    _add_model_source(sample)
    sample.add_argument("--fanout", type=int, required=True)
    sample.add_argument("--runs", type=int, default=10)
    sample.add_argument(
        "--sample-seed", type=int, default=0, help="base seed of the neighbor sampling"
    )
    sample.set_defaults(handler=cmd_sample_infer)

    compare = commands.add_parser("compare", help="compare two output tables")
    compare.add_argument("a", type=Path)
    compare.add_argument("b", type=Path)
    compare.add_argument("--atol", type=float, default=None)
    compare.set_defaults(handler=cmd_compare)

    export = commands.add_parser("metrics-export", help="convert run metrics JSON to CSV")
    export.add_argument("--input", type=Path, required=True)
    export.add_argument("--output", type=Path, required=True)
    export.set_defaults(handler=cmd_metrics_export)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_ERROR

    setup_logging(debug=True if args.debug else None)
    settings = get_settings()
    try:
        code: int = args.handler(args, settings)
    except HANDLED_ERRORS as e:
        logger.error("command_failed", command=args.command, error=str(e), kind=type(e).__name__)
        return EXIT_ERROR
    return code
