"""External-memory (MapReduce-style) full-graph inference engine.

One map round turns node tables into keyed records; each of the K reduce rounds runs
one layer per key group and re-emits the node's state and its out-edge messages for
the next round. All round state travels through the disk-backed shuffle.
"""

import tempfile
import time
from collections.abc import Callable, Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import TypeVar

from gasinfer.core.config import get_settings
from gasinfer.core.logging import get_logger
from gasinfer.core.models import Backend, InferenceConfig, Strategy
from gasinfer.graph.ids import NodeId
from gasinfer.graph.partition import partition_of
from gasinfer.graph.tables import FeatureVector, Graph, NodeRecord, OutEdge
from gasinfer.model.aggregate import aggregate_finalize
from gasinfer.model.bundle import ModelBundle, predict
from gasinfer.model.layers import GnnLayer, NodeState, init_embedding
from gasinfer.model.stages import LayerSignature
from gasinfer.services.messages import (
    BroadcastRef,
    Dense,
    Message,
    broadcast_entry_bytes,
    combine_messages,
    fold_inbox,
)
from gasinfer.services.metrics import RunMetrics, StepMetrics
from gasinfer.services.outputs import InferenceResult, OutputRow
from gasinfer.services.records import (
    KeyedRecord,
    RecordKind,
    decode_in_edge,
    decode_out_edge_info,
    decode_self_state,
    in_edge_record,
    out_edge_info_record,
    self_state_record,
)
from gasinfer.services.shuffle import (
    Combiner,
    KeyGroup,
    SpillRun,
    SpillWriter,
    TaskOutput,
    group_by_key,
    merge_segment,
)
from gasinfer.services.strategies import (
    BroadcastRegistry,
    HubThreshold,
    RegistryEntry,
    active_strategies,
    broadcast_encode,
    effective_model,
    is_output_copy,
    plan_shadow_nodes,
    resolve_threshold,
)

logger = get_logger(__name__)

T = TypeVar("T")


class PipelineCorruptionError(Exception):
    """A key group does not carry exactly one SELF_STATE record."""

    pass


@dataclass
class ReduceStats:
    """Streaming statistics of one reduce task."""

    groups: int = 0
    records_in: int = 0
    bytes_in: int = 0
    peak_group_records: int = 0
    max_inbound_per_node: int = 0


@dataclass
class TaskResult:
    """Everything one map or reduce task hands to the round barrier."""

    task_id: int
    output: TaskOutput | None = None
    entries: list[RegistryEntry] = field(default_factory=list)
    rows: list[OutputRow] = field(default_factory=list)
    metrics: StepMetrics | None = None
    peak_group_records: int = 0


def emit_node(
    node: NodeId,
    state: NodeState,
    out_nbrs: tuple[OutEdge, ...],
    layer: GnnLayer,
    threshold: HubThreshold,
    num_reducers: int,
    entries: list[RegistryEntry],
) -> Iterator[KeyedRecord]:
    """
    Records a node sends into the next round: its SELF_STATE, one IN_EDGE_MSG per
    out-edge (broadcast references for hubs when enabled) and, when the consuming layer
    asks for them, OUT_EDGE_INFO records.
    """
    yield self_state_record(node, state, out_nbrs)
    if not out_nbrs:
        return
    signature = layer.signature
    if signature.broadcast and signature.message_uniform and threshold.is_hub(len(out_nbrs)):
        payload = layer.apply_edge(state, out_nbrs[0])
        published, refs = broadcast_encode(
            node, payload, [edge.dst for edge in out_nbrs], num_reducers
        )
        entries.extend(published)
        for ref in refs:
            yield in_edge_record(ref)
    else:
        for edge in out_nbrs:
            yield in_edge_record(Message(edge.dst, node, Dense(layer.apply_edge(state, edge))))
    if signature.in_edge_features:
        for edge in out_nbrs:
            yield out_edge_info_record(node, edge.dst, edge.features)


def map_init(
    nodes: Iterable[NodeRecord],
    model: ModelBundle,
    threshold: HubThreshold,
    num_reducers: int,
    entries: list[RegistryEntry] | None = None,
) -> Iterator[KeyedRecord]:
    """
    Map round: initial embeddings plus the first layer's messages.

    Emits (v, SELF_STATE(h^0, out-adjacency)) for every node and (u, IN_EDGE_MSG(v, m))
    for every out-edge v -> u. Broadcast payloads are appended to ``entries``.
    """
    sink: list[RegistryEntry] = [] if entries is None else entries
    layer = model.layers[0]
    for record in nodes:
        state = init_embedding(layer, record)
        yield from emit_node(
            record.id, state, record.out_nbrs, layer, threshold, num_reducers, sink
        )


def reduce_layer(
    groups: Iterable[KeyGroup],
    k: int,
    model: ModelBundle,
    registry: BroadcastRegistry,
    reducer_id: int,
    threshold: HubThreshold,
    num_reducers: int,
    entries: list[RegistryEntry],
    stats: ReduceStats | None = None,
    emit_embeddings: bool = False,
) -> Iterator[KeyedRecord | OutputRow]:
    """
    Reduce round k: run layer k on every key group.

    Yields next-round records, or output rows on the last round (only physical nodes
    and mirror #0 report, under the physical id).

    Raises:
        PipelineCorruptionError: If a group has no SELF_STATE or more than one.
        BroadcastResolutionError: If a reference has no registered payload.
    """
    stats = stats or ReduceStats()
    layer = model.layers[k - 1]
    last = k == model.depth
    for key, group in groups:
        stats.groups += 1
        stats.records_in += len(group)
        stats.bytes_in += sum(record.size for record in group)
        stats.peak_group_records = max(stats.peak_group_records, len(group))

        selves = [record for record in group if record.kind is RecordKind.SELF_STATE]
        if len(selves) != 1:
            logger.error("pipeline_corrupted", key=str(key), self_states=len(selves), round=k)
            raise PipelineCorruptionError(
                f"key {key} has {len(selves)} SELF_STATE records in round {k}"
            )
        state, out_nbrs = decode_self_state(selves[0])

        messages: list[Message] = []
        edge_features: dict[NodeId, FeatureVector] = {}
        for record in group:
            if record.kind is RecordKind.IN_EDGE_MSG:
                message = decode_in_edge(record)
                if isinstance(message.payload, BroadcastRef):
                    payload = registry.resolve(reducer_id, message.payload)
                    message = Message(message.dst, message.src, Dense(payload))
                messages.append(message)
            elif record.kind is RecordKind.OUT_EDGE_INFO:
                src, features = decode_out_edge_info(record)
                edge_features[src] = features
        stats.max_inbound_per_node = max(stats.max_inbound_per_node, len(messages))

        gathered = aggregate_finalize(fold_inbox(layer.aggregate_kind, layer.message_dim, messages))
        if layer.signature.in_edge_features:
            gathered.edge_features.update(edge_features)
        new_state = layer.apply_node(state, gathered)

        if last:
            if is_output_copy(key):
                logits, predicted = predict(model.head, new_state)
                yield OutputRow(
                    key.physical(),
                    predicted,
                    logits,
                    new_state.embedding if emit_embeddings else None,
                )
        else:
            yield from emit_node(
                key, new_state, out_nbrs, model.layers[k], threshold, num_reducers, entries
            )


def make_combiner(signature: LayerSignature) -> Combiner | None:
    """Per-key combiner merging plain IN_EDGE_MSG records into one partial, if eligible."""
    if not signature.partial_gather or not signature.size_reducing:
        return None

    def combine(key: NodeId, records: list[KeyedRecord]) -> tuple[list[KeyedRecord], int]:
        plain: list[Message] = []
        kept: list[KeyedRecord] = []
        for record in records:
            if record.kind is RecordKind.IN_EDGE_MSG:
                message = decode_in_edge(record)
                if not isinstance(message.payload, BroadcastRef):
                    plain.append(message)
                    continue
            kept.append(record)
        if len(plain) <= 1:
            return records, 0
        merged = combine_messages(signature.aggregate_kind, signature.message_dim, plain)
        kept.append(in_edge_record(merged))
        kept.sort(key=lambda r: r.sort_key)
        return kept, len(plain) - 1

    return combine


class MapReduceEngine:
    """
    Runs a model over a whole graph in one map round and K reduce rounds.

    Reducer r owns keys with partition_of(key, R) = r. Memory use per reducer is bounded
    by the largest key group plus merge buffers.
    """

    def __init__(self, model: ModelBundle, config: InferenceConfig | None = None) -> None:
        """
        Initialize the engine.

        Args:
            model: Model to run.
            config: Run options; ``num_workers`` is the reducer count R. Defaults come
                from settings.
        """
        settings = get_settings()
        self.config = config or InferenceConfig(
            backend=Backend.MAPREDUCE,
            hub_lambda=settings.hub_lambda,
            memory_budget_bytes=settings.memory_budget_bytes,
            spill_dir=settings.spill_dir,
            parallel_workers=settings.parallel_workers,
        )
        self.model = effective_model(model, self.config)

    @property
    def num_reducers(self) -> int:
        return self.config.num_workers

    def run(self, graph: Graph) -> InferenceResult:
        """
        Run full-graph inference.

        Returns:
            One output row per physical node (ascending id) and the run metrics.
        """
        num_reducers = self.num_reducers
        threshold = resolve_threshold(self.config, graph.num_edges)
        strategies = active_strategies(self.model)

        work_graph = graph
        if Strategy.SHADOW_NODES in strategies:
            work_graph = plan_shadow_nodes(graph, threshold.threshold).graph

        metrics = RunMetrics(
            backend=Backend.MAPREDUCE.value,
            num_workers=num_reducers,
            num_layers=self.model.depth,
            strategies=sorted(s.value for s in strategies),
            threshold=threshold.threshold,
        )
        logger.info(
            "mr_run_started",
            num_nodes=work_graph.num_nodes,
            num_edges=work_graph.num_edges,
            reducers=num_reducers,
            rounds=self.model.depth + 1,
            memory_budget_bytes=self.config.memory_budget_bytes,
            strategies=metrics.strategies,
        )

        spill_root = self.config.spill_dir
        if spill_root is not None:
            spill_root.mkdir(parents=True, exist_ok=True)
        executor = (
            ThreadPoolExecutor(max_workers=self.config.parallel_workers)
            if self.config.parallel_workers > 1
            else None
        )
        rows: list[OutputRow] = []
        try:
            with tempfile.TemporaryDirectory(prefix="gasinfer-", dir=spill_root) as tmp:
                spill_dir = Path(tmp)
                tasks: list[list[NodeRecord]] = [[] for _ in range(num_reducers)]
                for node, record in work_graph.nodes.items():
                    tasks[partition_of(node, num_reducers)].append(record)

                results = self._run_tasks(
                    executor,
                    lambda task_id: self._map_task(task_id, tasks[task_id], threshold, spill_dir),
                )
                self._record_round(metrics, 0, results)

                for k in range(1, self.model.depth + 1):
                    registry = BroadcastRegistry()
                    for result in results:
                        for entry in result.entries:
                            registry.publish(entry)
                    outputs = [result.output for result in results if result.output is not None]
                    runs = [run for output in outputs for run in output.runs]

                    results = self._run_tasks(
                        executor,
                        partial(
                            self._reduce_task,
                            k=k,
                            runs=runs,
                            registry=registry,
                            threshold=threshold,
                            spill_dir=spill_dir,
                        ),
                    )
                    for run in runs:
                        run.delete()
                    self._record_round(metrics, k, results)
                    for result in results:
                        rows.extend(result.rows)
        finally:
            if executor is not None:
                executor.shutdown()

        rows.sort(key=lambda r: r.node_id)
        logger.info(
            "mr_run_completed",
            rows=len(rows),
            rounds=self.model.depth + 1,
            peak_group_records=metrics.peak_group_records,
            spill_runs=metrics.spill_runs,
        )
        return InferenceResult(rows=rows, metrics=metrics)

    def _run_tasks(
        self, executor: ThreadPoolExecutor | None, task: Callable[[int], T]
    ) -> list[T]:
        ids = range(self.num_reducers)
        if executor is None:
            return [task(task_id) for task_id in ids]
        return list(executor.map(task, ids))

    def _writer(self, task_id: int, round_index: int, spill_dir: Path) -> SpillWriter:
        signature = self.model.layers[round_index].signature
        return SpillWriter(
            task_id,
            self.num_reducers,
            spill_dir,
            self.config.memory_budget_bytes,
            make_combiner(signature),
            prefix=f"r{round_index:03d}",
        )

    def _map_task(
        self,
        task_id: int,
        records: list[NodeRecord],
        threshold: HubThreshold,
        spill_dir: Path,
    ) -> TaskResult:
        started = time.perf_counter()
        result = TaskResult(task_id=task_id)
        writer = self._writer(task_id, 0, spill_dir)
        writer.extend(map_init(records, self.model, threshold, self.num_reducers, result.entries))
        result.output = writer.close()
        result.metrics = self._task_metrics(task_id, 0, result, started)
        return result

    def _reduce_task(
        self,
        task_id: int,
        k: int,
        runs: list[SpillRun],
        registry: BroadcastRegistry,
        threshold: HubThreshold,
        spill_dir: Path,
    ) -> TaskResult:
        started = time.perf_counter()
        result = TaskResult(task_id=task_id)
        stats = ReduceStats()
        last = k == self.model.depth
        writer = None if last else self._writer(task_id, k, spill_dir)

        stream = reduce_layer(
            group_by_key(merge_segment(runs, task_id)),
            k,
            self.model,
            registry,
            task_id,
            threshold,
            self.num_reducers,
            result.entries,
            stats,
            self.config.emit_embeddings,
        )
        for item in stream:
            if isinstance(item, OutputRow):
                result.rows.append(item)
            elif writer is not None:
                writer.add(item)
        if writer is not None:
            result.output = writer.close()

        metrics = self._task_metrics(task_id, k, result, started)
        metrics.msgs_in = stats.records_in
        metrics.bytes_in = stats.bytes_in + sum(
            broadcast_entry_bytes(payload)
            for (worker, _), payload in registry.entries.items()
            if worker == task_id
        )
        metrics.max_inbound_per_node = stats.max_inbound_per_node
        result.metrics = metrics
        result.peak_group_records = stats.peak_group_records
        return result

    @staticmethod
    def _task_metrics(
        task_id: int, round_index: int, result: TaskResult, started: float
    ) -> StepMetrics:
        metrics = StepMetrics(worker=task_id, step=round_index)
        if result.output is not None:
            metrics.msgs_out = result.output.records_out
            metrics.bytes_out = result.output.bytes_out + sum(
                broadcast_entry_bytes(e.payload) for e in result.entries
            )
            metrics.combiner_savings = result.output.combiner_savings
        metrics.broadcast_payloads = len(result.entries)
        metrics.wall_ms = (time.perf_counter() - started) * 1000.0
        return metrics

    @staticmethod
    def _record_round(metrics: RunMetrics, round_index: int, results: list[TaskResult]) -> None:
        for result in sorted(results, key=lambda r: r.task_id):
            if result.metrics is not None:
                metrics.rows.append(result.metrics)
            if result.output is not None:
                metrics.spill_runs += result.output.spills
            metrics.peak_group_records = max(metrics.peak_group_records, result.peak_group_records)
        logger.info(
            "round_completed",
            round=round_index,
            kind="map" if round_index == 0 else "reduce",
            records_out=metrics.step_total(round_index, "msgs_out"),
            bytes_out=metrics.step_total(round_index, "bytes_out"),
        )


def run_mr_inference(
    graph: Graph, model: ModelBundle, config: InferenceConfig | None = None
) -> InferenceResult:
    """Run full-graph inference on the external-memory backend."""
    return MapReduceEngine(model, config).run(graph)
