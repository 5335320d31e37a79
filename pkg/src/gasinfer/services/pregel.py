"""Bulk-synchronous (Pregel-style) full-graph inference engine."""

import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from gasinfer.core.config import get_settings
from gasinfer.core.logging import get_logger
from gasinfer.core.models import Backend, InferenceConfig, Strategy
from gasinfer.graph.ids import NodeId
from gasinfer.graph.partition import GraphPartition, partition_graph, partition_of
from gasinfer.graph.tables import Graph
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
    message_bytes,
)
from gasinfer.services.metrics import RunMetrics, StepMetrics
from gasinfer.services.outputs import InferenceResult, OutputRow
from gasinfer.services.strategies import (
    BroadcastRegistry,
    HubThreshold,
    RegistryEntry,
    active_strategies,
    broadcast_encode,
    broadcast_resolve,
    effective_model,
    is_output_copy,
    plan_shadow_nodes,
    resolve_threshold,
)

logger = get_logger(__name__)


class PartitioningError(Exception):
    """A message reached a worker that does not own its destination."""

    pass


class StepRole(str, Enum):
    """What a superstep does."""

    INIT = "init"
    LAYER = "layer"
    PREDICT = "predict"


@dataclass(frozen=True)
class SuperstepPlan:
    """K + 1 supersteps: init, then one per layer, the last one also predicting."""

    num_layers: int

    @property
    def total_supersteps(self) -> int:
        return self.num_layers + 1

    def role(self, step: int) -> StepRole:
        if not 0 <= step <= self.num_layers:
            raise ValueError(f"superstep {step} outside 0..{self.num_layers}")
        if step == 0:
            return StepRole.INIT
        if step == self.num_layers:
            return StepRole.PREDICT
        return StepRole.LAYER


@dataclass
class WorkerStepResult:
    """What one worker hands to the barrier."""

    worker_id: int
    outbox: dict[int, list[Message]] = field(default_factory=dict)
    entries: list[RegistryEntry] = field(default_factory=list)
    rows: list[OutputRow] = field(default_factory=list)
    metrics: StepMetrics | None = None


def combine_outbox(bucket: list[Message], signature: LayerSignature) -> tuple[list[Message], int]:
    """
    Merge all combinable messages sharing a destination into one ``Partial``.

    Broadcast references pass through. Without partial-gather (or for a union
    aggregate) the bucket is returned unchanged.

    Returns:
        The combined bucket in (dst, src) order and the number of messages merged away.
    """
    if not signature.partial_gather or not signature.size_reducing:
        return bucket, 0

    by_dst: dict[NodeId, list[Message]] = defaultdict(list)
    passthrough: list[Message] = []
    for message in bucket:
        if isinstance(message.payload, BroadcastRef):
            passthrough.append(message)
        else:
            by_dst[message.dst].append(message)

    combined = list(passthrough)
    savings = 0
    for group in by_dst.values():
        if len(group) == 1:
            combined.append(group[0])
            continue
        combined.append(combine_messages(signature.aggregate_kind, signature.message_dim, group))
        savings += len(group) - 1
    combined.sort(key=lambda m: (m.dst, m.src))
    return combined, savings


class PregelWorker:
    """One logical worker: a partition, its node states and its compute function."""

    def __init__(
        self,
        partition: GraphPartition,
        model: ModelBundle,
        num_workers: int,
        threshold: HubThreshold,
        emit_embeddings: bool = False,
    ) -> None:
        self.partition = partition
        self.model = model
        self.num_workers = num_workers
        self.threshold = threshold
        self.emit_embeddings = emit_embeddings

    @property
    def worker_id(self) -> int:
        return self.partition.worker_id

    def superstep_compute(
        self,
        step: int,
        role: StepRole,
        inbox: list[Message],
        registry: BroadcastRegistry,
    ) -> WorkerStepResult:
        """
        Run one superstep on this worker.

        Args:
            step: Superstep index.
            role: Init, layer or predict.
            inbox: Messages sent to this worker in the previous superstep.
            registry: Broadcast payloads published in the previous superstep.

        Raises:
            PartitioningError: If a message targets a node this worker does not own.
            BroadcastResolutionError: If a reference has no registered payload.
        """
        started = time.perf_counter()
        result = WorkerStepResult(worker_id=self.worker_id)
        metrics = StepMetrics(worker=self.worker_id, step=step)
        result.metrics = metrics

        metrics.msgs_in = len(inbox)
        metrics.bytes_in = sum(message_bytes(m) for m in inbox) + sum(
            broadcast_entry_bytes(payload)
            for (worker, _), payload in registry.entries.items()
            if worker == self.worker_id
        )

        nodes = sorted(self.partition.nodes)
        if role is StepRole.INIT:
            layer = self.model.layers[0]
            for node in nodes:
                state = init_embedding(layer, self.partition.nodes[node])
                self.partition.node_state[node] = state
                self._scatter(node, state, layer, result)
        else:
            layer = self.model.layers[step - 1]
            grouped = self._group_inbox(inbox, registry)
            metrics.max_inbound_per_node = max((len(g) for g in grouped.values()), default=0)
            for node in nodes:
                gathered = aggregate_finalize(
                    fold_inbox(layer.aggregate_kind, layer.message_dim, grouped.get(node, []))
                )
                if layer.signature.in_edge_features:
                    gathered.edge_features.update(self.partition.in_edge_features.get(node, {}))
                state = layer.apply_node(self.partition.node_state[node], gathered)
                self.partition.node_state[node] = state
                if role is StepRole.PREDICT:
                    if is_output_copy(node):
                        result.rows.append(self._output_row(node, state))
                else:
                    self._scatter(node, state, self.model.layers[step], result)

        if role is not StepRole.PREDICT:
            signature = self.model.layers[step].signature
            for dst_worker in list(result.outbox):
                bucket, savings = combine_outbox(result.outbox[dst_worker], signature)
                result.outbox[dst_worker] = bucket
                metrics.combiner_savings += savings

        outgoing = [m for bucket in result.outbox.values() for m in bucket]
        metrics.msgs_out = len(outgoing)
        metrics.broadcast_payloads = len(result.entries)
        metrics.bytes_out = sum(message_bytes(m) for m in outgoing) + sum(
            broadcast_entry_bytes(e.payload) for e in result.entries
        )
        metrics.wall_ms = (time.perf_counter() - started) * 1000.0
        logger.debug(
            "worker_superstep_completed",
            worker=self.worker_id,
            step=step,
            role=role.value,
            msgs_in=metrics.msgs_in,
            msgs_out=metrics.msgs_out,
        )
        return result

    def _group_inbox(
        self, inbox: list[Message], registry: BroadcastRegistry
    ) -> dict[NodeId, list[Message]]:
        grouped: dict[NodeId, list[Message]] = defaultdict(list)
        for message in inbox:
            if message.dst not in self.partition.nodes:
                logger.error(
                    "message_misrouted", worker=self.worker_id, dst=str(message.dst)
                )
                raise PartitioningError(
                    f"worker {self.worker_id} received a message for {message.dst}, owned by "
                    f"worker {partition_of(message.dst, self.num_workers)}"
                )
            if isinstance(message.payload, BroadcastRef):
                payload = broadcast_resolve(message.payload, registry, self.worker_id)
                message = Message(message.dst, message.src, Dense(payload))
            grouped[message.dst].append(message)
        return grouped

    def _scatter(
        self, node: NodeId, state: NodeState, layer: GnnLayer, result: WorkerStepResult
    ) -> None:
        record = self.partition.nodes[node]
        if not record.out_nbrs:
            return
        if (
            layer.signature.broadcast
            and layer.signature.message_uniform
            and self.threshold.is_hub(record.out_degree)
        ):
            payload = layer.apply_edge(state, record.out_nbrs[0])
            entries, refs = broadcast_encode(
                node, payload, [edge.dst for edge in record.out_nbrs], self.num_workers
            )
            result.entries.extend(entries)
            for ref in refs:
                self._enqueue(ref, result)
            return
        for edge in record.out_nbrs:
            self._enqueue(Message(edge.dst, node, Dense(layer.apply_edge(state, edge))), result)

    def _enqueue(self, message: Message, result: WorkerStepResult) -> None:
        result.outbox.setdefault(partition_of(message.dst, self.num_workers), []).append(message)

    def _output_row(self, node: NodeId, state: NodeState) -> OutputRow:
        logits, predicted = predict(self.model.head, state)
        return OutputRow(
            node_id=node.physical(),
            predicted_class=predicted,
            logits=logits,
            embedding=state.embedding if self.emit_embeddings else None,
        )


class PregelEngine:
    """
    Runs a model over a whole graph in K + 1 supersteps.

    Workers only touch their own partition between barriers; outboxes become inboxes
    and published broadcast payloads become the registry at the barrier.
    After ``run`` the workers of that run stay available with their final node states.
    """

    def __init__(self, model: ModelBundle, config: InferenceConfig | None = None) -> None:
        """
        Initialize the engine.

        Args:
            model: Model to run.
            config: Run options. Defaults to one worker and the model's own strategy flags.
        """
        settings = get_settings()
        self.config = config or InferenceConfig(
            backend=Backend.PREGEL,
            hub_lambda=settings.hub_lambda,
            parallel_workers=settings.parallel_workers,
        )
        self.model = effective_model(model, self.config)
        self.plan = SuperstepPlan(self.model.depth)
        self.workers: list[PregelWorker] = []

    def run(self, graph: Graph) -> InferenceResult:
        """
        Run full-graph inference.

        Returns:
            One output row per physical node (ascending id) and the run metrics.
        """
        num_workers = self.config.num_workers
        threshold = resolve_threshold(self.config, graph.num_edges)
        strategies = active_strategies(self.model)

        work_graph = graph
        if Strategy.SHADOW_NODES in strategies:
            work_graph = plan_shadow_nodes(graph, threshold.threshold).graph

        workers = [
            PregelWorker(part, self.model, num_workers, threshold, self.config.emit_embeddings)
            for part in partition_graph(work_graph, num_workers)
        ]
        self.workers = workers
        order = self.config.worker_order or list(range(num_workers))
        metrics = RunMetrics(
            backend=Backend.PREGEL.value,
            num_workers=num_workers,
            num_layers=self.model.depth,
            strategies=sorted(s.value for s in strategies),
            threshold=threshold.threshold,
        )
        logger.info(
            "pregel_run_started",
            num_nodes=work_graph.num_nodes,
            num_edges=work_graph.num_edges,
            workers=num_workers,
            supersteps=self.plan.total_supersteps,
            strategies=metrics.strategies,
            threshold=threshold.threshold,
        )

        inboxes: list[list[Message]] = [[] for _ in range(num_workers)]
        registry = BroadcastRegistry()
        rows: list[OutputRow] = []
        executor = (
            ThreadPoolExecutor(max_workers=self.config.parallel_workers)
            if self.config.parallel_workers > 1
            else None
        )
        try:
            for step in range(self.plan.total_supersteps):
                role = self.plan.role(step)

                tasks = [(workers[w], inboxes[w]) for w in order]
                if executor is not None:
                    results = list(
                        executor.map(
                            lambda task: task[0].superstep_compute(step, role, task[1], registry),
                            tasks,
                        )
                    )
                else:
                    results = [
                        worker.superstep_compute(step, role, inbox, registry)
                        for worker, inbox in tasks
                    ]

                # barrier
                results.sort(key=lambda r: r.worker_id)
                inboxes = [[] for _ in range(num_workers)]
                registry.clear()
                for result in results:
                    for dst_worker, bucket in sorted(result.outbox.items()):
                        inboxes[dst_worker].extend(bucket)
                    for entry in result.entries:
                        registry.publish(entry)
                    rows.extend(result.rows)
                    if result.metrics is not None:
                        metrics.rows.append(result.metrics)

                logger.info(
                    "superstep_completed",
                    step=step,
                    role=role.value,
                    msgs_out=metrics.step_total(step, "msgs_out"),
                    bytes_out=metrics.step_total(step, "bytes_out"),
                )
        finally:
            if executor is not None:
                executor.shutdown()

        rows.sort(key=lambda r: r.node_id)
        logger.info("pregel_run_completed", rows=len(rows), supersteps=self.plan.total_supersteps)
        return InferenceResult(rows=rows, metrics=metrics)


def run_pregel_inference(
    graph: Graph, model: ModelBundle, config: InferenceConfig | None = None
) -> InferenceResult:
    """Run full-graph inference on the BSP backend."""
    return PregelEngine(model, config).run(graph)
