"""Hub-node strategies: threshold heuristic, shadow nodes and broadcast encoding."""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction

from gasinfer.core.logging import get_logger
from gasinfer.core.models import InferenceConfig, Strategy
from gasinfer.graph.degrees import DegreeStats, compute_degree_stats
from gasinfer.graph.ids import MAX_GROUP, NodeId
from gasinfer.graph.partition import partition_of
from gasinfer.graph.tables import EdgeRecord, FeatureVector, Graph
from gasinfer.model.bundle import ModelBundle
from gasinfer.nn.linalg import DenseVector
from gasinfer.services.messages import BroadcastRef, Message

logger = get_logger(__name__)


class BroadcastResolutionError(Exception):
    """A broadcast reference has no payload in the receiving worker's registry."""

    pass


@dataclass(frozen=True)
class HubThreshold:
    """threshold = max(1, ceil(lambda * total_edges / total_workers))."""

    lam: float
    total_edges: int
    total_workers: int
    threshold: int

    def is_hub(self, degree: int) -> bool:
        return degree > self.threshold


def compute_hub_threshold(lam: float, total_edges: int, total_workers: int) -> HubThreshold:
    """
    Compute the degree above which a node counts as a hub.

    The product is evaluated on the decimal value of ``lam`` so that, for example,
    0.1 x 1e9 / 1000 is exactly 100,000.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if total_workers < 1:
        raise ValueError(f"total_workers must be >= 1, got {total_workers}")
    if total_edges < 0:
        raise ValueError(f"total_edges must be >= 0, got {total_edges}")
    edges = int(total_edges)
    exact = Fraction(str(lam)) * edges / total_workers
    return HubThreshold(lam, edges, total_workers, max(1, math.ceil(exact)))


def resolve_threshold(config: InferenceConfig, total_edges: int) -> HubThreshold:
    """The run's threshold, honoring ``threshold_override``."""
    computed = compute_hub_threshold(config.hub_lambda, total_edges, config.num_workers)
    if config.threshold_override is None:
        return computed
    return HubThreshold(
        computed.lam, computed.total_edges, computed.total_workers, config.threshold_override
    )


def effective_model(model: ModelBundle, config: InferenceConfig) -> ModelBundle:
    """Apply the run's strategy request to the layer signatures, keeping only eligible ones."""
    if config.strategies is None:
        return model
    return model.with_strategies(config.strategies)


def active_strategies(model: ModelBundle) -> frozenset[Strategy]:
    enabled: set[Strategy] = set()
    for layer in model.layers:
        enabled |= layer.signature.strategies
    return frozenset(enabled)


# ============================================================================
# Shadow nodes
# ============================================================================


@dataclass(frozen=True)
class ShadowPlan:
    """
    Hub splitting decided in preprocessing.

    ``groups`` maps each hub to its out-edge destinations per mirror; mirror ``g`` of hub
    ``v`` is ``v#g``. ``graph`` is the rewritten graph.
    """

    threshold: int
    groups: dict[NodeId, tuple[tuple[NodeId, ...], ...]]
    graph: Graph
    original_edges: int

    @property
    def num_hubs(self) -> int:
        return len(self.groups)

    def mirrors(self, node: NodeId) -> tuple[NodeId, ...]:
        """The ids that stand for ``node`` in the rewritten graph."""
        split = self.groups.get(node)
        if split is None:
            return (node,)
        return tuple(node.mirror(g) for g in range(len(split)))

    @property
    def max_out_degree(self) -> int:
        """Largest number of original out-edges owned by one rewritten node."""
        largest = 0
        for node, record in self.graph.nodes.items():
            split = self.groups.get(node.physical())
            if split is not None:
                size = len(split[node.group])
            else:
                size = len({edge.dst.physical() for edge in record.out_nbrs})
            largest = max(largest, size)
        return largest


def split_round_robin(
    destinations: Sequence[NodeId], n_groups: int
) -> tuple[tuple[NodeId, ...], ...]:
    """Deal a destination-sorted edge list into ``n_groups`` groups whose sizes differ by <= 1."""
    return tuple(tuple(destinations[g::n_groups]) for g in range(n_groups))


def plan_shadow_nodes(
    graph: Graph, threshold: int, stats: DegreeStats | None = None
) -> ShadowPlan:
    """
    Split every node with out-degree above ``threshold`` into ceil(d / threshold) mirrors.

    Each mirror keeps the node's features and receives a copy of every in-edge; the
    out-edges are dealt round-robin over the destination-sorted list. Mirrors, and every
    node whose edges into a hub were multiplied, record the original out-degree so
    degree-normalized layers are unaffected.

    ``stats`` supplies the out-degrees when they were already computed for the graph.

    Raises:
        ValueError: If ``threshold`` < 1 or a hub would need more than 256 mirrors.
    """
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")

    out_degree = (stats or compute_degree_stats(graph)).out_degree
    groups: dict[NodeId, tuple[tuple[NodeId, ...], ...]] = {}
    for node, record in graph.nodes.items():
        degree = out_degree[node]
        if degree <= threshold:
            continue
        n_groups = math.ceil(degree / threshold)
        if n_groups > MAX_GROUP + 1:
            raise ValueError(
                f"node {node} needs {n_groups} mirrors, at most {MAX_GROUP + 1} are addressable; "
                f"raise the threshold"
            )
        groups[node] = split_round_robin([edge.dst for edge in record.out_nbrs], n_groups)

    if not groups:
        logger.info("shadow_plan_built", threshold=threshold, hubs=0)
        return ShadowPlan(threshold, {}, graph, graph.num_edges)

    def expand(node: NodeId) -> tuple[NodeId, ...]:
        split = groups.get(node)
        if split is None:
            return (node,)
        return tuple(node.mirror(g) for g in range(len(split)))

    features: dict[NodeId, FeatureVector] = {}
    logical: dict[NodeId, int] = {}
    edges: list[EdgeRecord] = []
    for node, record in graph.nodes.items():
        edge_features = {edge.dst: edge.features for edge in record.out_nbrs}
        split = groups.get(node)
        owners: list[tuple[NodeId, tuple[NodeId, ...]]]
        if split is None:
            owners = [(node, tuple(edge_features))]
            if any(dst in groups for dst in edge_features):
                logical[node] = record.norm_out_degree
        else:
            owners = [(node.mirror(g), dsts) for g, dsts in enumerate(split)]
            for mirror, _ in owners:
                logical[mirror] = record.norm_out_degree
        for owner, dsts in owners:
            features[owner] = record.features
            for dst in dsts:
                for target in expand(dst):
                    edges.append(EdgeRecord(owner, target, edge_features[dst]))

    rewritten = Graph.from_records(
        features,
        edges,
        edge_feature_dim=graph.edge_feature_dim,
        logical_out_degrees=logical,
        allow_self_loops=True,
    )
    logger.info(
        "shadow_plan_built",
        threshold=threshold,
        hubs=len(groups),
        mirrors=sum(len(split) for split in groups.values()),
        edges_before=graph.num_edges,
        edges_after=rewritten.num_edges,
    )
    return ShadowPlan(threshold, groups, rewritten, graph.num_edges)


def is_output_copy(node: NodeId) -> bool:
    """Whether a (possibly mirrored) node reports the result of its physical node."""
    return node.group <= 0


# ============================================================================
# Broadcast
# ============================================================================


@dataclass(frozen=True, slots=True)
class RegistryEntry:
    """A payload published once to one destination worker."""

    worker: int
    src: NodeId
    payload: DenseVector


def broadcast_encode(
    src: NodeId,
    payload: DenseVector,
    destinations: Sequence[NodeId],
    num_workers: int,
) -> tuple[list[RegistryEntry], list[Message]]:
    """
    Replace one uniform payload per out-edge with one payload per destination worker.

    Returns:
        Registry entries (one per worker hosting at least one destination, ascending
        worker id) and one ``BroadcastRef`` message per out-edge.
    """
    workers = sorted({partition_of(dst, num_workers) for dst in destinations})
    entries = [RegistryEntry(worker, src, payload) for worker in workers]
    refs = [Message(dst=dst, src=src, payload=BroadcastRef(src)) for dst in destinations]
    return entries, refs


@dataclass
class BroadcastRegistry:
    """Payloads published for the next superstep or round, keyed by (worker, src)."""

    entries: dict[tuple[int, NodeId], DenseVector] = field(default_factory=dict)

    def publish(self, entry: RegistryEntry) -> None:
        self.entries[(entry.worker, entry.src)] = entry.payload

    def resolve(self, worker: int, ref: BroadcastRef) -> DenseVector:
        return broadcast_resolve(ref, self, worker)

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


def broadcast_resolve(ref: BroadcastRef, registry: BroadcastRegistry, worker: int) -> DenseVector:
    """
    Look up the payload a reference stands for on ``worker``.

    Raises:
        BroadcastResolutionError: If nothing was published for ``ref.src`` on ``worker``.
    """
    try:
        return registry.entries[(worker, ref.src)]
    except KeyError:
        logger.error("broadcast_unresolved", worker=worker, src=str(ref.src))
        raise BroadcastResolutionError(
            f"no broadcast payload from {ref.src} registered on worker {worker}"
        ) from None
