"""Brute-force k-hop oracle: every node recomputed from its own neighborhood."""

from collections import deque
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from gasinfer.core.config import get_settings
from gasinfer.core.logging import get_logger
from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import FeatureVector, Graph
from gasinfer.model.bundle import ModelBundle
from gasinfer.model.fused import InEdge, KHopNeighborhood, Prediction, fused_forward
from gasinfer.services.outputs import OutputRow

logger = get_logger(__name__)


def edge_feature_index(graph: Graph) -> dict[tuple[NodeId, NodeId], FeatureVector]:
    return {(edge.src, edge.dst): edge.features for edge in graph.edges()}


def build_khop_neighborhood(
    graph: Graph,
    target: NodeId,
    depth: int,
    edge_features: dict[tuple[NodeId, NodeId], FeatureVector] | None = None,
    in_neighbors: Mapping[NodeId, tuple[NodeId, ...]] | None = None,
) -> KHopNeighborhood:
    """
    Collect the induced k-hop in-neighborhood of ``target`` by reversed BFS.

    ``in_neighbors`` replaces the graph's in-adjacency, e.g. with a sampled subset.

    Raises:
        KeyError: If ``target`` is not in the graph.
    """
    if target not in graph.nodes:
        raise KeyError(f"node {target} is not in the graph")
    features = edge_features if edge_features is not None else edge_feature_index(graph)
    if in_neighbors is None:
        in_neighbors = graph.in_neighbors

    distance = {target: 0}
    frontier: deque[NodeId] = deque([target])
    in_edges: dict[NodeId, tuple[InEdge, ...]] = {}
    while frontier:
        node = frontier.popleft()
        d = distance[node]
        if d >= depth:
            continue
        srcs = in_neighbors[node]
        in_edges[node] = tuple((src, features[(src, node)]) for src in srcs)
        for src in srcs:
            if src not in distance:
                distance[src] = d + 1
                frontier.append(src)

    return KHopNeighborhood(
        target=target,
        depth=depth,
        distance=distance,
        records={node: graph.nodes[node] for node in distance},
        in_edges=in_edges,
    )


@dataclass(frozen=True)
class NeighborhoodCost:
    """Work done for one target: neighborhood size and message computations."""

    node_id: NodeId
    nodes: int
    edges: int
    edge_visits: int


@dataclass
class OracleResult:
    """Oracle output rows (ascending id) plus per-target costs."""

    rows: list[OutputRow]
    costs: list[NeighborhoodCost] = field(default_factory=list)

    @property
    def total_edge_visits(self) -> int:
        return sum(cost.edge_visits for cost in self.costs)

    @property
    def total_nodes_visited(self) -> int:
        return sum(cost.nodes for cost in self.costs)


def oracle_khop_forward(
    graph: Graph,
    model: ModelBundle,
    nodes: Iterable[NodeId] | None = None,
    parallel_workers: int | None = None,
    emit_embeddings: bool = False,
) -> OracleResult:
    """
    Predict every requested node (default: all) from its full k-hop neighborhood.

    No sampling is involved; this is the reference the distributed backends are checked
    against.
    """
    targets = sorted(nodes) if nodes is not None else graph.node_ids()
    threads = parallel_workers or get_settings().parallel_workers
    features = edge_feature_index(graph)
    # warm the cached in-neighbor lists before threads share them
    _ = graph.in_neighbors

    def forward(target: NodeId) -> tuple[Prediction, KHopNeighborhood]:
        neighborhood = build_khop_neighborhood(graph, target, model.depth, features)
        return fused_forward(model, neighborhood), neighborhood

    logger.info("oracle_started", targets=len(targets), depth=model.depth, threads=threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            outcomes = list(executor.map(forward, targets))
    else:
        outcomes = [forward(target) for target in targets]

    result = OracleResult(rows=[])
    for prediction, neighborhood in outcomes:
        result.rows.append(
            OutputRow(
                prediction.node_id,
                prediction.predicted_class,
                prediction.logits,
                prediction.embedding if emit_embeddings else None,
            )
        )
        result.costs.append(
            NeighborhoodCost(
                prediction.node_id,
                neighborhood.num_nodes,
                neighborhood.num_edges,
                prediction.edge_visits,
            )
        )
    logger.info(
        "oracle_completed",
        targets=len(result.rows),
        nodes_visited=result.total_nodes_visited,
        edge_visits=result.total_edge_visits,
    )
    return result
