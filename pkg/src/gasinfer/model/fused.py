"""Local layer-by-layer forward over one node's k-hop neighborhood."""

from dataclasses import dataclass, field

from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import FeatureVector, NodeRecord, OutEdge
from gasinfer.model.aggregate import aggregate_finalize
from gasinfer.model.bundle import ModelBundle, predict
from gasinfer.model.layers import NodeState, init_embedding
from gasinfer.nn.linalg import DenseVector


class NeighborhoodError(Exception):
    """A neighborhood is too shallow or inconsistent for the model."""

    pass


InEdge = tuple[NodeId, FeatureVector]


@dataclass(frozen=True)
class KHopNeighborhood:
    """
    The induced subgraph of all nodes within ``depth`` in-edge hops of ``target``.

    ``in_edges`` lists, for every node closer than ``depth``, all of its in-edges as
    (src, edge features) in ascending src order; every such src is part of the
    neighborhood.
    """

    target: NodeId
    depth: int
    distance: dict[NodeId, int]
    records: dict[NodeId, NodeRecord]
    in_edges: dict[NodeId, tuple[InEdge, ...]] = field(default_factory=dict)

    def hop(self, k: int) -> frozenset[NodeId]:
        """Nodes at distance <= k."""
        return frozenset(node for node, d in self.distance.items() if d <= k)

    @property
    def num_nodes(self) -> int:
        return len(self.distance)

    @property
    def num_edges(self) -> int:
        return sum(len(edges) for edges in self.in_edges.values())


@dataclass(frozen=True)
class Prediction:
    """Final embedding and head output for one node."""

    node_id: NodeId
    embedding: DenseVector
    logits: DenseVector
    predicted_class: int
    edge_visits: int = 0


def fused_forward(model: ModelBundle, neighborhood: KHopNeighborhood) -> Prediction:
    """
    Run the model on a k-hop neighborhood without any message passing.

    Layer k updates every node at distance <= K - k from messages of its in-neighbors,
    visited in ascending src order, which is the canonical order the distributed
    backends fold in.

    Raises:
        NeighborhoodError: If the neighborhood is shallower than the model.
    """
    depth = model.depth
    if neighborhood.depth < depth:
        raise NeighborhoodError(
            f"neighborhood of {neighborhood.target} has depth {neighborhood.depth}, "
            f"model needs {depth}"
        )

    states: dict[NodeId, NodeState] = {
        node: init_embedding(model.layers[0], record)
        for node, record in neighborhood.records.items()
        if neighborhood.distance[node] <= depth
    }
    visits = 0
    for k, layer in enumerate(model.layers, start=1):
        horizon = depth - k
        updated: dict[NodeId, NodeState] = {}
        for node in sorted(states):
            if neighborhood.distance[node] > horizon:
                continue
            edges = neighborhood.in_edges.get(node, ())
            messages = []
            for src, features in edges:
                if src not in states:
                    raise NeighborhoodError(f"in-neighbor {src} of {node} is missing")
                messages.append((src, layer.apply_edge(states[src], OutEdge(node, features))))
            visits += len(messages)
            gathered = aggregate_finalize(layer.gather(messages))
            if layer.signature.in_edge_features:
                gathered.edge_features.update(edges)
            updated[node] = layer.apply_node(states[node], gathered)
        states = updated

    final = states[neighborhood.target]
    logits, predicted_class = predict(model.head, final)
    return Prediction(neighborhood.target, final.embedding, logits, predicted_class, visits)
