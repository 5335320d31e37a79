"""Hash partitioning of nodes onto workers."""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import Graph, NodeRecord
from gasinfer.nn.rng import mix64

if TYPE_CHECKING:
    from gasinfer.model.layers import NodeState


def partition_of(node_id: NodeId, num_workers: int) -> int:
    """
    Map a node id to the worker that owns it.

    Physical nodes use ``raw mod W``. Mirrors mix (raw, group) through a 64-bit hash so
    the mirrors of one hub spread over workers instead of all landing with the original.
    """
    if num_workers < 1:
        raise ValueError(f"num_workers must be >= 1, got {num_workers}")
    if node_id.group < 0:
        return node_id.raw % num_workers
    return mix64(node_id.raw ^ mix64(node_id.group + 1)) % num_workers


@dataclass
class GraphPartition:
    """A worker's share: its nodes, their out-edges, per-node state and in-edge features.

    ``in_edge_features`` maps each owned node to its in-edge features keyed by source,
    in ascending source order.
    """

    worker_id: int
    nodes: dict[NodeId, NodeRecord] = field(default_factory=dict)
    node_state: dict[NodeId, "NodeState"] = field(default_factory=dict)
    in_edge_features: dict[NodeId, dict[NodeId, npt.NDArray[np.float32]]] = field(
        default_factory=dict
    )

    @property
    def num_edges(self) -> int:
        return sum(record.out_degree for record in self.nodes.values())


def partition_graph(graph: Graph, num_workers: int) -> list[GraphPartition]:
    """Split a graph into ``num_workers`` partitions (nodes keep ascending id order)."""
    partitions = [GraphPartition(worker_id=w) for w in range(num_workers)]
    for node_id, record in graph.nodes.items():
        partitions[partition_of(node_id, num_workers)].nodes[node_id] = record
        for edge in record.out_nbrs:
            owner = partitions[partition_of(edge.dst, num_workers)]
            owner.in_edge_features.setdefault(edge.dst, {})[node_id] = edge.features
    return partitions
