"""Node/edge tables: the graph data model and TSV ingestion."""

from collections.abc import Iterator
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel

from gasinfer.core.logging import get_logger
from gasinfer.graph.ids import NodeId

logger = get_logger(__name__)

FeatureVector = npt.NDArray[np.float32]

EMPTY_FEATURES: FeatureVector = np.zeros(0, dtype=np.float32)


class GraphTableError(Exception):
    """Error while reading, validating or writing graph tables."""

    def __init__(self, message: str, path: Path | None = None, line: int | None = None) -> None:
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(location + message)
        self.path = path
        self.line = line


class IngestOptions(BaseModel):
    """Options applied while materializing adjacency from the tables."""

    add_reverse_edges: bool = False
    add_self_loops: bool = False


@dataclass(frozen=True, slots=True)
class OutEdge:
    """An out-edge as stored with its source node."""

    dst: NodeId
    features: FeatureVector


@dataclass(frozen=True, slots=True)
class EdgeRecord:
    """A row of the edge table."""

    src: NodeId
    dst: NodeId
    features: FeatureVector = field(default_factory=lambda: EMPTY_FEATURES)


@dataclass(frozen=True, slots=True)
class NodeRecord:
    """A node with its raw features and destination-sorted out-adjacency.

    ``logical_out_degree`` is set by shadow planning on mirrors and on nodes with edges
    into a split hub: it keeps the original out-degree so degree-normalized layers see
    the unsplit graph.
    """

    id: NodeId
    features: FeatureVector
    out_nbrs: tuple[OutEdge, ...] = ()
    logical_out_degree: int | None = None

    @property
    def out_degree(self) -> int:
        return len(self.out_nbrs)

    @property
    def norm_out_degree(self) -> int:
        """Out-degree used for normalization."""
        if self.logical_out_degree is not None:
            return self.logical_out_degree
        return len(self.out_nbrs)


@dataclass(frozen=True)
class Graph:
    """An immutable directed attributed graph keyed by node id.

    ``nodes`` iterates in ascending id order.
    """

    feature_dim: int
    edge_feature_dim: int
    nodes: dict[NodeId, NodeRecord]

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def num_edges(self) -> int:
        return sum(record.out_degree for record in self.nodes.values())

    def node_ids(self) -> list[NodeId]:
        return list(self.nodes)

    def edges(self) -> Iterator[EdgeRecord]:
        """Iterate edges in (src, dst) order."""
        for record in self.nodes.values():
            for edge in record.out_nbrs:
                yield EdgeRecord(src=record.id, dst=edge.dst, features=edge.features)

    @cached_property
    def in_neighbors(self) -> dict[NodeId, tuple[NodeId, ...]]:
        """Source-sorted in-neighbor lists for every node."""
        incoming: dict[NodeId, list[NodeId]] = {node_id: [] for node_id in self.nodes}
        for record in self.nodes.values():
            for edge in record.out_nbrs:
                incoming[edge.dst].append(record.id)
        # sources are visited in ascending order, so each list is already sorted
        return {node_id: tuple(srcs) for node_id, srcs in incoming.items()}

    def in_degree(self, node_id: NodeId) -> int:
        return len(self.in_neighbors[node_id])

    @classmethod
    def from_records(
        cls,
        features: dict[NodeId, FeatureVector],
        edges: list[EdgeRecord],
        edge_feature_dim: int = 0,
        logical_out_degrees: dict[NodeId, int] | None = None,
        allow_self_loops: bool = False,
    ) -> "Graph":
        """Build a graph from node features and an edge list.

        Raises:
            GraphTableError: On inconsistent dimensions, unknown endpoints,
                self-loops (unless allowed) or duplicate edges.
        """
        if not features:
            return cls(feature_dim=0, edge_feature_dim=edge_feature_dim, nodes={})

        dims = {vector.shape[0] for vector in features.values()}
        if len(dims) != 1:
            raise GraphTableError(f"inconsistent node feature dimensions: {sorted(dims)}")
        feature_dim = dims.pop()

        adjacency: dict[NodeId, dict[NodeId, FeatureVector]] = {nid: {} for nid in features}
        for edge in edges:
            if edge.src not in adjacency:
                raise GraphTableError(f"edge source {edge.src} is not in the node table")
            if edge.dst not in adjacency:
                raise GraphTableError(f"edge destination {edge.dst} is not in the node table")
            if edge.src == edge.dst and not allow_self_loops:
                raise GraphTableError(f"self-loop {edge.src}->{edge.dst} is not enabled")
            if edge.features.shape[0] != edge_feature_dim:
                raise GraphTableError(
                    f"edge {edge.src}->{edge.dst} has {edge.features.shape[0]} features, "
                    f"expected {edge_feature_dim}"
                )
            if edge.dst in adjacency[edge.src]:
                raise GraphTableError(f"duplicate edge {edge.src}->{edge.dst}")
            adjacency[edge.src][edge.dst] = edge.features

        logical = logical_out_degrees or {}
        nodes: dict[NodeId, NodeRecord] = {}
        for node_id in sorted(features):
            out = adjacency[node_id]
            nodes[node_id] = NodeRecord(
                id=node_id,
                features=features[node_id],
                out_nbrs=tuple(OutEdge(dst=dst, features=out[dst]) for dst in sorted(out)),
                logical_out_degree=logical.get(node_id),
            )
        return cls(feature_dim=feature_dim, edge_feature_dim=edge_feature_dim, nodes=nodes)


def format_vector(vector: FeatureVector) -> str:
    """Render float32 values so that parsing them back is exact."""
    return ",".join(f"{float(x):.9g}" for x in vector)


def parse_vector(text: str) -> FeatureVector:
    """Parse a comma-separated float list (empty text gives an empty vector)."""
    text = text.strip()
    if not text:
        return EMPTY_FEATURES
    return np.array([float(x) for x in text.split(",")], dtype=np.float32)


def _parse_id(text: str, path: Path, line: int) -> NodeId:
    try:
        node_id = NodeId.parse(text)
    except ValueError as e:
        raise GraphTableError(f"malformed node id {text!r}", path, line) from e
    if node_id.is_mirror:
        # mirrors only come from shadow planning
        raise GraphTableError(f"mirror id {text!r} is not allowed in input tables", path, line)
    return node_id


def _parse_features(text: str, path: Path, line: int) -> FeatureVector:
    try:
        vector = parse_vector(text)
    except ValueError as e:
        raise GraphTableError(f"malformed feature list {text!r}", path, line) from e
    if not np.all(np.isfinite(vector)):
        raise GraphTableError("non-finite feature value", path, line)
    return vector


def _read_lines(path: Path) -> Iterator[tuple[int, list[str]]]:
    try:
        with path.open("r", encoding="utf-8") as handle:
            for number, raw_line in enumerate(handle, start=1):
                line = raw_line.rstrip("\r\n")
                if not line.strip():
                    continue
                yield number, line.split("\t")
    except OSError as e:
        raise GraphTableError(f"cannot read table: {e}", path) from e


def read_node_table(
    path: Path,
) -> tuple[dict[NodeId, FeatureVector], list[tuple[NodeId, NodeId, int]]]:
    """Read ``<id>\\t<f1,...,fD>\\t<nbr1,...>`` rows.

    Returns:
        Node features and (src, dst, line) neighbor references.
    """
    features: dict[NodeId, FeatureVector] = {}
    neighbor_refs: list[tuple[NodeId, NodeId, int]] = []
    feature_dim: int | None = None

    for number, columns in _read_lines(path):
        if len(columns) not in (2, 3):
            raise GraphTableError(f"expected 2 or 3 columns, got {len(columns)}", path, number)
        node_id = _parse_id(columns[0], path, number)
        vector = _parse_features(columns[1], path, number)
        if vector.shape[0] == 0:
            raise GraphTableError("node has no features", path, number)
        if feature_dim is None:
            feature_dim = vector.shape[0]
        elif vector.shape[0] != feature_dim:
            raise GraphTableError(
                f"feature dimension {vector.shape[0]} != {feature_dim}", path, number
            )
        if node_id in features:
            raise GraphTableError(f"duplicate node {node_id}", path, number)
        features[node_id] = vector

        seen: set[NodeId] = set()
        nbr_text = columns[2].strip() if len(columns) == 3 else ""
        for item in nbr_text.split(",") if nbr_text else []:
            dst = _parse_id(item, path, number)
            if dst in seen:
                raise GraphTableError(f"duplicate edge {node_id}->{dst}", path, number)
            seen.add(dst)
            neighbor_refs.append((node_id, dst, number))

    return features, neighbor_refs


def read_edge_table(path: Path) -> list[tuple[EdgeRecord, int]]:
    """Read ``<src>\\t<dst>\\t<e1,...,eF>`` rows."""
    rows: list[tuple[EdgeRecord, int]] = []
    seen: set[tuple[NodeId, NodeId]] = set()
    edge_dim: int | None = None

    for number, columns in _read_lines(path):
        if len(columns) not in (2, 3):
            raise GraphTableError(f"expected 2 or 3 columns, got {len(columns)}", path, number)
        src = _parse_id(columns[0], path, number)
        dst = _parse_id(columns[1], path, number)
        vector = _parse_features(columns[2], path, number) if len(columns) == 3 else EMPTY_FEATURES
        if edge_dim is None:
            edge_dim = vector.shape[0]
        elif vector.shape[0] != edge_dim:
            raise GraphTableError(
                f"edge feature dimension {vector.shape[0]} != {edge_dim}", path, number
            )
        if (src, dst) in seen:
            raise GraphTableError(f"duplicate edge {src}->{dst}", path, number)
        seen.add((src, dst))
        rows.append((EdgeRecord(src=src, dst=dst, features=vector), number))

    return rows


def ingest_tables(
    node_table_path: Path,
    edge_table_path: Path | None,
    options: IngestOptions | None = None,
) -> Graph:
    """
    Read a node table and an edge table into a graph with materialized out-adjacency.

    Edges named in the node table's neighbor column and rows of the edge table are
    unioned; an edge only present in the node table gets zero edge features.

    Args:
        node_table_path: Node table TSV.
        edge_table_path: Edge table TSV (optional).
        options: Reverse-edge and self-loop switches.

    Returns:
        The ingested graph.

    Raises:
        GraphTableError: On malformed lines (with line number), dimension mismatches,
            duplicate (src, dst) pairs or unknown endpoints.
    """
    options = options or IngestOptions()
    logger.info(
        "ingesting_tables",
        node_table=str(node_table_path),
        edge_table=str(edge_table_path) if edge_table_path else None,
        add_reverse_edges=options.add_reverse_edges,
        add_self_loops=options.add_self_loops,
    )

    features, neighbor_refs = read_node_table(node_table_path)
    edge_rows = read_edge_table(edge_table_path) if edge_table_path else []

    edge_dim = edge_rows[0][0].features.shape[0] if edge_rows else 0
    edge_features: dict[tuple[NodeId, NodeId], FeatureVector] = {}

    for edge, number in edge_rows:
        for endpoint in (edge.src, edge.dst):
            if endpoint not in features:
                raise GraphTableError(
                    f"edge endpoint {endpoint} is not in the node table", edge_table_path, number
                )
        if edge.src == edge.dst and not options.add_self_loops:
            raise GraphTableError(f"self-loop {edge.src}->{edge.dst}", edge_table_path, number)
        edge_features[(edge.src, edge.dst)] = edge.features

    zero_edge = np.zeros(edge_dim, dtype=np.float32)
    for src, dst, number in neighbor_refs:
        if dst not in features:
            raise GraphTableError(
                f"neighbor {dst} is not in the node table", node_table_path, number
            )
        if src == dst and not options.add_self_loops:
            raise GraphTableError(f"self-loop {src}->{dst}", node_table_path, number)
        edge_features.setdefault((src, dst), zero_edge)

    if options.add_reverse_edges:
        for (src, dst), vector in list(edge_features.items()):
            edge_features.setdefault((dst, src), vector)

    if options.add_self_loops:
        for node_id in features:
            edge_features.setdefault((node_id, node_id), zero_edge)

    edges = [
        EdgeRecord(src=src, dst=dst, features=vector)
        for (src, dst), vector in edge_features.items()
    ]
    graph = Graph.from_records(
        features,
        edges,
        edge_feature_dim=edge_dim,
        allow_self_loops=options.add_self_loops,
    )

    logger.info(
        "tables_ingested",
        num_nodes=graph.num_nodes,
        num_edges=graph.num_edges,
        feature_dim=graph.feature_dim,
        edge_feature_dim=graph.edge_feature_dim,
    )
    return graph


def write_tables(graph: Graph, node_table_path: Path, edge_table_path: Path) -> None:
    """Write a graph as node and edge TSV tables (ascending id order)."""
    try:
        node_table_path.parent.mkdir(parents=True, exist_ok=True)
        edge_table_path.parent.mkdir(parents=True, exist_ok=True)
        with node_table_path.open("w", encoding="utf-8", newline="\n") as node_out:
            for record in graph.nodes.values():
                nbrs = ",".join(str(edge.dst) for edge in record.out_nbrs)
                node_out.write(f"{record.id}\t{format_vector(record.features)}\t{nbrs}\n")
        with edge_table_path.open("w", encoding="utf-8", newline="\n") as edge_out:
            for edge in graph.edges():
                edge_out.write(f"{edge.src}\t{edge.dst}\t{format_vector(edge.features)}\n")
    except OSError as e:
        raise GraphTableError(f"cannot write tables: {e}") from e
