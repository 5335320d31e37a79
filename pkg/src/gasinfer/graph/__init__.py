"""Graph data model, table ingestion, partitioning and synthetic generation."""

from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import EdgeRecord, Graph, IngestOptions, NodeRecord, OutEdge

__all__ = ["EdgeRecord", "Graph", "IngestOptions", "NodeId", "NodeRecord", "OutEdge"]
