"""Degree statistics."""

from dataclasses import dataclass

import numpy as np

from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import Graph


@dataclass(frozen=True)
class DegreeStats:
    """Exact per-node degrees plus summary statistics.

    Histogram bucket 0 counts degree 0; bucket b >= 1 counts degrees in [2^(b-1), 2^b).
    """

    in_degree: dict[NodeId, int]
    out_degree: dict[NodeId, int]
    num_edges: int
    in_histogram: list[int]
    out_histogram: list[int]
    max_in: int
    max_out: int
    mean_degree: float
    in_percentiles: dict[int, float]
    out_percentiles: dict[int, float]


PERCENTILES = (50, 90, 99)


def log_bucket(degree: int) -> int:
    return 0 if degree <= 0 else degree.bit_length()


def _histogram(degrees: list[int]) -> list[int]:
    if not degrees:
        return [0]
    buckets = [0] * (log_bucket(max(degrees)) + 1)
    for degree in degrees:
        buckets[log_bucket(degree)] += 1
    return buckets


def _percentiles(degrees: list[int]) -> dict[int, float]:
    if not degrees:
        return {p: 0.0 for p in PERCENTILES}
    values = np.percentile(np.array(degrees, dtype=np.float64), PERCENTILES)
    return {p: float(v) for p, v in zip(PERCENTILES, values, strict=True)}


def compute_degree_stats(graph: Graph) -> DegreeStats:
    """Count in/out degrees of every node and summarize them."""
    out_degree = {node_id: record.out_degree for node_id, record in graph.nodes.items()}
    in_degree = {node_id: 0 for node_id in graph.nodes}
    for record in graph.nodes.values():
        for edge in record.out_nbrs:
            in_degree[edge.dst] += 1

    ins = list(in_degree.values())
    outs = list(out_degree.values())
    num_edges = sum(outs)
    return DegreeStats(
        in_degree=in_degree,
        out_degree=out_degree,
        num_edges=num_edges,
        in_histogram=_histogram(ins),
        out_histogram=_histogram(outs),
        max_in=max(ins, default=0),
        max_out=max(outs, default=0),
        mean_degree=num_edges / len(outs) if outs else 0.0,
        in_percentiles=_percentiles(ins),
        out_percentiles=_percentiles(outs),
    )
