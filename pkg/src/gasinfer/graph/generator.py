"""Synthetic power-law graph generation."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, model_validator

from gasinfer.core.logging import get_logger
from gasinfer.core.models import SkewMode
from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import EdgeRecord, Graph, GraphTableError, write_tables

logger = get_logger(__name__)

# rejection rounds before weighted endpoint sampling falls back to uniform picks
MAX_WEIGHTED_ROUNDS = 8


class GeneratorError(Exception):
    """Error while generating a synthetic graph."""

    pass


class PowerLawParams(BaseModel):
    """Parameters of a synthetic power-law graph."""

    num_nodes: int = Field(ge=2)
    target_edges: int = Field(ge=0)
    exponent: float = 2.1
    skew_mode: SkewMode = SkewMode.IN
    feature_dim: int = Field(default=16, ge=1)
    edge_feature_dim: int = Field(default=0, ge=0)
    num_classes: int = Field(default=2, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_feasible(self) -> "PowerLawParams":
        if self.exponent <= 1.0:
            raise ValueError(f"exponent must be > 1, got {self.exponent}")
        if self.target_edges > self.num_nodes * (self.num_nodes - 1):
            raise ValueError(
                f"{self.target_edges} edges cannot fit in {self.num_nodes} nodes "
                "without self-loops or duplicates"
            )
        return self


# The dataset configuration used for the large-scale synthetic experiments.
POWER_LAW_DATASET = PowerLawParams.model_construct(
    num_nodes=10**10,
    target_edges=10**11,
    exponent=2.1,
    skew_mode=SkewMode.IN,
    feature_dim=200,
    edge_feature_dim=0,
    num_classes=2,
    seed=0,
)


@dataclass(frozen=True)
class GeneratedGraph:
    """A generated graph and its pseudorandom node labels."""

    graph: Graph
    labels: dict[NodeId, int]


def power_law_degrees(
    rng: np.random.Generator, num_nodes: int, total: int, exponent: float
) -> npt.NDArray[np.int64]:
    """
    Draw a degree sequence summing to ``total`` with P(d) proportional to d^-exponent.

    Raw degrees come from inverse-CDF sampling of the discrete law on [1, N-1]; they are
    then rescaled to the requested total with largest-remainder rounding, never exceeding
    N-1 per node.
    """
    cap = num_nodes - 1
    if total == 0:
        return np.zeros(num_nodes, dtype=np.int64)

    support = np.arange(1, cap + 1, dtype=np.float64)
    cdf = np.cumsum(support ** (-exponent))
    cdf /= cdf[-1]
    raw = np.searchsorted(cdf, rng.random(num_nodes), side="right") + 1
    raw = np.minimum(raw, cap).astype(np.float64)

    scaled = raw * (total / raw.sum())
    degrees = np.minimum(np.floor(scaled).astype(np.int64), cap)
    fraction = scaled - np.floor(scaled)

    remaining = total - int(degrees.sum())
    while remaining > 0:
        open_slots = np.flatnonzero(degrees < cap)
        if open_slots.size == 0:
            raise GeneratorError(f"cannot place {total} edge endpoints on {num_nodes} nodes")
        # largest fractional part first; ties broken by node index
        order = open_slots[np.lexsort((open_slots, -fraction[open_slots]))]
        take = order[:remaining]
        degrees[take] += 1
        fraction[take] = 0.0
        remaining -= len(take)
    return degrees


def _sample_distinct(
    rng: np.random.Generator,
    num_nodes: int,
    count: int,
    excluded: set[int],
    cdf: npt.NDArray[np.float64] | None = None,
) -> list[int]:
    """Pick ``count`` distinct node indices outside ``excluded``, sorted.

    With ``cdf`` the picks are weighted (inverse-CDF draws with rejection of repeats).
    """
    if count == 0:
        return []
    chosen: dict[int, None] = {}

    if cdf is not None:
        for _ in range(MAX_WEIGHTED_ROUNDS):
            size = 2 * (count - len(chosen))
            picks = np.searchsorted(cdf, rng.random(size), side="right")
            draws = np.minimum(picks, num_nodes - 1)
            for value in draws.tolist():
                if value not in excluded and value not in chosen:
                    chosen[value] = None
                    if len(chosen) == count:
                        return sorted(chosen)
        excluded = excluded | set(chosen)

    available = num_nodes - len(excluded)
    if 2 * (count - len(chosen)) > available:
        for value in rng.permutation(num_nodes).tolist():
            if value not in excluded and value not in chosen:
                chosen[value] = None
                if len(chosen) == count:
                    break
        return sorted(chosen)

    while len(chosen) < count:
        draws = rng.integers(0, num_nodes, size=2 * (count - len(chosen)))
        for value in draws.tolist():
            if value not in excluded and value not in chosen:
                chosen[value] = None
                if len(chosen) == count:
                    break
    return sorted(chosen)


def generate_power_law(params: PowerLawParams) -> GeneratedGraph:
    """
    Generate a directed graph whose skewed degree side follows a power law.

    The skewed side's degree sequence comes from ``power_law_degrees``; endpoints on the
    other side are uniform. With ``SkewMode.BOTH`` out-degrees follow the law and
    destinations are drawn proportionally to an independent power-law weight. Output is a
    pure function of ``params``.
    """
    n, m = params.num_nodes, params.target_edges
    rng = np.random.default_rng(params.seed)
    logger.info(
        "generating_power_law_graph",
        num_nodes=n,
        target_edges=m,
        exponent=params.exponent,
        skew_mode=params.skew_mode.value,
        seed=params.seed,
    )

    pairs: list[tuple[int, int]] = []
    degrees = power_law_degrees(rng, n, m, params.exponent)

    if params.skew_mode is SkewMode.IN:
        for dst in range(n):
            for src in _sample_distinct(rng, n, int(degrees[dst]), {dst}):
                pairs.append((src, dst))
    elif params.skew_mode is SkewMode.OUT:
        for src in range(n):
            for dst in _sample_distinct(rng, n, int(degrees[src]), {src}):
                pairs.append((src, dst))
    else:
        weight_total = min(n * 4, n * (n - 1))
        in_weights = power_law_degrees(rng, n, weight_total, params.exponent) + 1.0
        cdf = np.cumsum(in_weights)
        cdf /= cdf[-1]
        for src in range(n):
            for dst in _sample_distinct(rng, n, int(degrees[src]), {src}, cdf=cdf):
                pairs.append((src, dst))

    pairs.sort()
    features = rng.uniform(-1.0, 1.0, size=(n, params.feature_dim)).astype(np.float32)
    labels = rng.integers(0, params.num_classes, size=n)
    edge_features = rng.uniform(-1.0, 1.0, size=(len(pairs), params.edge_feature_dim)).astype(
        np.float32
    )

    edges = [
        EdgeRecord(src=NodeId(src), dst=NodeId(dst), features=edge_features[i])
        for i, (src, dst) in enumerate(pairs)
    ]
    try:
        graph = Graph.from_records(
            {NodeId(i): features[i] for i in range(n)},
            edges,
            edge_feature_dim=params.edge_feature_dim,
        )
    except GraphTableError as e:
        raise GeneratorError(f"generated an invalid graph: {e}") from e

    logger.info("power_law_graph_generated", num_nodes=n, num_edges=graph.num_edges)
    return GeneratedGraph(
        graph=graph,
        labels={NodeId(i): int(labels[i]) for i in range(n)},
    )


def write_generated(generated: GeneratedGraph, out_dir: Path) -> tuple[Path, Path, Path]:
    """Write ``nodes.tsv``, ``edges.tsv`` and ``labels.tsv`` into ``out_dir``."""
    node_path = out_dir / "nodes.tsv"
    edge_path = out_dir / "edges.tsv"
    label_path = out_dir / "labels.tsv"
    write_tables(generated.graph, node_path, edge_path)
    try:
        with label_path.open("w", encoding="utf-8", newline="\n") as handle:
            for node_id, label in generated.labels.items():
                handle.write(f"{node_id}\t{label}\n")
    except OSError as e:
        raise GeneratorError(f"cannot write labels: {e}") from e
    return node_path, edge_path, label_path
