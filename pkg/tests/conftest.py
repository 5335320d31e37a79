"""Pytest configuration and fixtures."""

from collections.abc import Callable, Generator, MutableMapping
from typing import Any

import numpy as np
import pytest
from structlog.testing import capture_logs

from gasinfer.core.config import get_settings
from gasinfer.core.models import Algorithm, SkewMode
from gasinfer.graph.generator import PowerLawParams, generate_power_law
from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import EdgeRecord, Graph
from gasinfer.model.bundle import ModelBundle, seeded_random_model
from gasinfer.services.outputs import OutputRow

GraphFactory = Callable[..., Graph]


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch: pytest.MonkeyPatch) -> Generator[None, None, None]:
    """Keep environment overrides from leaking between tests."""
    for name in ("GASINFER_PARALLEL_WORKERS", "GASINFER_MEMORY_BUDGET_BYTES", "GASINFER_DEBUG"):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(autouse=True)
def captured_logs() -> Generator[list[MutableMapping[str, Any]], None, None]:
    """Collect structlog events instead of printing them."""
    with capture_logs() as logs:
        yield logs


def build_graph(
    features: dict[int, list[float]],
    edges: list[tuple[int, int]],
    edge_features: dict[tuple[int, int], list[float]] | None = None,
) -> Graph:
    """Build a graph from plain ids, feature lists and (src, dst) pairs."""
    edge_features = edge_features or {}
    edge_dim = len(next(iter(edge_features.values()))) if edge_features else 0
    return Graph.from_records(
        {NodeId(n): np.array(f, dtype=np.float32) for n, f in features.items()},
        [
            EdgeRecord(
                NodeId(src),
                NodeId(dst),
                np.array(edge_features.get((src, dst), [0.0] * edge_dim), dtype=np.float32),
            )
            for src, dst in edges
        ],
        edge_feature_dim=edge_dim,
    )


@pytest.fixture
def make_graph() -> GraphFactory:
    """Factory for small hand-written graphs."""
    return build_graph


@pytest.fixture
def tiny_graph() -> Graph:
    """Three nodes, two edges into node 2."""
    return build_graph({0: [1.0, 0.0], 1: [0.0, 1.0], 2: [1.0, 1.0]}, [(0, 2), (1, 2)])


@pytest.fixture
def star_graph() -> Graph:
    """Center 0 with five leaves pointing at it, and the center pointing back at every leaf."""
    features = {0: [0.5, -0.5]} | {leaf: [float(leaf), 1.0 - leaf] for leaf in range(1, 6)}
    edges = [(leaf, 0) for leaf in range(1, 6)] + [(0, leaf) for leaf in range(1, 6)]
    return build_graph(features, edges)


@pytest.fixture(scope="session")
def random_graph() -> Graph:
    """A seeded 80-node power-law graph with a few in-degree hubs."""
    params = PowerLawParams(
        num_nodes=80, target_edges=400, exponent=2.1, skew_mode=SkewMode.IN, feature_dim=4, seed=3
    )
    return generate_power_law(params).graph


@pytest.fixture(scope="session")
def out_skewed_graph() -> Graph:
    """A seeded 60-node graph whose out-degrees follow the power law."""
    params = PowerLawParams(
        num_nodes=60, target_edges=300, exponent=2.1, skew_mode=SkewMode.OUT, feature_dim=4, seed=5
    )
    return generate_power_law(params).graph


@pytest.fixture(scope="session")
def models() -> dict[Algorithm, ModelBundle]:
    """One seeded 2-layer model per built-in family (4 features, 2 classes)."""
    return {
        algorithm: seeded_random_model(
            algorithm, feature_dim=4, hidden_dim=6, num_layers=2, num_classes=2, seed=7
        )
        for algorithm in Algorithm
    }


def assert_same_predictions(a: list[OutputRow], b: list[OutputRow], atol: float = 0.0) -> None:
    """Check that two row lists cover the same nodes with logits within ``atol``."""
    assert [row.node_id for row in a] == [row.node_id for row in b]
    for left, right in zip(a, b, strict=True):
        if atol == 0.0:
            assert left.logits.tobytes() == right.logits.tobytes(), left.node_id
        else:
            np.testing.assert_allclose(left.logits, right.logits, atol=atol, rtol=0)
