"""Tests for hub thresholds, shadow nodes and broadcast."""

from itertools import combinations

import numpy as np
import pytest

from gasinfer.core.models import Algorithm, Backend, InferenceConfig, Strategy
from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import Graph
from gasinfer.model.bundle import ModelBundle, seeded_random_model
from gasinfer.services.mapreduce import run_mr_inference
from gasinfer.services.messages import BroadcastRef
from gasinfer.services.oracle import oracle_khop_forward
from gasinfer.services.pregel import PregelEngine, run_pregel_inference
from gasinfer.services.strategies import (
    BroadcastRegistry,
    BroadcastResolutionError,
    broadcast_encode,
    broadcast_resolve,
    compute_hub_threshold,
    is_output_copy,
    plan_shadow_nodes,
    resolve_threshold,
    split_round_robin,
)

from tests.conftest import GraphFactory, assert_same_predictions

STRATEGY_SUBSETS = [
    frozenset(subset) for size in range(4) for subset in combinations(list(Strategy), size)
]


def fan_out_graph(make_graph: GraphFactory, degree: int) -> Graph:
    """Node 0 points at nodes 1..degree; node 1 points back at 0."""
    features = {n: [float(n % 5), 1.0] for n in range(degree + 1)}
    edges = [(0, dst) for dst in range(1, degree + 1)] + [(1, 0)]
    return make_graph(features, edges)


def hub_source_graph(make_graph: GraphFactory) -> Graph:
    """Hub 0 points at nodes 1..6; non-hub node 9 points at the hub and at node 1."""
    features = {n: [float(n % 3), 1.0 - n / 10] for n in (*range(7), 9)}
    edges = [(0, dst) for dst in range(1, 7)] + [(9, 0), (9, 1)]
    return make_graph(features, edges)


class TestHubThreshold:
    """Tests for the threshold heuristic."""

    def test_decimal_lambda(self) -> None:
        """Test 0.1 x 1e9 edges / 1000 workers = 100,000 exactly."""
        assert compute_hub_threshold(0.1, 10**9, 1000).threshold == 100_000

    def test_no_edges(self) -> None:
        """Test the lower bound of 1."""
        assert compute_hub_threshold(0.1, 0, 4).threshold == 1

    def test_rounds_up(self) -> None:
        """Test that fractional thresholds round up."""
        assert compute_hub_threshold(0.1, 5, 100).threshold == 1
        assert compute_hub_threshold(0.5, 7, 2).threshold == 2

    def test_is_hub_is_strict(self) -> None:
        """Test that a degree equal to the threshold is not a hub."""
        threshold = compute_hub_threshold(0.1, 1000, 1)

        assert not threshold.is_hub(100)
        assert threshold.is_hub(101)

    @pytest.mark.parametrize(("lam", "edges", "workers"), [(0.0, 1, 1), (0.1, 1, 0), (0.1, -1, 1)])
    def test_invalid(self, lam: float, edges: int, workers: int) -> None:
        """Test the preconditions."""
        with pytest.raises(ValueError):
            compute_hub_threshold(lam, edges, workers)

    def test_override(self) -> None:
        """Test that an explicit threshold wins."""
        config = InferenceConfig(num_workers=2, threshold_override=7)

        assert resolve_threshold(config, 10_000).threshold == 7


class TestShadowNodes:
    """Tests for shadow node planning."""

    def test_split_sizes(self, make_graph: GraphFactory) -> None:
        """Test out-degree 250 with threshold 100: three mirrors of 84, 83 and 83 edges."""
        graph = fan_out_graph(make_graph, 250)

        plan = plan_shadow_nodes(graph, 100)

        assert [len(group) for group in plan.groups[NodeId(0)]] == [84, 83, 83]
        assert plan.mirrors(NodeId(0)) == (NodeId(0, 0), NodeId(0, 1), NodeId(0, 2))
        assert plan.max_out_degree <= 100
        assert NodeId(0) not in plan.graph.nodes

    def test_mirrors_share_features_and_in_edges(self, make_graph: GraphFactory) -> None:
        """Test that every mirror copies the features and receives every in-edge."""
        graph = fan_out_graph(make_graph, 250)

        plan = plan_shadow_nodes(graph, 100)

        for mirror in plan.mirrors(NodeId(0)):
            record = plan.graph.nodes[mirror]
            assert record.features.tolist() == graph.nodes[NodeId(0)].features.tolist()
            assert record.logical_out_degree == 250
            assert plan.graph.in_neighbors[mirror] == (NodeId(1),)

    def test_round_robin(self) -> None:
        """Test dealing sorted destinations over groups."""
        dsts = [NodeId(i) for i in range(7)]

        groups = split_round_robin(dsts, 3)

        assert groups == (
            (NodeId(0), NodeId(3), NodeId(6)),
            (NodeId(1), NodeId(4)),
            (NodeId(2), NodeId(5)),
        )

    def test_no_hubs(self, make_graph: GraphFactory) -> None:
        """Test that a graph below the threshold is left alone."""
        graph = fan_out_graph(make_graph, 10)

        plan = plan_shadow_nodes(graph, 10)

        assert plan.num_hubs == 0
        assert plan.graph is graph

    def test_too_many_mirrors(self, make_graph: GraphFactory) -> None:
        """Test that more than 256 mirrors cannot be addressed."""
        with pytest.raises(ValueError, match="mirrors"):
            plan_shadow_nodes(fan_out_graph(make_graph, 300), 1)

    def test_output_copies(self) -> None:
        """Test that only physical nodes and mirror 0 report."""
        assert is_output_copy(NodeId(4))
        assert is_output_copy(NodeId(4, 0))
        assert not is_output_copy(NodeId(4, 1))

    def test_sources_of_hubs_keep_out_degree(self, make_graph: GraphFactory) -> None:
        """Test that an edge copied once per mirror does not inflate the sender's degree."""
        plan = plan_shadow_nodes(hub_source_graph(make_graph), 2)

        record = plan.graph.nodes[NodeId(9)]
        assert record.out_degree == 4
        assert record.norm_out_degree == 2
        assert plan.graph.nodes[NodeId(2)].logical_out_degree is None

    @pytest.mark.parametrize("backend", list(Backend))
    def test_gcn_sources_of_hubs_match_baseline(
        self, make_graph: GraphFactory, backend: Backend
    ) -> None:
        """Test that degree-normalized messages from a hub's in-neighbors are unchanged."""
        graph = hub_source_graph(make_graph)
        model = seeded_random_model(Algorithm.GCN, 2, 4, 2, 2, seed=3)
        run = run_pregel_inference if backend is Backend.PREGEL else run_mr_inference
        base = InferenceConfig(
            backend=backend, num_workers=2, strategies=frozenset(), threshold_override=2
        )
        shadow = base.model_copy(update={"strategies": frozenset({Strategy.SHADOW_NODES})})

        assert_same_predictions(
            run(graph, model, base).rows, run(graph, model, shadow).rows, atol=1e-5
        )

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_mirrors_hold_identical_embeddings(
        self, out_skewed_graph: Graph, models: dict[Algorithm, ModelBundle], algorithm: Algorithm
    ) -> None:
        """Test that every mirror of a hub ends with the same final embedding."""
        config = InferenceConfig(
            num_workers=4,
            strategies=frozenset({Strategy.SHADOW_NODES}),
            threshold_override=3,
        )
        engine = PregelEngine(models[algorithm], config)
        engine.run(out_skewed_graph)

        states = {
            node: state
            for worker in engine.workers
            for node, state in worker.partition.node_state.items()
        }
        plan = plan_shadow_nodes(out_skewed_graph, 3)
        assert plan.num_hubs > 0
        for hub in plan.groups:
            embeddings = {states[mirror].embedding.tobytes() for mirror in plan.mirrors(hub)}
            assert len(embeddings) == 1, hub

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_matches_baseline(
        self, out_skewed_graph: Graph, models: dict[Algorithm, ModelBundle], algorithm: Algorithm
    ) -> None:
        """Test that splitting hubs does not change any prediction."""
        model = models[algorithm]
        base = InferenceConfig(num_workers=4, strategies=frozenset(), threshold_override=3)
        shadow = base.model_copy(update={"strategies": frozenset({Strategy.SHADOW_NODES})})

        baseline = run_pregel_inference(out_skewed_graph, model, base)
        split = run_pregel_inference(out_skewed_graph, model, shadow)

        assert_same_predictions(baseline.rows, split.rows, atol=1e-5)
        assert plan_shadow_nodes(out_skewed_graph, 3).num_hubs > 0


class TestBroadcast:
    """Tests for broadcast encoding and resolution."""

    def test_one_entry_per_worker(self) -> None:
        """Test 1000 out-edges over 8 workers: 8 payloads and 1000 references."""
        payload = np.ones(4, dtype=np.float32)
        destinations = [NodeId(i) for i in range(1, 1001)]

        entries, refs = broadcast_encode(NodeId(0), payload, destinations, 8)

        assert [e.worker for e in entries] == list(range(8))
        assert len(refs) == 1000
        assert all(isinstance(ref.payload, BroadcastRef) for ref in refs)

    def test_only_reached_workers(self) -> None:
        """Test that workers without a destination get no payload."""
        entries, _ = broadcast_encode(
            NodeId(0), np.ones(2, dtype=np.float32), [NodeId(2), NodeId(6)], 4
        )

        assert [e.worker for e in entries] == [2]

    def test_resolve(self) -> None:
        """Test resolving a published payload, and failing after the registry is cleared."""
        entries, refs = broadcast_encode(
            NodeId(3), np.array([1, 2], dtype=np.float32), [NodeId(5)], 2
        )
        registry = BroadcastRegistry()
        for entry in entries:
            registry.publish(entry)
        ref = refs[0].payload
        assert isinstance(ref, BroadcastRef)

        assert broadcast_resolve(ref, registry, 1).tolist() == [1, 2]
        with pytest.raises(BroadcastResolutionError):
            broadcast_resolve(ref, registry, 0)
        registry.clear()
        with pytest.raises(BroadcastResolutionError):
            registry.resolve(1, ref)


class TestStrategySubsets:
    """Every strategy combination must reproduce the k-hop oracle."""

    @pytest.mark.slow
    @pytest.mark.parametrize("num_workers", [1, 2, 8])
    @pytest.mark.parametrize("backend", list(Backend))
    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_all_subsets_match_oracle(
        self,
        random_graph: Graph,
        models: dict[Algorithm, ModelBundle],
        backend: Backend,
        algorithm: Algorithm,
        num_workers: int,
    ) -> None:
        """Test all eight subsets of {pg, bc, sn} on both backends and several worker counts."""
        run = run_pregel_inference if backend is Backend.PREGEL else run_mr_inference
        model = models[algorithm]
        oracle = oracle_khop_forward(random_graph, model)

        for subset in STRATEGY_SUBSETS:
            config = InferenceConfig(
                backend=backend, num_workers=num_workers, strategies=subset, threshold_override=4
            )
            result = run(random_graph, model, config)
            assert_same_predictions(oracle.rows, result.rows, atol=1e-4)
            assert [r.predicted_class for r in result.rows] == [
                r.predicted_class for r in oracle.rows
            ], subset
