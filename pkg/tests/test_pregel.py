"""Tests for the bulk-synchronous engine."""

from typing import Any

import numpy as np
import pytest

from gasinfer.core.models import Algorithm, Backend, InferenceConfig, Strategy
from gasinfer.graph.ids import NodeId
from gasinfer.graph.partition import partition_graph
from gasinfer.graph.tables import Graph
from gasinfer.model.bundle import ModelBundle, seeded_random_model
from gasinfer.services.messages import Dense, Message, Partial
from gasinfer.services.oracle import oracle_khop_forward
from gasinfer.services.pregel import (
    PartitioningError,
    PregelWorker,
    StepRole,
    SuperstepPlan,
    combine_outbox,
    run_pregel_inference,
)
from gasinfer.services.strategies import BroadcastRegistry, compute_hub_threshold

from tests.conftest import GraphFactory, assert_same_predictions

NO_STRATEGIES: frozenset[Strategy] = frozenset()


def pregel_config(num_workers: int, **overrides: Any) -> InferenceConfig:
    return InferenceConfig(backend=Backend.PREGEL, num_workers=num_workers, **overrides)


class TestSuperstepPlan:
    """Tests for superstep roles."""

    def test_roles(self) -> None:
        """Test init, layer and predict supersteps for K = 2."""
        plan = SuperstepPlan(2)

        assert plan.total_supersteps == 3
        assert [plan.role(s) for s in range(3)] == [
            StepRole.INIT,
            StepRole.LAYER,
            StepRole.PREDICT,
        ]

    def test_single_layer(self) -> None:
        """Test that K = 1 goes straight from init to predict."""
        assert SuperstepPlan(1).role(1) is StepRole.PREDICT

    def test_out_of_range(self) -> None:
        """Test that steps past K are rejected."""
        with pytest.raises(ValueError):
            SuperstepPlan(2).role(3)


class TestCombineOutbox:
    """Tests for sender-side combining."""

    def test_hundred_messages_to_one_destination(
        self, models: dict[Algorithm, ModelBundle]
    ) -> None:
        """Test that 100 messages for one node become one partial."""
        signature = models[Algorithm.SAGE].layers[0].signature
        bucket = [
            Message(NodeId(0), NodeId(src), Dense(np.full(4, src, dtype=np.float32)))
            for src in range(1, 101)
        ]

        combined, savings = combine_outbox(bucket, signature)

        assert len(combined) == 1
        assert savings == 99
        assert isinstance(combined[0].payload, Partial)
        assert combined[0].payload.state.count == 100
        assert combined[0].src == NodeId(1)

    def test_union_aggregate_unchanged(self, models: dict[Algorithm, ModelBundle]) -> None:
        """Test that GAT buckets are never combined."""
        signature = models[Algorithm.GAT].layers[0].signature
        bucket = [
            Message(NodeId(0), NodeId(src), Dense(np.zeros(7, dtype=np.float32)))
            for src in range(1, 4)
        ]

        combined, savings = combine_outbox(bucket, signature)

        assert combined == bucket
        assert savings == 0

    def test_singletons_stay_dense(self, models: dict[Algorithm, ModelBundle]) -> None:
        """Test that a destination with one message keeps its plain payload."""
        signature = models[Algorithm.SAGE].layers[0].signature
        bucket = [
            Message(NodeId(dst), NodeId(9), Dense(np.zeros(4, dtype=np.float32)))
            for dst in (3, 1, 2)
        ]

        combined, savings = combine_outbox(bucket, signature)

        assert [m.dst for m in combined] == [NodeId(1), NodeId(2), NodeId(3)]
        assert all(isinstance(m.payload, Dense) for m in combined)
        assert savings == 0


class TestPregelWorker:
    """Tests for a single worker."""

    def test_misrouted_message(self, tiny_graph: Graph) -> None:
        """Test that a message for another worker's node is an error."""
        model = seeded_random_model(Algorithm.SAGE, 2, 3, 2, 2, seed=1)
        part = partition_graph(tiny_graph, 2)[0]
        worker = PregelWorker(part, model, 2, compute_hub_threshold(0.1, 2, 2))
        worker.superstep_compute(0, StepRole.INIT, [], BroadcastRegistry())
        stray = Message(NodeId(1), NodeId(0), Dense(np.zeros(2, dtype=np.float32)))

        with pytest.raises(PartitioningError):
            worker.superstep_compute(1, StepRole.LAYER, [stray], BroadcastRegistry())


class TestPregelInference:
    """Tests for full runs."""

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_single_worker_matches_oracle(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle], algorithm: Algorithm
    ) -> None:
        """Test W = 1 against the k-hop oracle."""
        model = models[algorithm]

        result = run_pregel_inference(random_graph, model, pregel_config(1))
        oracle = oracle_khop_forward(random_graph, model)

        assert_same_predictions(result.rows, oracle.rows, atol=1e-4)
        assert [r.predicted_class for r in result.rows] == [
            r.predicted_class for r in oracle.rows
        ]

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_worker_count_invariance(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle], algorithm: Algorithm
    ) -> None:
        """Test that 1, 2 and 8 workers agree."""
        model = models[algorithm]
        runs = [
            run_pregel_inference(random_graph, model, pregel_config(w)).rows for w in (1, 2, 8)
        ]

        assert_same_predictions(runs[0], runs[1], atol=1e-5)
        assert_same_predictions(runs[0], runs[2], atol=1e-5)

    def test_plain_messages_bitwise_across_workers(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle]
    ) -> None:
        """Test that without combining the fold order makes results bit-identical."""
        model = models[Algorithm.GCN]
        one = run_pregel_inference(random_graph, model, pregel_config(1, strategies=NO_STRATEGIES))
        many = run_pregel_inference(
            random_graph, model, pregel_config(5, strategies=NO_STRATEGIES)
        )

        assert_same_predictions(one.rows, many.rows)

    def test_worker_order_and_threads(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle]
    ) -> None:
        """Test that execution order and a thread pool do not change any bit."""
        model = models[Algorithm.SAGE]
        base = run_pregel_inference(random_graph, model, pregel_config(4))
        reordered = run_pregel_inference(
            random_graph, model, pregel_config(4, worker_order=[3, 1, 0, 2])
        )
        threaded = run_pregel_inference(random_graph, model, pregel_config(4, parallel_workers=4))

        assert_same_predictions(base.rows, reordered.rows)
        assert_same_predictions(base.rows, threaded.rows)

    def test_message_count_per_layer(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle]
    ) -> None:
        """Test exactly |E| messages per layer superstep without strategies."""
        model = models[Algorithm.SAGE]

        metrics = run_pregel_inference(
            random_graph, model, pregel_config(3, strategies=NO_STRATEGIES)
        ).metrics

        assert metrics.steps == [0, 1, 2]
        assert metrics.step_total(0, "msgs_out") == random_graph.num_edges
        assert metrics.step_total(1, "msgs_out") == random_graph.num_edges
        assert metrics.step_total(2, "msgs_out") == 0
        assert metrics.total("combiner_savings") == 0

    @pytest.mark.parametrize("num_workers", [1, 3])
    def test_conservation(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle], num_workers: int
    ) -> None:
        """Test that what step t sends is what step t + 1 receives."""
        result = run_pregel_inference(
            random_graph,
            models[Algorithm.GCN],
            pregel_config(num_workers, strategies=frozenset(Strategy), threshold_override=4),
        )

        assert result.metrics.conservation_violations() == []
        for step in result.metrics.steps[:-1]:
            assert result.metrics.step_total(step, "bytes_out") == result.metrics.step_total(
                step + 1, "bytes_in"
            )

    def test_partial_gather_bounds_inbound(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle]
    ) -> None:
        """Test that with combining every node receives at most W messages."""
        result = run_pregel_inference(
            random_graph,
            models[Algorithm.SAGE],
            pregel_config(3, strategies=frozenset({Strategy.PARTIAL_GATHER})),
        )

        assert 0 < result.metrics.max_inbound() <= 3
        assert result.metrics.total("combiner_savings") > 0

    def test_embeddings_emitted(self, tiny_graph: Graph) -> None:
        """Test that rows carry final embeddings on request."""
        model = seeded_random_model(Algorithm.SAGE, 2, 3, 1, 2, seed=1)

        rows = run_pregel_inference(tiny_graph, model, pregel_config(2, emit_embeddings=True)).rows

        assert all(row.embedding is not None and row.embedding.shape == (3,) for row in rows)

    def test_edgeless_graph(self, make_graph: GraphFactory) -> None:
        """Test that isolated nodes still get a prediction."""
        graph = make_graph({n: [float(n), 1.0] for n in range(4)}, [])
        model = seeded_random_model(Algorithm.GCN, 2, 3, 2, 2, seed=1)

        result = run_pregel_inference(graph, model, pregel_config(2))

        assert [row.node_id for row in result.rows] == graph.node_ids()
        assert result.metrics.total("msgs_out") == 0
