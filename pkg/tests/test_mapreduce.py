"""Tests for the external-memory engine."""

from pathlib import Path
from typing import Any

import numpy as np
import pytest

from gasinfer.core.models import Algorithm, Backend, InferenceConfig, Strategy
from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import Graph
from gasinfer.model.bundle import ModelBundle, seeded_random_model
from gasinfer.model.layers import NodeState
from gasinfer.services.mapreduce import (
    PipelineCorruptionError,
    map_init,
    reduce_layer,
    run_mr_inference,
)
from gasinfer.services.pregel import run_pregel_inference
from gasinfer.services.records import RecordKind, self_state_record
from gasinfer.services.strategies import BroadcastRegistry, compute_hub_threshold

from tests.conftest import GraphFactory, assert_same_predictions

NO_STRATEGIES: frozenset[Strategy] = frozenset()


def mr_config(num_reducers: int, **overrides: Any) -> InferenceConfig:
    return InferenceConfig(backend=Backend.MAPREDUCE, num_workers=num_reducers, **overrides)


class TestMapInit:
    """Tests for the map round."""

    def test_record_counts(self, make_graph: GraphFactory) -> None:
        """Test one SELF_STATE plus one message per out-edge."""
        graph = make_graph({n: [1.0, 0.0] for n in range(4)}, [(0, 1), (0, 2), (0, 3)])
        model = seeded_random_model(Algorithm.SAGE, 2, 3, 1, 2, seed=1).with_strategies(
            NO_STRATEGIES
        )

        records = list(
            map_init([graph.nodes[NodeId(0)]], model, compute_hub_threshold(0.1, 3, 1), 1)
        )

        assert len(records) == 4
        assert [r.kind for r in records].count(RecordKind.SELF_STATE) == 1
        assert {r.key for r in records if r.kind is RecordKind.IN_EDGE_MSG} == {
            NodeId(1),
            NodeId(2),
            NodeId(3),
        }


class TestReduceLayer:
    """Tests for a single reduce round."""

    def _run(self, group: list[Any]) -> list[Any]:
        model = seeded_random_model(Algorithm.SAGE, 2, 3, 1, 2, seed=1)
        return list(
            reduce_layer(
                [(NodeId(5), group)],
                1,
                model,
                BroadcastRegistry(),
                0,
                compute_hub_threshold(0.1, 1, 1),
                1,
                [],
            )
        )

    def test_missing_self_state(self) -> None:
        """Test that a group without SELF_STATE is corrupt."""
        with pytest.raises(PipelineCorruptionError):
            self._run([])

    def test_duplicate_self_state(self) -> None:
        """Test that two SELF_STATE records for one key are corrupt."""
        state = NodeState(np.zeros(2, dtype=np.float32), 0)
        record = self_state_record(NodeId(5), state, ())

        with pytest.raises(PipelineCorruptionError):
            self._run([record, record])

    def test_last_round_emits_row(self) -> None:
        """Test that the final round yields one output row per key."""
        state = NodeState(np.ones(2, dtype=np.float32), 0)

        items = self._run([self_state_record(NodeId(5), state, ())])

        assert len(items) == 1
        assert items[0].node_id == NodeId(5)


class TestMapReduceInference:
    """Tests for full runs."""

    def test_round_structure(self, random_graph: Graph) -> None:
        """Test |V| + |E| records per round and 1 + K rounds."""
        model = seeded_random_model(Algorithm.GCN, 4, 6, 3, 2, seed=7)

        metrics = run_mr_inference(
            random_graph, model, mr_config(2, strategies=NO_STRATEGIES)
        ).metrics

        expected = random_graph.num_nodes + random_graph.num_edges
        assert metrics.steps == [0, 1, 2, 3]
        for step in (0, 1, 2):
            assert metrics.step_total(step, "msgs_out") == expected
        assert metrics.step_total(0, "msgs_in") == 0
        assert metrics.step_total(3, "msgs_out") == 0
        assert metrics.conservation_violations() == []

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_matches_pregel(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle], algorithm: Algorithm
    ) -> None:
        """Test that both backends agree with R = W."""
        model = models[algorithm]

        mr = run_mr_inference(random_graph, model, mr_config(3))
        pregel = run_pregel_inference(
            random_graph, model, InferenceConfig(backend=Backend.PREGEL, num_workers=3)
        )

        assert_same_predictions(mr.rows, pregel.rows, atol=1e-5)

    def test_memory_budget_does_not_change_results(
        self, tmp_path: Path, random_graph: Graph, models: dict[Algorithm, ModelBundle]
    ) -> None:
        """Test that a tiny budget spills but keeps every output and byte count."""
        model = models[Algorithm.SAGE]

        unlimited = run_mr_inference(random_graph, model, mr_config(2))
        tiny = run_mr_inference(
            random_graph, model, mr_config(2, memory_budget_bytes=256, spill_dir=tmp_path)
        )

        assert_same_predictions(unlimited.rows, tiny.rows)
        assert tiny.metrics.spill_runs > unlimited.metrics.spill_runs
        assert tiny.metrics.total("bytes_out") == unlimited.metrics.total("bytes_out")
        assert tiny.metrics.total("msgs_out") == unlimited.metrics.total("msgs_out")
        assert list(tmp_path.iterdir()) == []

    def test_threads_do_not_change_results(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle]
    ) -> None:
        """Test that parallel tasks are bit-identical to sequential ones."""
        model = models[Algorithm.GAT]

        serial = run_mr_inference(random_graph, model, mr_config(3))
        threaded = run_mr_inference(random_graph, model, mr_config(3, parallel_workers=3))

        assert_same_predictions(serial.rows, threaded.rows)

    def test_peak_group_bounded_by_in_degree(
        self, random_graph: Graph, models: dict[Algorithm, ModelBundle]
    ) -> None:
        """Test that a key group never exceeds SELF_STATE plus the node's in-edges."""
        max_in = max(random_graph.in_degree(node) for node in random_graph.node_ids())

        metrics = run_mr_inference(
            random_graph, models[Algorithm.GCN], mr_config(2, strategies=NO_STRATEGIES)
        ).metrics

        assert metrics.peak_group_records == max_in + 1

    def test_single_layer(self, tiny_graph: Graph) -> None:
        """Test K = 1: one map round and one reduce round."""
        model = seeded_random_model(Algorithm.SAGE, 2, 3, 1, 2, seed=1)

        result = run_mr_inference(tiny_graph, model, mr_config(1))

        assert result.metrics.steps == [0, 1]
        assert [row.node_id for row in result.rows] == tiny_graph.node_ids()
