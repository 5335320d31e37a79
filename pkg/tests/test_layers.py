"""Tests for the built-in SAGE, GCN and GAT layers."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from gasinfer.core.models import AggregateKind, Strategy
from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import NodeRecord, OutEdge
from gasinfer.model.aggregate import aggregate_finalize, fold_messages
from gasinfer.model.layers import GatLayer, GcnLayer, NodeState, SageLayer, init_embedding
from gasinfer.model.stages import LayerSignature, Stage, stage_marks
from gasinfer.nn.linalg import ActivationKind, DimensionError


def vec(*values: float) -> np.ndarray:
    return np.array(values, dtype=np.float32)


def state(*values: float, out_degree: int = 0) -> NodeState:
    return NodeState(vec(*values), layer_index=0, out_degree=out_degree)


def identity_sage(dim: int = 2) -> SageLayer:
    eye = np.eye(dim, dtype=np.float32)
    params = {"w_self": eye, "w_nbr": eye, "bias": np.zeros(dim, dtype=np.float32)}
    return SageLayer(dim, dim, params, ActivationKind.IDENTITY)


def identity_gcn(dim: int = 2) -> GcnLayer:
    params = {"weight": np.eye(dim, dtype=np.float32), "bias": np.zeros(dim, dtype=np.float32)}
    return GcnLayer(dim, dim, params, ActivationKind.IDENTITY)


def gat(
    a_src: list[float], a_dst: list[float], activation: ActivationKind, self_attention: bool
) -> GatLayer:
    params = {
        "weight": np.eye(2, dtype=np.float32),
        "a_src": np.array(a_src, dtype=np.float32),
        "a_dst": np.array(a_dst, dtype=np.float32),
    }
    return GatLayer(2, 2, params, activation, options={"self_attention": self_attention})


class TestSageLayer:
    """Tests for GraphSAGE mean pooling."""

    def test_mean_of_neighbors(self) -> None:
        """Test W_self = W_nbr = I, zero bias, zero self: output is the neighbor mean."""
        layer = identity_sage()
        messages = [(NodeId(1), vec(1, 0)), (NodeId(2), vec(1, 2))]

        gathered = aggregate_finalize(layer.gather(messages))
        updated = layer.apply_node(state(0, 0), gathered)

        assert updated.embedding.tolist() == [1, 1]
        assert updated.layer_index == 1

    def test_no_messages(self) -> None:
        """Test that a node without in-edges keeps only its self term."""
        layer = identity_sage()

        updated = layer.apply_node(state(3, -4), aggregate_finalize(layer.gather([])))

        assert updated.embedding.tolist() == [3, -4]

    def test_relu_hidden_activation(self) -> None:
        """Test that relu clamps negative outputs."""
        eye = np.eye(2, dtype=np.float32)
        params = {"w_self": eye, "w_nbr": eye, "bias": np.zeros(2, dtype=np.float32)}
        layer = SageLayer(2, 2, params, ActivationKind.RELU)

        updated = layer.apply_node(state(3, -4), aggregate_finalize(layer.gather([])))

        assert updated.embedding.tolist() == [3, 0]

    def test_message_is_embedding(self) -> None:
        """Test that SAGE sends its embedding unchanged."""
        assert identity_sage().message(state(5, 6)).tolist() == [5, 6]

    def test_rejects_wrong_input_dim(self) -> None:
        """Test the state dimension check."""
        layer = identity_sage()

        with pytest.raises(DimensionError):
            layer.apply_node(state(1, 2, 3), aggregate_finalize(layer.gather([])))

    def test_rejects_wrong_param_shape(self) -> None:
        """Test that parameter shapes are checked against the layer dims."""
        params = {
            "w_self": np.eye(3, dtype=np.float32),
            "w_nbr": np.eye(2, dtype=np.float32),
            "bias": np.zeros(2, dtype=np.float32),
        }

        with pytest.raises(DimensionError):
            SageLayer(2, 2, params, ActivationKind.RELU)


class TestGcnLayer:
    """Tests for degree-normalized GCN."""

    def test_message_scaled_by_out_degree(self) -> None:
        """Test h = [2, 2], out-degree 3: message = h / sqrt(4) = [1, 1]."""
        assert identity_gcn().message(state(2, 2, out_degree=3)).tolist() == [1, 1]

    def test_apply_node(self) -> None:
        """Test the self term plus one normalized message."""
        layer = identity_gcn()
        gathered = aggregate_finalize(layer.gather([(NodeId(1), vec(1, 1))]))

        updated = layer.apply_node(state(2, 2, out_degree=3), gathered)

        np.testing.assert_allclose(updated.embedding, [math.sqrt(2)] * 2, atol=1e-6)


class TestGatLayer:
    """Tests for single-head GAT."""

    def test_message_packs_z_and_score(self) -> None:
        """Test W = I, a_src = [1, 0], h = [3, 4]: message = [3, 4, 3]."""
        layer = gat([1, 0], [0, 0], ActivationKind.IDENTITY, self_attention=True)

        assert layer.message(state(3, 4)).tolist() == [3, 4, 3]
        assert layer.message_dim == 3

    def test_single_in_edge_without_self_attention(self) -> None:
        """Test that one in-edge gets weight 1, so the output is elu(z_u)."""
        layer = gat([1, 0], [0, 1], ActivationKind.ELU, self_attention=False)
        payload = layer.message(state(-1, 2))

        gathered = aggregate_finalize(layer.gather([(NodeId(1), payload)]))
        updated = layer.apply_node(state(7, 7), gathered)

        np.testing.assert_allclose(updated.embedding, [math.exp(-1) - 1, 2.0], atol=1e-6)

    def test_equal_scores_average(self) -> None:
        """Test that zero attention vectors weight self and neighbor equally."""
        layer = gat([0, 0], [0, 0], ActivationKind.IDENTITY, self_attention=True)
        payload = layer.message(state(4, 0))

        gathered = aggregate_finalize(layer.gather([(NodeId(1), payload)]))
        updated = layer.apply_node(state(0, 2), gathered)

        np.testing.assert_allclose(updated.embedding, [2, 1], atol=1e-6)

    def test_isolated_without_self_attention(self) -> None:
        """Test that no scores at all give the zero vector."""
        layer = gat([1, 0], [0, 1], ActivationKind.IDENTITY, self_attention=False)

        updated = layer.apply_node(state(1, 1), aggregate_finalize(layer.gather([])))

        assert updated.embedding.tolist() == [0, 0]


class TestSignatures:
    """Tests for stage marks and signatures."""

    def test_sage_defaults(self) -> None:
        """Test the default strategy switches of SAGE."""
        signature = identity_sage().signature

        assert signature.aggregate_kind is AggregateKind.SUM_COUNT
        assert signature.partial_gather
        assert signature.broadcast
        assert not signature.shadow_nodes
        assert signature.message_uniform

    def test_gat_defaults(self) -> None:
        """Test that GAT unions messages and so cannot gather partially."""
        signature = gat([1, 0], [0, 1], ActivationKind.ELU, True).signature

        assert not signature.size_reducing
        assert not signature.partial_gather
        assert signature.shadow_nodes
        assert signature.message_dim == 3

    def test_stage_marks(self) -> None:
        """Test that every computation stage of a built-in layer is marked."""
        marks = stage_marks(GatLayer)

        assert {Stage.AGGREGATE, Stage.APPLY_NODE, Stage.APPLY_EDGE} <= set(marks)
        assert marks[Stage.APPLY_EDGE].uniform

    def test_partial_gather_needs_size_reducing(self) -> None:
        """Test that an unsound signature is rejected."""
        with pytest.raises(ValidationError):
            LayerSignature(
                aggregate_kind=AggregateKind.UNION,
                size_reducing=False,
                message_uniform=True,
                partial_gather=True,
                input_dim=2,
                output_dim=2,
                message_dim=3,
            )

    def test_size_reducing_must_match_kind(self) -> None:
        """Test that size_reducing follows the aggregate kind."""
        with pytest.raises(ValidationError):
            LayerSignature(
                aggregate_kind=AggregateKind.MAX,
                size_reducing=False,
                message_uniform=True,
                input_dim=2,
                output_dim=2,
                message_dim=2,
            )

    def test_with_strategies_drops_ineligible(self) -> None:
        """Test that GAT keeps broadcast and shadow but never partial-gather."""
        signature = gat([1, 0], [0, 1], ActivationKind.ELU, True).signature

        enabled = signature.with_strategies(frozenset(Strategy)).strategies

        assert enabled == {Strategy.BROADCAST, Strategy.SHADOW_NODES}

    def test_fold_order_matches_gather(self) -> None:
        """Test that gather is the canonical fold of the layer's aggregate kind."""
        layer = identity_sage()
        messages = [(NodeId(i), vec(i, 1)) for i in range(3)]

        gathered = layer.gather(messages)
        folded = fold_messages(AggregateKind.SUM_COUNT, 2, messages)

        assert gathered.count == folded.count == 3
        assert gathered.vector is not None and folded.vector is not None
        assert gathered.vector.tobytes() == folded.vector.tobytes()


class TestInitEmbedding:
    """Tests for the layer-0 state."""

    def test_copies_features_and_degree(self) -> None:
        """Test h0 = x and the out-degree used for normalization."""
        edges = (OutEdge(NodeId(1), vec()), OutEdge(NodeId(2), vec()))
        record = NodeRecord(NodeId(0), vec(1, 2), edges)

        initial = init_embedding(identity_sage(), record)

        assert initial.embedding.tolist() == [1, 2]
        assert initial.layer_index == 0
        assert initial.out_degree == 2

    def test_mirror_keeps_logical_degree(self) -> None:
        """Test that a mirror normalizes with the original node's out-degree."""
        record = NodeRecord(NodeId(0, 1), vec(1, 2), (), logical_out_degree=5)

        assert init_embedding(identity_sage(), record).out_degree == 5

    def test_rejects_feature_mismatch(self) -> None:
        """Test the feature dimension check."""
        with pytest.raises(DimensionError):
            init_embedding(identity_sage(), NodeRecord(NodeId(0), vec(1, 2, 3)))
