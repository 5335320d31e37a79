"""Built-in GNN layers expressed as gather / apply_node / apply_edge stages."""

import math
from abc import ABC, abstractmethod
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

from gasinfer.core.models import AggregateKind, Algorithm
from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import NodeRecord, OutEdge
from gasinfer.model.aggregate import AggregateState, Gathered, fold_messages
from gasinfer.model.stages import LayerSignature, Stage, stage, stage_marks
from gasinfer.nn.linalg import (
    FLOAT,
    ActivationKind,
    DenseVector,
    DimensionError,
    activation,
    dot,
    matvec,
    softmax,
)

Params = dict[str, np.ndarray]


@dataclass(frozen=True, slots=True)
class NodeState:
    """A node's embedding after ``layer_index`` layers.

    ``out_degree`` is the node's logical out-degree, needed by degree-normalized layers.
    """

    embedding: DenseVector
    layer_index: int
    out_degree: int = 0


class GnnLayer(ABC):
    """
    Base class of a GNN layer in gather / apply_node / apply_edge form.

    Subclasses declare their parameter shapes and mark stage methods with ``@stage``;
    the marks become the default ``LayerSignature``.
    """

    algorithm: ClassVar[Algorithm]
    aggregate_kind: ClassVar[AggregateKind]
    hidden_activation: ClassVar[ActivationKind]

    def __init__(
        self,
        input_dim: int,
        output_dim: int,
        params: Mapping[str, np.ndarray],
        activation_kind: ActivationKind,
        signature: LayerSignature | None = None,
        options: Mapping[str, Any] | None = None,
    ) -> None:
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.activation_kind = activation_kind
        self.options: dict[str, Any] = dict(options or {})

        expected = self.param_shapes(input_dim, output_dim)
        if set(params) != set(expected):
            raise DimensionError(
                f"{self.algorithm.value} layer expects params {sorted(expected)}, "
                f"got {sorted(params)}"
            )
        self.params: Params = {}
        for name, shape in expected.items():
            value = np.asarray(params[name], dtype=FLOAT)
            if value.shape != shape:
                raise DimensionError(f"param {name} has shape {value.shape}, expected {shape}")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"param {name} has non-finite values")
            self.params[name] = value

        self.signature = signature or self.default_signature()
        if (
            self.signature.input_dim != input_dim
            or self.signature.output_dim != output_dim
            or self.signature.message_dim != self.message_dim
            or self.signature.aggregate_kind is not self.aggregate_kind
        ):
            raise DimensionError(f"signature does not match the {self.algorithm.value} layer")

    @classmethod
    @abstractmethod
    def param_shapes(cls, input_dim: int, output_dim: int) -> dict[str, tuple[int, ...]]:
        """Parameter names and shapes, in initialization order."""

    @property
    def message_dim(self) -> int:
        return self.input_dim

    def default_signature(self) -> LayerSignature:
        marks = stage_marks(type(self))
        aggregate = marks.get(Stage.AGGREGATE)
        edge = marks.get(Stage.APPLY_EDGE)
        return LayerSignature(
            aggregate_kind=self.aggregate_kind,
            size_reducing=self.aggregate_kind.size_reducing,
            message_uniform=bool(edge and edge.uniform),
            partial_gather=bool(aggregate and aggregate.partial),
            broadcast=bool(edge and edge.broadcast),
            shadow_nodes=any(mark.shadow for mark in marks.values()),
            input_dim=self.input_dim,
            output_dim=self.output_dim,
            message_dim=self.message_dim,
        )

    def gather(self, messages: Iterable[tuple[NodeId, DenseVector]]) -> AggregateState:
        """Fold in-edge messages (in canonical src order) into an aggregate state."""
        return fold_messages(self.aggregate_kind, self.message_dim, messages)

    @abstractmethod
    def apply_node(self, state: NodeState, gathered: Gathered) -> NodeState:
        """Update a node from its previous state and the gathered messages."""

    @abstractmethod
    def message(self, state: NodeState) -> DenseVector:
        """The payload sent along every out-edge (built-ins are uniform)."""

    def apply_edge(self, state: NodeState, out_edge: OutEdge) -> DenseVector:
        """The payload for one out-edge."""
        return self.message(state)

    def _next_state(self, state: NodeState, pre_activation: DenseVector) -> NodeState:
        return NodeState(
            embedding=activation(self.activation_kind, pre_activation),
            layer_index=state.layer_index + 1,
            out_degree=state.out_degree,
        )

    def _check_state(self, state: NodeState) -> None:
        if state.embedding.shape[0] != self.input_dim:
            raise DimensionError(
                f"state of dim {state.embedding.shape[0]} fed to a layer with input dim "
                f"{self.input_dim}"
            )


class SageLayer(GnnLayer):
    """GraphSAGE with mean pooling: h' = act(W_self h + W_nbr mean + b)."""

    algorithm = Algorithm.SAGE
    aggregate_kind = AggregateKind.SUM_COUNT
    hidden_activation = ActivationKind.RELU

    @classmethod
    def param_shapes(cls, input_dim: int, output_dim: int) -> dict[str, tuple[int, ...]]:
        return {
            "w_self": (output_dim, input_dim),
            "w_nbr": (output_dim, input_dim),
            "bias": (output_dim,),
        }

    @stage(Stage.AGGREGATE, partial=True)
    def gather(self, messages: Iterable[tuple[NodeId, DenseVector]]) -> AggregateState:
        return super().gather(messages)

    @stage(Stage.APPLY_NODE)
    def apply_node(self, state: NodeState, gathered: Gathered) -> NodeState:
        self._check_state(state)
        own = matvec(self.params["w_self"], state.embedding)
        nbr = matvec(self.params["w_nbr"], gathered.vector)
        return self._next_state(state, own + nbr + self.params["bias"])

    @stage(Stage.APPLY_EDGE, uniform=True, broadcast=True)
    def message(self, state: NodeState) -> DenseVector:
        return state.embedding


class GcnLayer(GnnLayer):
    """GCN on directed graphs.

    Senders scale by 1/sqrt(out_degree+1), receivers by 1/sqrt(in_degree+1); the
    self term gets both factors.
    """

    algorithm = Algorithm.GCN
    aggregate_kind = AggregateKind.SUM_COUNT
    hidden_activation = ActivationKind.RELU

    @classmethod
    def param_shapes(cls, input_dim: int, output_dim: int) -> dict[str, tuple[int, ...]]:
        return {"weight": (output_dim, input_dim), "bias": (output_dim,)}

    @stage(Stage.AGGREGATE, partial=True)
    def gather(self, messages: Iterable[tuple[NodeId, DenseVector]]) -> AggregateState:
        return super().gather(messages)

    @stage(Stage.APPLY_NODE)
    def apply_node(self, state: NodeState, gathered: Gathered) -> NodeState:
        self._check_state(state)
        inv_in = FLOAT(1.0 / math.sqrt(gathered.count + 1))
        inv_out = FLOAT(1.0 / math.sqrt(state.out_degree + 1))
        own = state.embedding * inv_out * inv_in
        mixed = (own + gathered.total * inv_in).astype(FLOAT)
        return self._next_state(state, matvec(self.params["weight"], mixed) + self.params["bias"])

    @stage(Stage.APPLY_EDGE, uniform=True, broadcast=True)
    def message(self, state: NodeState) -> DenseVector:
        return (state.embedding * FLOAT(1.0 / math.sqrt(state.out_degree + 1))).astype(FLOAT)


class GatLayer(GnnLayer):
    """
    Single-head GAT.

    Messages pack (z_u = W h_u, s_u = a_src . z_u). The aggregate only unions them since
    attention is not associative; softmax and the weighted sum run in ``apply_node``,
    where the node attends to itself with its own z when ``self_attention`` is on.
    """

    algorithm = Algorithm.GAT
    aggregate_kind = AggregateKind.UNION
    hidden_activation = ActivationKind.ELU

    @classmethod
    def param_shapes(cls, input_dim: int, output_dim: int) -> dict[str, tuple[int, ...]]:
        return {
            "weight": (output_dim, input_dim),
            "a_src": (output_dim,),
            "a_dst": (output_dim,),
        }

    @property
    def message_dim(self) -> int:
        return self.output_dim + 1

    @property
    def self_attention(self) -> bool:
        return bool(self.options.get("self_attention", True))

    @property
    def negative_slope(self) -> float:
        return float(self.options.get("negative_slope", 0.2))

    @stage(Stage.AGGREGATE)
    def gather(self, messages: Iterable[tuple[NodeId, DenseVector]]) -> AggregateState:
        return super().gather(messages)

    def _score(self, value: np.float32) -> np.float32:
        leaky = activation(
            ActivationKind.LEAKY_RELU, np.array([value], dtype=FLOAT), self.negative_slope
        )
        return FLOAT(leaky[0])

    @stage(Stage.APPLY_NODE)
    def apply_node(self, state: NodeState, gathered: Gathered) -> NodeState:
        self._check_state(state)
        z_self = matvec(self.params["weight"], state.embedding)
        d = dot(self.params["a_dst"], z_self)

        zs: list[DenseVector] = []
        scores: list[np.float32] = []
        if self.self_attention:
            zs.append(z_self)
            scores.append(self._score(FLOAT(dot(self.params["a_src"], z_self) + d)))
        for _, payload in gathered.items:
            zs.append(payload[:-1])
            scores.append(self._score(FLOAT(payload[-1] + d)))

        combined = np.zeros(self.output_dim, dtype=FLOAT)
        if scores:
            alpha = softmax(np.array(scores, dtype=FLOAT))
            for weight, z in zip(alpha, zs, strict=True):
                combined += weight * z
        return self._next_state(state, combined)

    @stage(Stage.APPLY_EDGE, uniform=True, broadcast=True, shadow=True)
    def message(self, state: NodeState) -> DenseVector:
        z = matvec(self.params["weight"], state.embedding)
        s = dot(self.params["a_src"], z)
        return np.append(z, s).astype(FLOAT)


LAYER_TYPES: dict[Algorithm, type[GnnLayer]] = {
    Algorithm.SAGE: SageLayer,
    Algorithm.GAT: GatLayer,
    Algorithm.GCN: GcnLayer,
}


def init_embedding(layer0: GnnLayer, record: NodeRecord) -> NodeState:
    """h^0 = x_v (identity input transform)."""
    if record.features.shape[0] != layer0.input_dim:
        raise DimensionError(
            f"node {record.id} has {record.features.shape[0]} features, "
            f"model expects {layer0.input_dim}"
        )
    return NodeState(
        embedding=record.features.astype(FLOAT, copy=True),
        layer_index=0,
        out_degree=record.norm_out_degree,
    )


def apply_node(layer: GnnLayer, state: NodeState, gathered: Gathered) -> NodeState:
    return layer.apply_node(state, gathered)


def apply_edge(layer: GnnLayer, state: NodeState, out_edge: OutEdge) -> DenseVector:
    return layer.apply_edge(state, out_edge)
