"""Partial reduction states for the aggregate stage.

Every kind forms a commutative semigroup under ``aggregate_merge`` (exactly for union,
up to float reassociation for the numeric kinds), which is what lets the aggregate run
early on senders, in combiners and across spill runs.
"""

from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from gasinfer.core.models import AggregateKind
from gasinfer.graph.ids import NodeId
from gasinfer.nn.linalg import FLOAT, DenseVector


class AggregateError(Exception):
    """Incompatible aggregate states."""

    pass


UnionItems = tuple[tuple[NodeId, DenseVector], ...]


@dataclass(frozen=True, slots=True)
class AggregateState:
    """A partial reduction over some of a node's in-edge messages.

    ``vector`` holds the running sum (sum_count) or the running max/min; it is ``None``
    while a max/min state has seen no message. ``count`` is the number of messages
    folded in, for every kind.
    """

    kind: AggregateKind
    dim: int
    vector: DenseVector | None = None
    count: int = 0
    items: UnionItems = ()

    @classmethod
    def empty(cls, kind: AggregateKind, dim: int) -> "AggregateState":
        if kind is AggregateKind.SUM_COUNT:
            return cls(kind, dim, np.zeros(dim, dtype=FLOAT), 0)
        return cls(kind, dim)

    @classmethod
    def of(cls, kind: AggregateKind, src: NodeId, message: DenseVector) -> "AggregateState":
        """The state holding a single message."""
        dim = message.shape[0]
        if kind is AggregateKind.UNION:
            return cls(kind, dim, None, 1, ((src, message),))
        return cls(kind, dim, message.astype(FLOAT, copy=True), 1)


@dataclass(frozen=True, slots=True)
class Gathered:
    """A finalized aggregate, the input of ``apply_node``.

    ``vector`` is the mean (sum_count), the max or the min, and the zero vector when no
    message arrived. ``total`` keeps the raw sum for layers that normalize themselves.
    """

    kind: AggregateKind
    vector: DenseVector
    total: DenseVector
    count: int
    items: UnionItems = ()
    edge_features: dict[NodeId, DenseVector] = field(default_factory=dict)


def _sort_items(items: Iterable[tuple[NodeId, DenseVector]]) -> UnionItems:
    return tuple(sorted(items, key=lambda item: item[0]))


def aggregate_merge(a: AggregateState, b: AggregateState) -> AggregateState:
    """Merge two partial states of the same kind and dimension."""
    if a.kind is not b.kind:
        raise AggregateError(f"cannot merge {a.kind.value} with {b.kind.value}")
    if a.dim != b.dim:
        raise AggregateError(f"cannot merge dims {a.dim} and {b.dim}")

    count = a.count + b.count
    if a.kind is AggregateKind.UNION:
        return AggregateState(a.kind, a.dim, None, count, _sort_items(a.items + b.items))
    if a.vector is None:
        return AggregateState(a.kind, a.dim, b.vector, count)
    if b.vector is None:
        return AggregateState(a.kind, a.dim, a.vector, count)

    if a.kind is AggregateKind.SUM_COUNT:
        vector = (a.vector + b.vector).astype(FLOAT)
    elif a.kind is AggregateKind.MAX:
        vector = np.maximum(a.vector, b.vector)
    else:
        vector = np.minimum(a.vector, b.vector)
    return AggregateState(a.kind, a.dim, vector, count)


def fold_messages(
    kind: AggregateKind, dim: int, messages: Iterable[tuple[NodeId, DenseVector]]
) -> AggregateState:
    """Left-fold messages (in the given order) into a state."""
    state = AggregateState.empty(kind, dim)
    for src, message in messages:
        state = aggregate_merge(state, AggregateState.of(kind, src, message))
    return state


def aggregate_finalize(state: AggregateState) -> Gathered:
    """Turn a state into the gathered input of ``apply_node``."""
    zeros = np.zeros(state.dim, dtype=FLOAT)
    if state.kind is AggregateKind.UNION:
        return Gathered(state.kind, zeros, zeros, state.count, _sort_items(state.items))
    if state.vector is None or state.count == 0:
        return Gathered(state.kind, zeros, zeros, 0)
    if state.kind is AggregateKind.SUM_COUNT:
        mean = (state.vector / FLOAT(state.count)).astype(FLOAT)
        return Gathered(state.kind, mean, state.vector, state.count)
    return Gathered(state.kind, state.vector, state.vector, state.count)
