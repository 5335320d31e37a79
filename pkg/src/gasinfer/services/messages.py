"""Messages exchanged between workers, and their wire-size accounting."""

from collections.abc import Iterable
from dataclasses import dataclass

from gasinfer.core.models import AggregateKind
from gasinfer.graph.ids import NodeId
from gasinfer.model.aggregate import AggregateState, aggregate_merge
from gasinfer.nn.linalg import DenseVector

# u64 raw id + mirror flag + group, the same layout the shuffle records use
ID_BYTES = 10
FLOAT_BYTES = 4
COUNT_BYTES = 4
HEADER_BYTES = 2 * ID_BYTES


@dataclass(frozen=True, slots=True)
class Dense:
    """A plain per-edge message."""

    vector: DenseVector


@dataclass(frozen=True, slots=True)
class Partial:
    """Several messages to one destination, already reduced by the sender."""

    state: AggregateState


@dataclass(frozen=True, slots=True)
class BroadcastRef:
    """Stands for the payload ``src`` published once to the receiving worker."""

    src: NodeId


Payload = Dense | Partial | BroadcastRef


@dataclass(frozen=True, slots=True)
class Message:
    """One unit of inter-worker data flow.

    For a ``Partial`` payload ``src`` is the smallest source folded into it.
    """

    dst: NodeId
    src: NodeId
    payload: Payload


def vector_bytes(dim: int) -> int:
    return FLOAT_BYTES * dim


def state_bytes(state: AggregateState) -> int:
    """Wire size of a partial aggregate."""
    if state.kind is AggregateKind.UNION:
        return COUNT_BYTES + len(state.items) * (ID_BYTES + vector_bytes(state.dim))
    return COUNT_BYTES + vector_bytes(state.dim)


def payload_bytes(payload: Payload) -> int:
    match payload:
        case Dense(vector):
            return vector_bytes(vector.shape[0])
        case Partial(state):
            return state_bytes(state)
        case BroadcastRef():
            return 0
    raise TypeError(f"unknown payload {payload!r}")


def message_bytes(message: Message) -> int:
    return HEADER_BYTES + payload_bytes(message.payload)


def broadcast_entry_bytes(payload: DenseVector) -> int:
    """Wire size of one published broadcast payload (source id plus vector)."""
    return ID_BYTES + vector_bytes(payload.shape[0])


def to_state(kind: AggregateKind, message: Message) -> AggregateState:
    """The aggregate state a resolved message contributes."""
    match message.payload:
        case Dense(vector):
            return AggregateState.of(kind, message.src, vector)
        case Partial(state):
            return state
        case BroadcastRef(src):
            raise TypeError(f"unresolved broadcast reference from {src}")
    raise TypeError(f"unknown payload {message.payload!r}")


def fold_inbox(kind: AggregateKind, dim: int, messages: Iterable[Message]) -> AggregateState:
    """
    Left-fold resolved messages for one destination in ascending src order.

    Plain messages fold exactly like ``GnnLayer.gather``; partials merge in at their
    smallest source.
    """
    state = AggregateState.empty(kind, dim)
    for message in sorted(messages, key=lambda m: m.src):
        state = aggregate_merge(state, to_state(kind, message))
    return state


def combine_messages(kind: AggregateKind, dim: int, messages: list[Message]) -> Message:
    """Merge messages sharing one destination into a single ``Partial``."""
    ordered = sorted(messages, key=lambda m: m.src)
    state = AggregateState.empty(kind, dim)
    for message in ordered:
        state = aggregate_merge(state, to_state(kind, message))
    return Message(dst=ordered[0].dst, src=ordered[0].src, payload=Partial(state))
