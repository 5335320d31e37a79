"""Keyed shuffle records and their little-endian binary encoding.

A record is ``(key u64, mirror flag u8, group u8, kind u8, payload_len u32)`` followed by
the payload. Message and edge-info payloads start with the source id, so records sort
by (key, kind, src) without decoding the rest.
"""

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO

import numpy as np

from gasinfer.core.models import AggregateKind
from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import FeatureVector, OutEdge
from gasinfer.model.aggregate import AggregateState
from gasinfer.model.layers import NodeState
from gasinfer.nn.linalg import FLOAT, DenseVector
from gasinfer.services.messages import BroadcastRef, Dense, Message, Partial, Payload

HEADER = struct.Struct("<QBBBI")
NODE_ID = struct.Struct("<QBB")
U32 = struct.Struct("<I")
U8 = struct.Struct("<B")
WIRE_FLOAT = np.dtype("<f4")

KIND_CODES = {
    AggregateKind.SUM_COUNT: 0,
    AggregateKind.MAX: 1,
    AggregateKind.MIN: 2,
    AggregateKind.UNION: 3,
}
KINDS_BY_CODE = {code: kind for kind, code in KIND_CODES.items()}

TAG_DENSE = 0
TAG_PARTIAL = 1
TAG_REF = 2


class ShuffleError(Exception):
    """A run file is corrupt or cannot be written."""

    pass


class RecordKind(IntEnum):
    """What a keyed record carries (also its sort rank within a key)."""

    SELF_STATE = 0
    IN_EDGE_MSG = 1
    OUT_EDGE_INFO = 2


SortKey = tuple[NodeId, int, NodeId]


@dataclass(frozen=True, slots=True)
class KeyedRecord:
    """One shuffle record; ``payload`` stays encoded until the reducer needs it."""

    key: NodeId
    kind: RecordKind
    payload: bytes

    @property
    def src(self) -> NodeId:
        if self.kind is RecordKind.SELF_STATE:
            return self.key
        return _unpack_id(self.payload, 0)[0]

    @property
    def sort_key(self) -> SortKey:
        return (self.key, int(self.kind), self.src)

    @property
    def size(self) -> int:
        return HEADER.size + len(self.payload)

    def encode(self) -> bytes:
        mirror, group = _id_fields(self.key)
        return HEADER.pack(self.key.raw, mirror, group, int(self.kind), len(self.payload)) + (
            self.payload
        )


def _id_fields(node: NodeId) -> tuple[int, int]:
    if node.is_mirror:
        return 1, node.group
    return 0, 0


def _make_id(raw: int, mirror: int, group: int) -> NodeId:
    if mirror not in (0, 1):
        raise ShuffleError(f"invalid mirror flag {mirror}")
    return NodeId(raw, group) if mirror else NodeId(raw)


def _pack_id(node: NodeId) -> bytes:
    return NODE_ID.pack(node.raw, *_id_fields(node))


def _unpack_id(buf: bytes, offset: int) -> tuple[NodeId, int]:
    raw, mirror, group = NODE_ID.unpack_from(buf, offset)
    return _make_id(raw, mirror, group), offset + NODE_ID.size


def _pack_vector(vector: DenseVector) -> bytes:
    return U32.pack(vector.shape[0]) + np.asarray(vector, dtype=WIRE_FLOAT).tobytes()


def _unpack_vector(buf: bytes, offset: int) -> tuple[DenseVector, int]:
    (dim,) = U32.unpack_from(buf, offset)
    offset += U32.size
    end = offset + dim * WIRE_FLOAT.itemsize
    if end > len(buf):
        raise ShuffleError("truncated vector in record payload")
    vector = np.frombuffer(buf, dtype=WIRE_FLOAT, count=dim, offset=offset).astype(FLOAT)
    return vector, end


def read_record(stream: BinaryIO) -> KeyedRecord | None:
    """
    Read the next record, or None at a clean end of stream.

    Raises:
        ShuffleError: On a truncated header or payload, or an unknown kind.
    """
    header = stream.read(HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise ShuffleError("truncated record header")
    raw, mirror, group, kind, length = HEADER.unpack(header)
    payload = stream.read(length)
    if len(payload) < length:
        raise ShuffleError(f"truncated record payload ({len(payload)} of {length} bytes)")
    try:
        record_kind = RecordKind(kind)
    except ValueError as e:
        raise ShuffleError(f"unknown record kind {kind}") from e
    return KeyedRecord(_make_id(raw, mirror, group), record_kind, payload)


# ============================================================================
# Payloads
# ============================================================================


def self_state_record(
    node: NodeId, state: NodeState, out_nbrs: tuple[OutEdge, ...]
) -> KeyedRecord:
    """SELF_STATE: the node's current embedding and its out-adjacency."""
    parts = [
        U32.pack(state.layer_index),
        U32.pack(state.out_degree),
        _pack_vector(state.embedding),
        U32.pack(len(out_nbrs)),
    ]
    for edge in out_nbrs:
        parts.append(_pack_id(edge.dst))
        parts.append(_pack_vector(edge.features))
    return KeyedRecord(node, RecordKind.SELF_STATE, b"".join(parts))


def decode_self_state(record: KeyedRecord) -> tuple[NodeState, tuple[OutEdge, ...]]:
    try:
        buf = record.payload
        layer_index, out_degree = struct.unpack_from("<II", buf, 0)
        embedding, offset = _unpack_vector(buf, 8)
        (count,) = U32.unpack_from(buf, offset)
        offset += U32.size
        edges = []
        for _ in range(count):
            dst, offset = _unpack_id(buf, offset)
            features, offset = _unpack_vector(buf, offset)
            edges.append(OutEdge(dst, features))
    except struct.error as e:
        raise ShuffleError(f"corrupt SELF_STATE record for {record.key}: {e}") from e
    return NodeState(embedding, layer_index, out_degree), tuple(edges)


def _pack_state(state: AggregateState) -> bytes:
    parts = [
        U8.pack(KIND_CODES[state.kind]),
        U32.pack(state.dim),
        U32.pack(state.count),
        U8.pack(0 if state.vector is None else 1),
    ]
    if state.vector is not None:
        parts.append(_pack_vector(state.vector))
    parts.append(U32.pack(len(state.items)))
    for src, vector in state.items:
        parts.append(_pack_id(src))
        parts.append(_pack_vector(vector))
    return b"".join(parts)


def _unpack_state(buf: bytes, offset: int) -> AggregateState:
    (code,) = U8.unpack_from(buf, offset)
    if code not in KINDS_BY_CODE:
        raise ShuffleError(f"unknown aggregate kind code {code}")
    dim, count = struct.unpack_from("<II", buf, offset + 1)
    (has_vector,) = U8.unpack_from(buf, offset + 9)
    offset += 10
    vector = None
    if has_vector:
        vector, offset = _unpack_vector(buf, offset)
    (n_items,) = U32.unpack_from(buf, offset)
    offset += U32.size
    items = []
    for _ in range(n_items):
        src, offset = _unpack_id(buf, offset)
        item, offset = _unpack_vector(buf, offset)
        items.append((src, item))
    return AggregateState(KINDS_BY_CODE[code], dim, vector, count, tuple(items))


def in_edge_record(message: Message) -> KeyedRecord:
    """IN_EDGE_MSG keyed by the destination: source id, payload tag, body."""
    parts = [_pack_id(message.src)]
    payload: Payload = message.payload
    match payload:
        case Dense(vector):
            parts += [U8.pack(TAG_DENSE), _pack_vector(vector)]
        case Partial(state):
            parts += [U8.pack(TAG_PARTIAL), _pack_state(state)]
        case BroadcastRef():
            parts.append(U8.pack(TAG_REF))
    return KeyedRecord(message.dst, RecordKind.IN_EDGE_MSG, b"".join(parts))


def decode_in_edge(record: KeyedRecord) -> Message:
    try:
        buf = record.payload
        src, offset = _unpack_id(buf, 0)
        (tag,) = U8.unpack_from(buf, offset)
        offset += U8.size
        payload: Payload
        if tag == TAG_DENSE:
            payload = Dense(_unpack_vector(buf, offset)[0])
        elif tag == TAG_PARTIAL:
            payload = Partial(_unpack_state(buf, offset))
        elif tag == TAG_REF:
            payload = BroadcastRef(src)
        else:
            raise ShuffleError(f"unknown message tag {tag}")
    except struct.error as e:
        raise ShuffleError(f"corrupt IN_EDGE_MSG record for {record.key}: {e}") from e
    return Message(record.key, src, payload)


def out_edge_info_record(src: NodeId, dst: NodeId, features: FeatureVector) -> KeyedRecord:
    """OUT_EDGE_INFO keyed by the destination: the edge's features for the receiver."""
    return KeyedRecord(dst, RecordKind.OUT_EDGE_INFO, _pack_id(src) + _pack_vector(features))


def decode_out_edge_info(record: KeyedRecord) -> tuple[NodeId, FeatureVector]:
    try:
        src, offset = _unpack_id(record.payload, 0)
        features, _ = _unpack_vector(record.payload, offset)
    except struct.error as e:
        raise ShuffleError(f"corrupt OUT_EDGE_INFO record for {record.key}: {e}") from e
    return src, features
