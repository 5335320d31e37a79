"""Stage markers and the per-layer signature recorded with a saved model."""

from collections.abc import Callable
from dataclasses import dataclass
from enum import Enum
from typing import Any, TypeVar

from pydantic import BaseModel, Field, model_validator

from gasinfer.core.models import AggregateKind, Strategy

F = TypeVar("F", bound=Callable[..., Any])

STAGE_ATTR = "__gas_stage__"


class Stage(str, Enum):
    """The computation stages of a layer; the backends move data between neighbors."""

    AGGREGATE = "aggregate"
    APPLY_NODE = "apply_node"
    APPLY_EDGE = "apply_edge"


@dataclass(frozen=True)
class StageMark:
    """Metadata attached to a stage method by ``@stage``."""

    stage: Stage
    partial: bool = False
    uniform: bool = False
    broadcast: bool = False
    shadow: bool = False


def stage(
    name: Stage,
    *,
    partial: bool = False,
    uniform: bool = False,
    broadcast: bool = False,
    shadow: bool = False,
) -> Callable[[F], F]:
    """
    Mark a layer method as the implementation of a stage.

    Args:
        name: The stage the method implements.
        partial: The aggregate may run on partial message sets (enables partial-gather).
        uniform: ``apply_edge`` yields the same payload for every out-edge.
        broadcast: Enable the broadcast strategy by default.
        shadow: Enable the shadow-nodes strategy by default.
    """

    def decorator(fn: F) -> F:
        setattr(fn, STAGE_ATTR, StageMark(name, partial, uniform, broadcast, shadow))
        return fn

    return decorator


def stage_marks(cls: type) -> dict[Stage, StageMark]:
    """Collect the stage marks of a layer class (subclass overrides win)."""
    marks: dict[Stage, StageMark] = {}
    for klass in reversed(cls.__mro__):
        for attr in vars(klass).values():
            mark = getattr(attr, STAGE_ATTR, None)
            if isinstance(mark, StageMark):
                marks[mark.stage] = mark
    return marks


class LayerSignature(BaseModel):
    """Stage annotations and strategy switches of one layer."""

    aggregate_kind: AggregateKind
    size_reducing: bool
    message_uniform: bool
    partial_gather: bool = False
    broadcast: bool = False
    shadow_nodes: bool = False
    in_edge_features: bool = False
    input_dim: int = Field(ge=1)
    output_dim: int = Field(ge=1)
    message_dim: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_eligibility(self) -> "LayerSignature":
        if self.size_reducing != self.aggregate_kind.size_reducing:
            raise ValueError(
                f"aggregate {self.aggregate_kind.value} has size_reducing="
                f"{self.aggregate_kind.size_reducing}"
            )
        if self.partial_gather and not self.size_reducing:
            raise ValueError("partial_gather requires a size-reducing aggregate")
        if self.broadcast and not self.message_uniform:
            raise ValueError("broadcast requires messages uniform over out-edges")
        return self

    @property
    def strategies(self) -> frozenset[Strategy]:
        enabled = set()
        if self.partial_gather:
            enabled.add(Strategy.PARTIAL_GATHER)
        if self.broadcast:
            enabled.add(Strategy.BROADCAST)
        if self.shadow_nodes:
            enabled.add(Strategy.SHADOW_NODES)
        return frozenset(enabled)

    def eligible(self, requested: frozenset[Strategy]) -> frozenset[Strategy]:
        """The requested strategies this layer can run without changing results."""
        allowed = set(requested)
        if not self.size_reducing:
            allowed.discard(Strategy.PARTIAL_GATHER)
        if not self.message_uniform:
            allowed.discard(Strategy.BROADCAST)
        return frozenset(allowed)

    def with_strategies(self, requested: frozenset[Strategy]) -> "LayerSignature":
        enabled = self.eligible(requested)
        return self.model_copy(
            update={
                "partial_gather": Strategy.PARTIAL_GATHER in enabled,
                "broadcast": Strategy.BROADCAST in enabled,
                "shadow_nodes": Strategy.SHADOW_NODES in enabled,
            }
        )
