"""Shared enums and validated run configuration."""

from enum import Enum
from pathlib import Path

from pydantic import BaseModel, Field, model_validator


class Algorithm(str, Enum):
    """Built-in GNN layer families."""

    SAGE = "sage"
    GAT = "gat"
    GCN = "gcn"


class AggregateKind(str, Enum):
    """Reductions allowed in the aggregate stage (commutative and associative)."""

    SUM_COUNT = "sum_count"
    MAX = "max"
    MIN = "min"
    UNION = "union"

    @property
    def size_reducing(self) -> bool:
        """Whether merging two states yields a state of constant size."""
        return self is not AggregateKind.UNION


class Strategy(str, Enum):
    """Hub-node load-balancing strategies."""

    PARTIAL_GATHER = "pg"
    BROADCAST = "bc"
    SHADOW_NODES = "sn"


class Backend(str, Enum):
    """Execution backends."""

    PREGEL = "pregel"
    MAPREDUCE = "mr"


class SkewMode(str, Enum):
    """Which degree side of a synthetic graph follows the power law."""

    IN = "in"
    OUT = "out"
    BOTH = "both"


class InferenceConfig(BaseModel):
    """Options for one full-graph inference run."""

    backend: Backend = Backend.PREGEL
    num_workers: int = Field(default=1, ge=1)
    strategies: frozenset[Strategy] | None = None  # None = use the model's signature flags
    hub_lambda: float = Field(default=0.1, gt=0.0)
    threshold_override: int | None = Field(default=None, ge=1)
    memory_budget_bytes: int = Field(default=0, ge=0)  # 0 = unlimited
    spill_dir: Path | None = None
    parallel_workers: int = Field(default=1, ge=1)
    worker_order: list[int] | None = None
    emit_embeddings: bool = False

    @model_validator(mode="after")
    def _check_worker_order(self) -> "InferenceConfig":
        if self.worker_order is not None and sorted(self.worker_order) != list(
            range(self.num_workers)
        ):
            raise ValueError("worker_order must be a permutation of range(num_workers)")
        return self
