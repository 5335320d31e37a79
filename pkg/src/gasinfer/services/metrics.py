"""Per-worker, per-step communication counters and their CSV/JSON export."""

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from pydantic import TypeAdapter, ValidationError

from gasinfer.core.logging import get_logger

logger = get_logger(__name__)


class MetricsError(Exception):
    """Metrics cannot be read or written."""

    pass


@dataclass
class StepMetrics:
    """Counters of one worker (or task) in one superstep (or round)."""

    worker: int
    step: int
    msgs_in: int = 0
    msgs_out: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    wall_ms: float = 0.0
    combiner_savings: int = 0
    broadcast_payloads: int = 0
    max_inbound_per_node: int = 0


COUNTER_COLUMNS = tuple(f.name for f in fields(StepMetrics) if f.name not in ("worker", "step"))
CSV_COLUMNS = ("row", "worker", "step", *COUNTER_COLUMNS)

TAIL_FRACTION = 0.1


@dataclass
class RunMetrics:
    """All counters of one inference run."""

    backend: str
    num_workers: int
    num_layers: int
    strategies: list[str] = field(default_factory=list)
    threshold: int | None = None
    peak_group_records: int = 0
    spill_runs: int = 0
    rows: list[StepMetrics] = field(default_factory=list)

    @property
    def steps(self) -> list[int]:
        return sorted({r.step for r in self.rows})

    def step_total(self, step: int, counter: str) -> float:
        return sum(getattr(r, counter) for r in self.rows if r.step == step)

    def total(self, counter: str) -> float:
        return sum(getattr(r, counter) for r in self.rows)

    def max_inbound(self) -> int:
        return max((r.max_inbound_per_node for r in self.rows), default=0)

    def conservation_violations(self) -> list[int]:
        """Steps t where messages sent in t differ from messages received in t + 1."""
        steps = self.steps
        return [
            t
            for t in steps[:-1]
            if self.step_total(t, "msgs_out") != self.step_total(t + 1, "msgs_in")
        ]

    def per_worker(self, counter: str) -> dict[int, float]:
        totals: dict[int, float] = defaultdict(float)
        for r in self.rows:
            totals[r.worker] += getattr(r, counter)
        return dict(totals)

    def tail_workers(self) -> list[int]:
        """The top decile of workers by input bytes (at least one worker)."""
        by_bytes = self.per_worker("bytes_in")
        count = max(1, math.ceil(TAIL_FRACTION * len(by_bytes)))
        ranked = sorted(by_bytes, key=lambda w: (-by_bytes[w], w))
        return ranked[:count]

    def tail_mean(self, counter: str) -> float:
        tail = self.tail_workers()
        if not tail:
            return 0.0
        totals = self.per_worker(counter)
        return sum(totals[w] for w in tail) / len(tail)

    def sorted_rows(self) -> list[StepMetrics]:
        return sorted(self.rows, key=lambda r: (r.step, r.worker))


_RUN_METRICS = TypeAdapter(RunMetrics)


def save_metrics_json(metrics: RunMetrics, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(_RUN_METRICS.dump_json(metrics, indent=1))
    except OSError as e:
        raise MetricsError(f"cannot write metrics to {path}: {e}") from e


def load_metrics_json(path: Path) -> RunMetrics:
    try:
        return _RUN_METRICS.validate_json(path.read_bytes())
    except OSError as e:
        raise MetricsError(f"cannot read metrics from {path}: {e}") from e
    except ValidationError as e:
        raise MetricsError(f"invalid metrics file {path}: {e}") from e


def export_metrics(metrics: RunMetrics, path: Path) -> Path:
    """
    Write one CSV row per (worker, step), then a ``total`` row and a ``tail`` row.

    The tail row holds per-worker means over the top decile of workers ranked by input
    bytes.

    Raises:
        MetricsError: If the file cannot be written.
    """
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as out:
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in metrics.sorted_rows():
                data = asdict(r)
                writer.writerow(["step", r.worker, r.step, *(data[c] for c in COUNTER_COLUMNS)])
            writer.writerow(
                [
                    "total",
                    "",
                    "",
                    *(
                        metrics.max_inbound() if c == "max_inbound_per_node" else metrics.total(c)
                        for c in COUNTER_COLUMNS
                    ),
                ]
            )
            tail = metrics.tail_workers()
            writer.writerow(
                [
                    "tail",
                    ";".join(str(w) for w in tail),
                    "",
                    *(metrics.tail_mean(c) for c in COUNTER_COLUMNS),
                ]
            )
    except OSError as e:
        raise MetricsError(f"cannot write metrics CSV {path}: {e}") from e

    logger.info("metrics_exported", path=str(path), rows=len(metrics.rows))
    return path
