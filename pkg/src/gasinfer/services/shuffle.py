"""Disk-backed sort-merge shuffle.

Every emitting task buffers its output records, sorts them by (reducer, key, kind, src)
and spills the buffer to a run file whenever it outgrows the memory budget. A run file
holds one contiguous segment per reducer; reducers k-way merge their segment of every
run and stream the result grouped by key.
"""

import heapq
import itertools
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

from gasinfer.core.logging import get_logger
from gasinfer.graph.ids import NodeId
from gasinfer.graph.partition import partition_of
from gasinfer.services.records import KeyedRecord, ShuffleError, read_record

logger = get_logger(__name__)

# maximum number of runs opened by one merge pass
MERGE_FACTOR = 64

Combiner = Callable[[NodeId, list[KeyedRecord]], tuple[list[KeyedRecord], int]]
KeyGroup = tuple[NodeId, list[KeyedRecord]]

__all__ = [
    "MERGE_FACTOR",
    "Combiner",
    "KeyGroup",
    "Segment",
    "ShuffleError",
    "SpillRun",
    "SpillWriter",
    "TaskOutput",
    "group_by_key",
    "merge_segment",
    "shuffle",
]


@dataclass(frozen=True)
class Segment:
    """A reducer's slice of a run file."""

    offset: int
    length: int
    records: int


@dataclass(frozen=True)
class SpillRun:
    """A sorted run file with its per-reducer segment index."""

    path: Path
    record_count: int
    byte_size: int
    segments: dict[int, Segment]

    def read_segment(self, reducer: int) -> Iterator[KeyedRecord]:
        """
        Stream the records of one reducer's segment.

        Raises:
            ShuffleError: If the file is missing, truncated or inconsistent with its index.
        """
        segment = self.segments.get(reducer)
        if segment is None or segment.records == 0:
            return
        try:
            with self.path.open("rb") as handle:
                handle.seek(segment.offset)
                consumed = 0
                for _ in range(segment.records):
                    record = read_record(handle)
                    if record is None:
                        raise ShuffleError(f"{self.path}: segment {reducer} ends early")
                    consumed += record.size
                    yield record
                if consumed != segment.length:
                    raise ShuffleError(f"{self.path}: segment {reducer} length mismatch")
        except OSError as e:
            raise ShuffleError(f"cannot read run file {self.path}: {e}") from e

    def delete(self) -> None:
        self.path.unlink(missing_ok=True)


def write_run(path: Path, records: Iterable[tuple[int, KeyedRecord]]) -> SpillRun:
    """
    Write (reducer, record) pairs, already sorted by reducer then sort key, as a run.

    Raises:
        ShuffleError: If the file cannot be written (e.g. disk full).
    """
    segments: dict[int, Segment] = {}
    offset = 0
    total = 0
    try:
        with path.open("wb") as out:
            for reducer, group in itertools.groupby(records, key=lambda item: item[0]):
                start = offset
                count = 0
                for _, record in group:
                    data = record.encode()
                    out.write(data)
                    offset += len(data)
                    count += 1
                segments[reducer] = Segment(start, offset - start, count)
                total += count
    except OSError as e:
        raise ShuffleError(f"cannot write run file {path}: {e}") from e
    return SpillRun(path, total, offset, segments)


def merge_segment(runs: list[SpillRun], reducer: int) -> Iterator[KeyedRecord]:
    """K-way merge one reducer's segment of every run, preserving (key, kind, src) order."""
    return heapq.merge(*(run.read_segment(reducer) for run in runs), key=lambda r: r.sort_key)


def group_by_key(records: Iterable[KeyedRecord]) -> Iterator[KeyGroup]:
    """Group a sorted record stream by key; only one group is resident at a time."""
    for key, group in itertools.groupby(records, key=lambda r: r.key):
        yield key, list(group)


def compact_runs(
    runs: list[SpillRun], reducers: Iterable[int], path_for: Callable[[], Path]
) -> list[SpillRun]:
    """Merge runs in passes of MERGE_FACTOR until at most MERGE_FACTOR remain."""
    ordered = sorted(reducers)
    while len(runs) > MERGE_FACTOR:
        merged: list[SpillRun] = []
        for batch_start in range(0, len(runs), MERGE_FACTOR):
            batch = runs[batch_start : batch_start + MERGE_FACTOR]
            if len(batch) == 1:
                merged.append(batch[0])
                continue
            stream = (
                (reducer, record)
                for reducer in ordered
                for record in merge_segment(batch, reducer)
            )
            merged.append(write_run(path_for(), stream))
            for run in batch:
                run.delete()
        runs = merged
    return runs


@dataclass
class TaskOutput:
    """The runs one emitting task leaves for the reducers, plus its counters."""

    task_id: int
    runs: list[SpillRun] = field(default_factory=list)
    records_out: int = 0
    bytes_out: int = 0
    combiner_savings: int = 0
    spills: int = 0


class SpillWriter:
    """
    Map-output buffer of one emitting task.

    With a combiner the task's runs are merged once more at close and every key group is
    passed through the combiner, so the final output does not depend on how often the
    buffer spilled.
    """

    def __init__(
        self,
        task_id: int,
        num_reducers: int,
        spill_dir: Path,
        memory_budget_bytes: int = 0,
        combiner: Combiner | None = None,
        prefix: str = "run",
    ) -> None:
        """
        Initialize the writer.

        Args:
            task_id: Emitting task index (part of run file names).
            num_reducers: R; records go to reducer partition_of(key, R).
            spill_dir: Directory for run files.
            memory_budget_bytes: Buffer size that triggers a spill; 0 means unlimited.
            combiner: Optional per-key combiner applied at close.
            prefix: Run file name prefix (e.g. the round).
        """
        if num_reducers < 1:
            raise ValueError(f"num_reducers must be >= 1, got {num_reducers}")
        self.task_id = task_id
        self.num_reducers = num_reducers
        self.spill_dir = spill_dir
        self.memory_budget_bytes = memory_budget_bytes
        self.combiner = combiner
        self.prefix = prefix
        self._buffer: list[tuple[int, KeyedRecord]] = []
        self._buffered_bytes = 0
        self._runs: list[SpillRun] = []
        self._names = itertools.count()

    def _path(self, kind: str) -> Path:
        name = f"{self.prefix}-t{self.task_id:04d}-{kind}{next(self._names):05d}.run"
        return self.spill_dir / name

    def add(self, record: KeyedRecord) -> None:
        self._buffer.append((partition_of(record.key, self.num_reducers), record))
        self._buffered_bytes += record.size
        if 0 < self.memory_budget_bytes <= self._buffered_bytes:
            self._spill()

    def extend(self, records: Iterable[KeyedRecord]) -> None:
        for record in records:
            self.add(record)

    def _spill(self) -> None:
        if not self._buffer:
            return
        self._buffer.sort(key=lambda item: (item[0], item[1].sort_key))
        run = write_run(self._path("s"), self._buffer)
        self._runs.append(run)
        logger.debug(
            "spill_run_written",
            task=self.task_id,
            path=str(run.path),
            records=run.record_count,
            bytes=run.byte_size,
        )
        self._buffer = []
        self._buffered_bytes = 0

    def close(self) -> TaskOutput:
        """Flush the buffer and return the task's final runs."""
        self._spill()
        output = TaskOutput(task_id=self.task_id, spills=len(self._runs))
        runs = compact_runs(self._runs, range(self.num_reducers), lambda: self._path("m"))

        if self.combiner is not None and runs:
            combiner = self.combiner
            savings = 0

            def combined() -> Iterator[tuple[int, KeyedRecord]]:
                nonlocal savings
                for reducer in range(self.num_reducers):
                    for key, group in group_by_key(merge_segment(runs, reducer)):
                        records, saved = combiner(key, group)
                        savings += saved
                        for record in records:
                            yield reducer, record

            final = write_run(self._path("c"), combined())
            for run in runs:
                run.delete()
            runs = [final]
            output.combiner_savings = savings

        output.runs = [run for run in runs if run.record_count > 0]
        for run in runs:
            if run.record_count == 0:
                run.delete()
        output.records_out = sum(run.record_count for run in output.runs)
        output.bytes_out = sum(run.byte_size for run in output.runs)
        return output


def shuffle(
    records: Iterable[KeyedRecord],
    spill_dir: Path,
    memory_budget_bytes: int = 0,
    combiner: Combiner | None = None,
) -> Iterator[KeyGroup]:
    """
    Externally sort a record stream and yield (key, records) groups in ascending key order.

    Run files are removed once the stream is exhausted.
    """
    writer = SpillWriter(0, 1, spill_dir, memory_budget_bytes, combiner, prefix="shuffle")
    writer.extend(records)
    output = writer.close()
    try:
        yield from group_by_key(merge_segment(output.runs, 0))
    finally:
        for run in output.runs:
            run.delete()
