"""Output rows of an inference run and their TSV tables."""

from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

from gasinfer.core.logging import get_logger
from gasinfer.graph.ids import NodeId
from gasinfer.graph.tables import format_vector, parse_vector
from gasinfer.nn.linalg import DenseVector
from gasinfer.services.metrics import RunMetrics

logger = get_logger(__name__)


class OutputTableError(Exception):
    """An output table cannot be read or written."""

    pass


@dataclass(frozen=True, slots=True)
class OutputRow:
    """Prediction for one physical node."""

    node_id: NodeId
    predicted_class: int
    logits: DenseVector
    embedding: DenseVector | None = None


@dataclass
class InferenceResult:
    """Rows in ascending node order plus the run's counters."""

    rows: list[OutputRow]
    metrics: RunMetrics

    def by_node(self) -> dict[NodeId, OutputRow]:
        return {row.node_id: row for row in self.rows}


def write_output_table(rows: Iterable[OutputRow], path: Path) -> int:
    """Write ``<id>\\t<class>\\t<logit1,...,logitC>`` lines; returns the row count."""
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as out:
            for row in rows:
                out.write(f"{row.node_id}\t{row.predicted_class}\t{format_vector(row.logits)}\n")
                count += 1
    except OSError as e:
        raise OutputTableError(f"cannot write output table {path}: {e}") from e
    logger.info("output_table_written", path=str(path), rows=count)
    return count


def write_embeddings(rows: Iterable[OutputRow], path: Path) -> int:
    """Write ``<id>\\t<h1,...,hD>`` lines for rows that carry an embedding."""
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as out:
            for row in rows:
                if row.embedding is None:
                    continue
                out.write(f"{row.node_id}\t{format_vector(row.embedding)}\n")
                count += 1
    except OSError as e:
        raise OutputTableError(f"cannot write embeddings {path}: {e}") from e
    logger.info("embeddings_written", path=str(path), rows=count)
    return count


def read_output_table(path: Path) -> dict[NodeId, OutputRow]:
    """
    Read an output table.

    Raises:
        OutputTableError: On IO errors, malformed or duplicate lines.
    """
    rows: dict[NodeId, OutputRow] = {}
    try:
        with path.open(encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise OutputTableError(f"{path}:{number}: expected 3 columns, got {len(parts)}")
                try:
                    node_id = NodeId.parse(parts[0])
                    row = OutputRow(node_id, int(parts[1]), parse_vector(parts[2]))
                except ValueError as e:
                    raise OutputTableError(f"{path}:{number}: {e}") from e
                if node_id in rows:
                    raise OutputTableError(f"{path}:{number}: duplicate node {node_id}")
                rows[node_id] = row
    except OSError as e:
        raise OutputTableError(f"cannot read output table {path}: {e}") from e
    return rows

