"""Comparing output tables and summarizing prediction consistency."""

from collections import Counter
from collections.abc import Mapping, Sequence

import numpy as np
from pydantic import BaseModel, Field

from gasinfer.graph.ids import NodeId
from gasinfer.services.outputs import OutputRow


class ComparisonError(Exception):
    """Two outputs cannot be compared (different node sets or shapes)."""

    pass


class ComparisonReport(BaseModel):
    """Differences between outputs, or class consistency across repeated runs."""

    num_nodes: int = 0
    max_abs_diff: float = 0.0
    mismatched_class_count: int = 0
    atol: float | None = None
    # number of nodes predicted to exactly n distinct classes across runs, keyed by n
    class_count_histogram: dict[int, int] = Field(default_factory=dict)
    num_runs: int = 1

    @property
    def multi_class_nodes(self) -> int:
        return sum(count for n, count in self.class_count_histogram.items() if n > 1)

    @property
    def classes_equal(self) -> bool:
        return self.mismatched_class_count == 0

    @property
    def passed(self) -> bool:
        within = self.atol is None or self.max_abs_diff <= self.atol
        return within and self.classes_equal


def compare_outputs(
    a: Mapping[NodeId, OutputRow], b: Mapping[NodeId, OutputRow], atol: float
) -> ComparisonReport:
    """
    Compare two output tables node by node.

    Raises:
        ComparisonError: If the node-id sets or logit shapes differ.
    """
    if a.keys() != b.keys():
        only_a = sorted(a.keys() - b.keys())[:5]
        only_b = sorted(b.keys() - a.keys())[:5]
        raise ComparisonError(
            f"node sets differ: only in first {[str(n) for n in only_a]}, "
            f"only in second {[str(n) for n in only_b]}"
        )
    max_diff = 0.0
    mismatched = 0
    for node, row in a.items():
        other = b[node]
        if row.logits.shape != other.logits.shape:
            raise ComparisonError(
                f"node {node}: logits of shape {row.logits.shape} vs {other.logits.shape}"
            )
        if row.logits.size:
            diff = np.abs(row.logits.astype(np.float64) - other.logits.astype(np.float64))
            max_diff = max(max_diff, float(diff.max()))
        if row.predicted_class != other.predicted_class:
            mismatched += 1

    return ComparisonReport(
        num_nodes=len(a),
        max_abs_diff=max_diff,
        mismatched_class_count=mismatched,
        atol=atol,
        class_count_histogram=dict(Counter(_distinct_counts([a, b]).values())),
        num_runs=2,
    )


def _distinct_counts(runs: Sequence[Mapping[NodeId, OutputRow]]) -> dict[NodeId, int]:
    seen: dict[NodeId, set[int]] = {}
    for run in runs:
        for node, row in run.items():
            seen.setdefault(node, set()).add(row.predicted_class)
    return {node: len(classes) for node, classes in seen.items()}


def consistency_report(runs: Sequence[Mapping[NodeId, OutputRow]]) -> ComparisonReport:
    """
    Summarize how many distinct classes each node received over repeated runs.

    ``max_abs_diff`` is the largest logit spread of any node across runs and
    ``mismatched_class_count`` the number of nodes predicted to more than one class.
    """
    if not runs:
        return ComparisonReport(num_runs=0)
    first = runs[0]
    for run in runs[1:]:
        if run.keys() != first.keys():
            raise ComparisonError("runs cover different node sets")

    spread = 0.0
    for node in first:
        stacked = np.stack([run[node].logits.astype(np.float64) for run in runs])
        if stacked.size:
            spread = max(spread, float((stacked.max(axis=0) - stacked.min(axis=0)).max()))

    counts = _distinct_counts(runs)
    histogram = dict(sorted(Counter(counts.values()).items()))
    return ComparisonReport(
        num_nodes=len(first),
        max_abs_diff=spread,
        mismatched_class_count=sum(1 for n in counts.values() if n > 1),
        class_count_histogram=histogram,
        num_runs=len(runs),
    )
