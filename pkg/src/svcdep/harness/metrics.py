"""Precision, recall, F1 and the metrics report."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    discovered_edges: int
    ground_truth_edges: int
    correct_edges: int
    time_to_completion: Optional[int] = None
    unpaired_events: int = 0
    scenario: str = ""
    agent: str = ""
    undiscoverable_edges: list = field(default_factory=list)
    missing_edges: list = field(default_factory=list)
    spurious_edges: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("precision", "recall", "f1"):
            if isinstance(d[k], float) and math.isnan(d[k]):
                d[k] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _edge_str(e) -> str:
    if isinstance(e, frozenset):
        return " -- ".join(sorted(e))
    return f"{e[0]} -> {e[1]}"


def compute_metrics(found: Iterable, truth: Iterable) -> MetricsReport:
    """Score a found edge set against ground truth.

    Edges are (caller, callee) tuples, or frozensets for undirected scoring.
    Precision is NaN when nothing was found; F1 is NaN when either input
    metric is NaN or both are zero.
    """
    found, truth = set(found), set(truth)
    correct = found & truth
    precision = _ratio(len(correct), len(found))
    recall = _ratio(len(correct), len(truth))
    if math.isnan(precision) or math.isnan(recall) or precision + recall == 0:
        f1 = math.nan
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        discovered_edges=len(found),
        ground_truth_edges=len(truth),
        correct_edges=len(correct),
        missing_edges=sorted(_edge_str(e) for e in truth - found),
        spurious_edges=sorted(_edge_str(e) for e in found - truth),
    )


def fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "NaN"
    return f"{value:.2f}"
