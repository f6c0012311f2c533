"""Ranking and classification metrics over ranked relevance flags.

Rank-cutoff metrics consume, per query, the binary relevance flags in
predicted rank order (position 0 = top-ranked item).  Queries without any
relevant item are skipped where a denominator would be undefined, and the
skip count is surfaced in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricsReport",
    "mrr_at_k",
    "map_at_k",
    "precision_recall_at_k",
    "auc_roc",
    "accuracy_at_threshold",
    "retention_threshold",
]


def _as_flag_lists(ranked_flags) -> list[np.ndarray]:
    return [np.asarray(flags, dtype=np.float64) for flags in ranked_flags]


def mrr_at_k(ranked_flags, k: int) -> float:
    """Mean reciprocal rank of the first relevant item within the top k.

    A query whose first relevant item falls outside the top k contributes
    zero; queries with no relevant item at all are skipped.
    """
    if k < 1:
        raise ValueError("k must be positive")
    flags = _as_flag_lists(ranked_flags)
    if not flags:
        raise ValueError("no queries given")
    values = []
    for query_flags in flags:
        hits = np.flatnonzero(query_flags)
        if hits.size == 0:
            continue
        first = hits[0]
        values.append(1.0 / (first + 1) if first < k else 0.0)
    if not values:
        raise ValueError("every query lacks relevant items")
    return float(np.mean(values))


def map_at_k(ranked_flags, k: int) -> float:
    """Mean average precision with the cutoff applied inside the sum.

    Average precision divides by the query's total relevant count (not
    capped at k); queries with no relevant item are skipped.
    """
    if k < 1:
        raise ValueError("k must be positive")
    values = []
    for query_flags in _as_flag_lists(ranked_flags):
        total_relevant = int(query_flags.sum())
        if total_relevant == 0:
            continue
        hits = 0
        ap = 0.0
        for position, flag in enumerate(query_flags[:k], start=1):
            if flag:
                hits += 1
                ap += hits / position
        values.append(ap / total_relevant)
    if not values:
        raise ValueError("every query lacks relevant items")
    return float(np.mean(values))


def precision_recall_at_k(ranked_flags, k: int) -> tuple[float, float]:
    """Precision and recall of the top k, averaged over queries.

    Precision treats zero-relevant queries as contributing 0; recall
    skips them (its denominator would be undefined).
    """
    if k < 1:
        raise ValueError("k must be positive")
    precisions = []
    recalls = []
    for query_flags in _as_flag_lists(ranked_flags):
        in_top = float(query_flags[:k].sum())
        precisions.append(in_top / k)
        total = float(query_flags.sum())
        if total > 0:
            recalls.append(in_top / total)
    if not precisions or not recalls:
        raise ValueError("need at least one query with a relevant item")
    return float(np.mean(precisions)), float(np.mean(recalls))


def auc_roc(scores, labels) -> float:
    """Probability a random positive outscores a random negative.

    Rank-sum estimator; tied scores count half.  Both classes must be
    present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(labels.size)
    sorted_scores = scores[order]
    # average ranks across tie groups
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy_at_threshold(scores, labels, threshold: float
                          ) -> tuple[float | None, float]:
    """(negative accuracy, overall accuracy) when predicting score >= t.

    Negative accuracy is the fraction of negatives scored strictly below
    the threshold, or None when there are no negatives.
    """
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    predicted = scores >= threshold
    correct = predicted == labels
    overall = float(correct.mean())
    negatives = ~labels
    if not negatives.any():
        return None, overall
    return float((scores[negatives] < threshold).mean()), overall


def retention_threshold(scores, labels, fraction: float) -> float:
    """Largest threshold keeping at least ``fraction`` of positives.

    "Keeping" means score >= threshold, so feeding the result back into
    accuracy_at_threshold retains the requested share of positives.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos = np.sort(scores[labels])[::-1]
    if pos.size == 0:
        raise ValueError("no positives to retain")
    need = int(np.ceil(fraction * pos.size))
    return float(pos[need - 1])


@dataclass(frozen=True)
class MetricsReport:
    """One evaluation run's metrics, with CSV and JSON emitters."""

    map_at_k: dict[int, float]
    mrr_at_k: dict[int, float]
    precision_at_k: dict[int, float]
    recall_at_k: dict[int, float]
    auc: float | None
    negative_accuracy: float | None
    overall_accuracy: float | None
    threshold: float | None
    query_count: int
    skipped_queries: int = 0
    extra: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "map_at_k": {str(k): v for k, v in self.map_at_k.items()},
            "mrr_at_k": {str(k): v for k, v in self.mrr_at_k.items()},
            "precision_at_k": {str(k): v
                               for k, v in self.precision_at_k.items()},
            "recall_at_k": {str(k): v for k, v in self.recall_at_k.items()},
            "auc": self.auc,
            "negative_accuracy": self.negative_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "threshold": self.threshold,
            "query_count": self.query_count,
            "skipped_queries": self.skipped_queries,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    def csv_header(self) -> str:
        cols = [f"map@{k}" for k in sorted(self.map_at_k)]
        cols += [f"mrr@{k}" for k in sorted(self.mrr_at_k)]
        cols += [f"p@{k}" for k in sorted(self.precision_at_k)]
        cols += [f"r@{k}" for k in sorted(self.recall_at_k)]
        cols += ["auc", "negative_accuracy", "overall_accuracy",
                 "threshold", "query_count", "skipped_queries"]
        return ",".join(cols)

    def csv_row(self) -> str:
        def fmt(x):
            return "" if x is None else f"{x:.6f}"

        vals = [fmt(self.map_at_k[k]) for k in sorted(self.map_at_k)]
        vals += [fmt(self.mrr_at_k[k]) for k in sorted(self.mrr_at_k)]
        vals += [fmt(self.precision_at_k[k])
                 for k in sorted(self.precision_at_k)]
        vals += [fmt(self.recall_at_k[k]) for k in sorted(self.recall_at_k)]
        vals += [fmt(self.auc), fmt(self.negative_accuracy),
                 fmt(self.overall_accuracy), fmt(self.threshold),
                 str(self.query_count), str(self.skipped_queries)]
        return ",".join(vals)
