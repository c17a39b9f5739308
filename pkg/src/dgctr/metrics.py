"""AUC / logloss evaluation and the sparsity slice reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def auc(scores, labels) -> float:
    """Rank-based AUC with midrank tie handling.

    Equals the pairwise definition where ties contribute 0.5.  Requires at
    least one positive and one negative.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined for single-class input")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < sorted_scores.shape[0]:
        j = i
        while j + 1 < sorted_scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    pos_rank_sum = float(ranks[np.asarray(labels) == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def eval_logloss(scores, labels) -> float:
    """Mean binary cross-entropy (same formula as the training objective)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape[0] == 0:
        raise MetricError("logloss of an empty set is undefined")
    return float(
        -np.mean(labels * np.log(scores) + (1 - labels) * np.log(1 - scores))
    )


@dataclass
class EvalReport:
    auc: float | None
    logloss: float | None
    n_pos: int
    n_neg: int
    slices: dict[str, "EvalReport"] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.n_pos + self.n_neg

    def to_dict(self) -> dict:
        d = {
            "auc": self.auc,
            "logloss": self.logloss,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }
        if self.slices:
            d["slices"] = {k: v.to_dict() for k, v in self.slices.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(scores, labels) -> EvalReport:
    """Report over one score/label set; AUC is None for single-class input
    (slice reports hit this), logloss None when empty."""
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(labels.shape[0] - n_pos)
    if labels.shape[0] == 0:
        return EvalReport(None, None, 0, 0)
    try:
        a = auc(scores, labels)
    except MetricError:
        a = None
    return EvalReport(a, eval_logloss(scores, labels), n_pos, n_neg)


def _bucket_name(lo: float, hi: float) -> str:
    hi_s = "inf" if np.isinf(hi) else f"{int(hi)}"
    return f"[{int(lo)},{hi_s})"


DEFAULT_FREQ_BUCKETS = [(1, 10), (10, 100), (100, float("inf"))]
DEFAULT_LEN_BUCKETS = [(1, 5), (5, 20), (20, float("inf"))]


def _instance_features(inst) -> list[int]:
    # behaviors are excluded: they are item ids already counted as features
    # only when they occur in the target slot
    return (
        [inst.user, inst.item]
        + list(inst.user_attrs)
        + list(inst.item_attrs)
        + list(inst.context)
    )


def slice_by_feature_frequency(
    instances, scores, labels, frequency: np.ndarray, buckets=None
) -> EvalReport:
    """Per-bucket metrics over test instances containing at least one
    feature whose training frequency falls in the bucket (half-open
    [lo, hi)); an instance can land in several buckets."""
    buckets = buckets or DEFAULT_FREQ_BUCKETS
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    report = evaluate(scores, labels)
    for lo, hi in buckets:
        member = np.array(
            [
                any(lo <= frequency[f] < hi for f in _instance_features(inst))
                for inst in instances
            ],
            dtype=bool,
        )
        report.slices[_bucket_name(lo, hi)] = evaluate(
            scores[member], labels[member]
        )
    return report


def slice_by_behavior_length(
    instances, scores, labels, buckets=None
) -> EvalReport:
    """Per-bucket metrics keyed by the instance's behavior-sequence length
    (half-open buckets)."""
    buckets = buckets or DEFAULT_LEN_BUCKETS
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    lens = np.array([len(inst.behaviors) for inst in instances])
    report = evaluate(scores, labels)
    for lo, hi in buckets:
        member = (lens >= lo) & (lens < hi)
        report.slices[_bucket_name(lo, hi)] = evaluate(
            scores[member], labels[member]
        )
    return report


def slice_table(report: EvalReport, delimiter: str = "\t") -> str:
    """Delimited per-bucket table (bucket, count, n_pos, auc, logloss)."""
    lines = [delimiter.join(["bucket", "count", "n_pos", "auc", "logloss"])]
    for name, r in report.slices.items():
        lines.append(
            delimiter.join(
                [
                    name,
                    str(r.count),
                    str(r.n_pos),
                    "" if r.auc is None else f"{r.auc:.6f}",
                    "" if r.logloss is None else f"{r.logloss:.6f}",
                ]
            )
        )
    return "\n".join(lines) + "\n"
