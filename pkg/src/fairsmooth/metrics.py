"""Accuracy and group-fairness metrics.

Predictions are probabilities in [0, 1]; the decision threshold is 0.5 and
a prediction of exactly 0.5 counts as positive.  Demographic parity
disparity is the largest pairwise gap in positive-prediction rates;
equalized odds disparity aggregates the true- and false-positive-rate gaps
with max by default (sum and mean variants are available for comparison
with conventions that add the two gaps).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

EO_AGGREGATIONS = ("max", "sum", "mean")


def _as_predictions(preds) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 1 or preds.size == 0:
        raise ValueError("predictions must be a non-empty 1-d array")
    return preds


def threshold_positive(preds) -> np.ndarray:
    """Hard decisions at 0.5; ties are classified positive."""
    return _as_predictions(preds) >= 0.5


def accuracy(preds, labels) -> float:
    """Fraction of thresholded predictions matching the binary labels."""
    preds = _as_predictions(preds)
    labels = np.asarray(labels)
    if labels.shape != preds.shape:
        raise ValueError(
            f"predictions and labels must match: {preds.shape} vs {labels.shape}"
        )
    return float(np.mean(threshold_positive(preds) == (labels == 1)))


def _group_ids(groups, preds) -> np.ndarray:
    groups = np.asarray(groups)
    if groups.shape != preds.shape:
        raise ValueError(
            f"predictions and groups must match: {preds.shape} vs {groups.shape}"
        )
    return groups


def positive_rates(preds, groups, n_groups: int | None = None) -> dict:
    preds = _as_predictions(preds)
    groups = _group_ids(groups, preds)
    present = np.unique(groups)
    ids = present if n_groups is None else np.arange(n_groups)
    rates = {}
    hard = threshold_positive(preds)
    for gid in ids:
        mask = groups == gid
        if not np.any(mask):
            raise ValueError(f"group {gid} has no members")
        rates[int(gid)] = float(np.mean(hard[mask]))
    return rates


def delta_dp(preds, groups, n_groups: int | None = None) -> float:
    """Largest pairwise gap in positive-prediction rates across groups."""
    rates = positive_rates(preds, groups, n_groups)
    if len(rates) < 2:
        raise ValueError(f"need at least two groups, got {len(rates)}")
    values = list(rates.values())
    return float(max(values) - min(values))


def group_confusion_rates(preds, labels, groups, n_groups: int | None = None) -> dict:
    """Per-group (positive_rate, tpr, fpr, count); rejects degenerate groups."""
    preds = _as_predictions(preds)
    labels = np.asarray(labels)
    groups = _group_ids(groups, preds)
    hard = threshold_positive(preds)
    present = np.unique(groups)
    ids = present if n_groups is None else np.arange(n_groups)
    out = {}
    for gid in ids:
        mask = groups == gid
        if not np.any(mask):
            raise ValueError(f"group {gid} has no members")
        y = labels[mask] == 1
        h = hard[mask]
        pos, neg = int(y.sum()), int((~y).sum())
        if pos == 0 or neg == 0:
            raise ValueError(
                f"group {gid} is degenerate: {pos} positive and {neg} negative labels"
            )
        out[int(gid)] = {
            "positive_rate": float(h.mean()),
            "tpr": float(h[y].mean()),
            "fpr": float(h[~y].mean()),
            "count": int(mask.sum()),
        }
    return out


def delta_eo(preds, labels, groups, n_groups: int | None = None, aggregation: str = "max") -> float:
    """Largest pairwise equalized-odds gap across groups.

    Each pair contributes max(|TPR_i - TPR_j|, |FPR_i - FPR_j|) under the
    default aggregation; ``sum`` and ``mean`` combine the two gaps instead.
    """
    if aggregation not in EO_AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}; expected one of {EO_AGGREGATIONS}")
    rates = group_confusion_rates(preds, labels, groups, n_groups)
    ids = sorted(rates)
    if len(ids) < 2:
        raise ValueError(f"need at least two groups, got {len(ids)}")
    worst = 0.0
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            tpr_gap = abs(rates[a]["tpr"] - rates[b]["tpr"])
            fpr_gap = abs(rates[a]["fpr"] - rates[b]["fpr"])
            if aggregation == "max":
                gap = max(tpr_gap, fpr_gap)
            elif aggregation == "sum":
                gap = tpr_gap + fpr_gap
            else:
                gap = 0.5 * (tpr_gap + fpr_gap)
            worst = max(worst, gap)
    return float(worst)


def epsilon_fairness(h_preds, hk_preds, p: float) -> float:
    """Measured output gap between the overall and one group classifier on
    that group's sample set, in the L^p sense.

    For p = inf this is the max absolute gap; for finite p >= 1 it is
    |S|^{-1} (sum |h - h_k|^p)^{1/p} over the finite sample set S.
    """
    h = _as_predictions(h_preds)
    hk = _as_predictions(hk_preds)
    if h.shape != hk.shape:
        raise ValueError(f"prediction vectors must match: {h.shape} vs {hk.shape}")
    if p < 1:
        raise ValueError(f"exponent must satisfy p >= 1, got {p}")
    gaps = np.abs(h - hk)
    if math.isinf(p):
        return float(gaps.max())
    n = gaps.size
    return float((gaps**p).sum() ** (1.0 / p) / n)


@dataclass
class EvaluationReport:
    """One evaluation of a classifier on one (sub)set of rows."""

    accuracy: float
    delta_dp: float
    delta_eo: float
    per_group: dict
    n_rows: int
    epsilon_fairness: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for value in (self.accuracy, self.delta_dp, self.delta_eo):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"rates must lie in [0, 1], got {value}")
        if sum(g["count"] for g in self.per_group.values()) != self.n_rows:
            raise ValueError("per-group counts must sum to the row count")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "accuracy": self.accuracy,
            "delta_dp": self.delta_dp,
            "delta_eo": self.delta_eo,
            "n_rows": self.n_rows,
            "per_group": {str(k): v for k, v in self.per_group.items()},
            "epsilon_fairness": {str(k): v for k, v in self.epsilon_fairness.items()},
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @staticmethod
    def csv_header() -> str:
        return "n_rows,accuracy,delta_dp,delta_eo"

    def csv_row(self) -> str:
        return f"{self.n_rows},{self.accuracy:.6f},{self.delta_dp:.6f},{self.delta_eo:.6f}"


def evaluate_predictions(preds, labels, groups, n_groups: int | None = None) -> EvaluationReport:
    """Assemble the full report from precomputed probability predictions."""
    preds = _as_predictions(preds)
    per_group = group_confusion_rates(preds, labels, groups, n_groups)
    return EvaluationReport(
        accuracy=accuracy(preds, labels),
        delta_dp=delta_dp(preds, groups, n_groups),
        delta_eo=delta_eo(preds, labels, groups, n_groups),
        per_group=per_group,
        n_rows=preds.size,
    )
