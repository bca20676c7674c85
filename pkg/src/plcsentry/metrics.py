"""Binary detection metrics (attack = positive class)."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict


@dataclass
class Metrics:
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    mcc: float
    degenerate: bool  # some ratio had a zero denominator and was reported as 0

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den > 0 else (0.0, True)


def from_counts(tp: int, tn: int, fp: int, fn: int) -> Metrics:
    total = tp + tn + fp + fn
    if total == 0:
        raise ValueError("empty confusion matrix")
    degenerate = False
    accuracy = (tp + tn) / total
    precision, d1 = _ratio(tp, tp + fp)
    recall, d2 = _ratio(tp, tp + fn)
    specificity, d3 = _ratio(tn, tn + fp)
    f1, d4 = _ratio(2 * precision * recall, precision + recall)
    mcc_den = math.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if mcc_den > 0:
        mcc = (tp * tn - fp * fn) / mcc_den
    else:
        mcc, degenerate = 0.0, True
    degenerate = degenerate or d1 or d2 or d3 or d4
    return Metrics(tp, tn, fp, fn, accuracy, precision, recall,
                   specificity, f1, mcc, degenerate)


def evaluate(predictions, truth) -> Metrics:
    """Confusion counts and derived metrics from boolean attack flags."""
    preds = list(predictions)
    actual = list(truth)
    if len(preds) != len(actual):
        raise ValueError(f"length mismatch: {len(preds)} != {len(actual)}")
    tp = sum(1 for p, t in zip(preds, actual) if p and t)
    tn = sum(1 for p, t in zip(preds, actual) if not p and not t)
    fp = sum(1 for p, t in zip(preds, actual) if p and not t)
    fn = sum(1 for p, t in zip(preds, actual) if not p and t)
    return from_counts(tp, tn, fp, fn)
