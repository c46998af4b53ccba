"""Evaluation metrics for the direction (classification) and underpricing (regression) targets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLD = 0.5


class MetricError(ValueError):
    pass


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise MetricError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size)
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores, labels = _pair(scores, labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: only one class present")
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1(preds, labels, positive_class: int = 1) -> float:
    preds, labels = _pair(preds, labels)
    p = preds == positive_class
    t = labels == positive_class
    tp = float(np.sum(p & t))
    precision = tp / p.sum() if p.sum() else 0.0
    recall = tp / t.sum() if t.sum() else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def mae(preds, targets) -> float:
    preds, targets = _pair(preds, targets)
    if preds.size == 0:
        raise MetricError("empty input")
    return float(np.mean(np.abs(preds - targets)))


def mse(preds, targets) -> float:
    preds, targets = _pair(preds, targets)
    if preds.size == 0:
        raise MetricError("empty input")
    return float(np.mean((preds - targets) ** 2))


@dataclass(frozen=True)
class ClassificationReport:
    auc: float | None
    f1_class0: float
    f1_class1: float
    support_class0: int
    support_class1: int
    threshold: float = DEFAULT_THRESHOLD

    def as_dict(self) -> dict:
        return {"auc": self.auc, "f1_0": self.f1_class0, "f1_1": self.f1_class1,
                "support_0": self.support_class0, "support_1": self.support_class1, "threshold": self.threshold}


@dataclass(frozen=True)
class RegressionReport:
    mae: float
    mse: float
    n: int

    def as_dict(self) -> dict:
        return {"mae": self.mae, "mse": self.mse, "n": self.n}


def classification_report(probabilities, labels, threshold: float = DEFAULT_THRESHOLD) -> ClassificationReport:
    """``auc`` is None when the evaluation set holds a single class."""
    probabilities, labels = _pair(probabilities, labels)
    preds = (probabilities > threshold).astype(int)
    try:
        area = auc(probabilities, labels)
    except MetricError:
        area = None
    return ClassificationReport(area, f1(preds, labels, 0), f1(preds, labels, 1),
                                int(np.sum(labels == 0)), int(np.sum(labels == 1)), threshold)


def regression_report(preds, targets) -> RegressionReport:
    preds, targets = _pair(preds, targets)
    return RegressionReport(mae(preds, targets), mse(preds, targets), int(preds.size))
