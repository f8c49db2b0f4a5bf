"""Classification metrics from a confusion matrix (one-vs-rest per class)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricsError

AVERAGING = ("macro", "weighted")


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise MetricsError(f"predictions {p.shape} and labels {y.shape} must be equal-length 1-D")
    if p.size == 0:
        raise MetricsError("cannot compute metrics on empty input")
    if min(p.min(), y.min()) < 0 or max(p.max(), y.max()) >= num_classes:
        raise MetricsError(f"class index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    support: np.ndarray
    averaging: str = "macro"
    extra: dict = field(default_factory=dict)

    def aggregate(self, averaging: str) -> dict[str, float]:
        if averaging == "macro":
            w = np.full(self.support.shape, 1.0 / self.support.size)
        elif averaging == "weighted":
            w = self.support / self.support.sum()
        else:
            raise MetricsError(f"unknown averaging {averaging!r}")
        return {
            "precision": float(w @ self.per_class_precision),
            "recall": float(w @ self.per_class_recall),
            "f1": float(w @ self.per_class_f1),
        }

    def micro_recall(self) -> float:
        tp = np.trace(self.confusion)
        return float(tp / self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "averaging": self.averaging,
            "macro": self.aggregate("macro"),
            "weighted": self.aggregate("weighted"),
            "confusion": self.confusion.tolist(),
            "per_class": {
                "precision": self.per_class_precision.tolist(),
                "recall": self.per_class_recall.tolist(),
                "f1": self.per_class_f1.tolist(),
            },
            "support": self.support.tolist(),
        }


def compute_metrics(predictions, labels, num_classes: int, averaging: str = "macro") -> Metrics:
    """Accuracy over all samples plus per-class precision, recall and F1.

    Any 0/0 ratio is taken as 0. The aggregate precision/recall/F1 average the
    per-class values, unweighted (``macro``) or by support (``weighted``).
    """
    if averaging not in AVERAGING:
        raise MetricsError(f"unknown averaging {averaging!r}; expected one of {AVERAGING}")
    cm = confusion_matrix(predictions, labels, num_classes)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    total = cm.sum()
    tn = total - tp - fp - fn
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    m = Metrics(
        accuracy=float(np.trace(cm) / total),
        precision=0.0,
        recall=0.0,
        f1=0.0,
        confusion=cm,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        support=cm.sum(axis=1),
        averaging=averaging,
        extra={"tp": tp, "fp": fp, "fn": fn, "tn": tn},
    )
    agg = m.aggregate(averaging)
    m.precision, m.recall, m.f1 = agg["precision"], agg["recall"], agg["f1"]
    return m
