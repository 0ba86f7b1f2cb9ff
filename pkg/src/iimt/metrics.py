"""Classification metrics: accuracy, confusion matrix, weighted F1."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ValidationError


@dataclass
class EvalReport:
    accuracy: float
    weighted_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "support": self.support.tolist(),
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(truth, pred, num_classes: int) -> np.ndarray:
    """Counts with rows indexed by true class and columns by predicted class."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def report_from_labels(truth, pred, num_classes: int) -> EvalReport:
    """Metrics from integer class labels.

    Classes with no predictions get precision 0; classes with no support get
    recall 0. Either way the F1 is 0, and an unsupported class carries zero
    weight in the weighted mean. The weighted F1 is evaluated in exact
    rational arithmetic from the integer counts and rounded once.
    """
    truth = np.asarray(truth, dtype=np.int64)
    if truth.size == 0:
        raise ValidationError("cannot evaluate an empty dataset")
    cm = confusion_matrix(truth, pred, num_classes)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * tp, predicted + support)
    return EvalReport(
        accuracy=float(tp.sum() / truth.size),
        weighted_f1=_exact_weighted_f1(np.diag(cm), predicted, support),
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        confusion=cm,
    )


def _exact_weighted_f1(tp, predicted, support) -> float:
    total = Fraction(0)
    for t, p, s in zip(tp.tolist(), predicted.tolist(), support.tolist()):
        if s:
            total += Fraction(2 * t, p + s) * s
    return float(total / int(support.sum()))


def weighted_f1(truth, pred, num_classes: int) -> float:
    return report_from_labels(truth, pred, num_classes).weighted_f1
