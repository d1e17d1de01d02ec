"""Multiclass evaluation: confusion matrix, macro P/R/F1 and micro accuracy.

Macro-F1 here is the unweighted mean of the per-class F1 scores, which in
general differs from the harmonic mean of macro-precision and macro-recall.
Any ratio with a zero denominator is taken to be 0.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch, UnknownLeaf


def confusion_matrix(truths: Sequence, predictions: Sequence, classes: Sequence) -> np.ndarray:
    """Counts with rows = true class and columns = predicted class, in `classes` order."""
    if len(truths) != len(predictions):
        raise LengthMismatch(f"{len(truths)} truths vs {len(predictions)} predictions")
    if len(truths) == 0:
        raise EmptyInput("nothing to evaluate")
    pos = {c: k for k, c in enumerate(classes)}
    C = len(classes)
    cm = np.zeros((C, C), dtype=np.int64)
    for t, p in zip(truths, predictions):
        try:
            cm[pos[t], pos[p]] += 1
        except KeyError as e:
            raise UnknownLeaf(f"label {e.args[0]!r} is not one of the {C} classes") from None
    return cm


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass
class EvalReport:
    macro_f1: float
    macro_precision: float
    macro_recall: float
    micro_accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    classes: list[str]
    confusion: list[list[int]]

    def summary(self) -> dict[str, float]:
        return {
            "macro_f1": round(self.macro_f1, 3),
            "macro_precision": round(self.macro_precision, 3),
            "macro_recall": round(self.macro_recall, 3),
            "micro_accuracy": round(self.micro_accuracy, 3),
        }

    def to_dict(self) -> dict:
        return asdict(self)

    def per_class_table(self) -> str:
        width = max([5] + [len(c) for c in self.classes])
        lines = [f"{'class':<{width}}  {'P':>7}  {'R':>7}  {'F1':>7}  {'n':>5}"]
        for c, p, r, f, n in zip(self.classes, self.precision, self.recall, self.f1, self.support):
            lines.append(f"{c:<{width}}  {100 * p:7.3f}  {100 * r:7.3f}  {100 * f:7.3f}  {n:5d}")
        return "\n".join(lines)


def report_from_confusion(cm: np.ndarray, classes: Sequence[str] | None = None,
                          average_over: str = "all") -> EvalReport:
    """Metrics (percentages) from a confusion matrix.

    average_over="all" averages the macro metrics over every class;
    "present" only over classes that occur in truths or predictions.
    """
    cm = np.asarray(cm, dtype=np.int64)
    C = cm.shape[0]
    if cm.ndim != 2 or cm.shape[1] != C:
        raise LengthMismatch(f"confusion matrix must be square, got {cm.shape}")
    if cm.sum() == 0:
        raise EmptyInput("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0).astype(np.float64)
    true = cm.sum(axis=1).astype(np.float64)
    precision = _ratio(tp, pred)
    recall = _ratio(tp, true)
    f1 = _ratio(2 * precision * recall, precision + recall)
    if average_over == "all":
        keep = np.ones(C, dtype=bool)
    elif average_over == "present":
        keep = (pred + true) > 0
    else:
        raise ValueError(f"average_over must be 'all' or 'present', got {average_over!r}")
    classes = [str(c) for c in classes] if classes is not None else [str(k) for k in range(C)]
    return EvalReport(
        macro_f1=100.0 * float(f1[keep].mean()),
        macro_precision=100.0 * float(precision[keep].mean()),
        macro_recall=100.0 * float(recall[keep].mean()),
        micro_accuracy=100.0 * float(tp.sum() / cm.sum()),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=true.astype(int).tolist(),
        classes=classes,
        confusion=cm.tolist(),
    )


def evaluate(truths: Sequence, predictions: Sequence, classes: Sequence, average_over: str = "all") -> EvalReport:
    """Score leaf predictions against truths; `classes` fixes the class order (taxonomy leaf order)."""
    cm = confusion_matrix(truths, predictions, classes)
    return report_from_confusion(cm, [str(c) for c in classes], average_over)


def harmonic_mean(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


def not_harmonic_mean_witness() -> np.ndarray:
    """A confusion matrix whose macro-F1 is not the harmonic mean of macro-P and macro-R."""
    cm = np.array([[9, 1], [5, 5]])
    r = report_from_confusion(cm)
    gap = abs(r.macro_f1 - harmonic_mean(r.macro_precision, r.macro_recall))
    if not gap > 0.01:
        raise AssertionError(f"witness gap {gap} is not above 0.01 points")
    return cm
