"""Confusion matrices and F1 scores for model evaluation."""

from dataclasses import dataclass

import numpy as np

from .boosting import TreeModel
from .errors import UndefinedMetricError
from .losses import sigmoid


@dataclass
class ConfusionMatrix:
    """k x k counts; entry (i, j) = true class i predicted as class j."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("confusion matrix must be square")
        if (self.matrix < 0).any():
            raise ValueError("confusion matrix entries must be non-negative")

    @classmethod
    def from_predictions(
        cls, y_true: np.ndarray, y_pred: np.ndarray, num_class: int
    ) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        flat = np.bincount(y_true * num_class + y_pred, minlength=num_class * num_class)
        return cls(flat.reshape(num_class, num_class))

    @property
    def num_class(self) -> int:
        return self.matrix.shape[0]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())


def predict_class(model: TreeModel, features: np.ndarray) -> np.ndarray:
    """Margin to class decision: sigmoid >= 0.5 for binary, argmax otherwise.

    The binary threshold is inclusive (margin 0 predicts the positive class)
    and multiclass ties resolve to the lowest class id.
    """
    margins = model.predict_margin(features)
    if model.task == "binary":
        return (sigmoid(margins) >= 0.5).astype(np.int64)
    return np.argmax(margins, axis=1).astype(np.int64)


def _per_class_f1(cm: ConfusionMatrix, klass: int) -> float:
    tp = cm.matrix[klass, klass]
    fp = cm.matrix[:, klass].sum() - tp
    fn = cm.matrix[klass, :].sum() - tp
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f1_score(cm: ConfusionMatrix, task: str, average: str = "macro") -> float:
    """Binary: F1 of the positive class. Multiclass: macro by default, with
    micro and support-weighted averaging available for reconciliation."""
    if cm.total == 0:
        raise UndefinedMetricError("cannot compute F1 over an empty evaluation set")
    if task == "binary":
        return _per_class_f1(cm, 1)
    if average == "macro":
        return float(np.mean([_per_class_f1(cm, k) for k in range(cm.num_class)]))
    if average == "micro":
        tp = np.trace(cm.matrix)
        fp = cm.total - tp  # every miss is one FP and one FN in single-label tasks
        return float(2.0 * tp / (2.0 * tp + 2.0 * fp)) if cm.total else 0.0
    if average == "weighted":
        support = cm.matrix.sum(axis=1)
        scores = np.array([_per_class_f1(cm, k) for k in range(cm.num_class)])
        return float((scores * support).sum() / support.sum())
    raise ValueError(f"unknown averaging mode {average!r}")


def evaluate_model(
    model: TreeModel, features: np.ndarray, labels: np.ndarray, average: str = "macro"
) -> dict:
    predictions = predict_class(model, features)
    cm = ConfusionMatrix.from_predictions(labels, predictions, model.num_class)
    return {
        "f1": f1_score(cm, model.task, average),
        "accuracy": float(np.mean(predictions == labels)),
        "confusion": cm.matrix.tolist(),
        "n_rows": cm.total,
    }
