"""Evaluation metrics: confusion matrices, per-class precision/recall/F1
with an epsilon guard, macro averages, and accuracy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import CODE_TO_LABEL, LABEL_CODES, N_CLASSES

EPS = 1e-12


def confusion_from_pairs(labels, predictions, n_classes: int = N_CLASSES) -> np.ndarray:
    """Confusion matrix with rows = true class, columns = predicted class."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions must have equal length")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label outside the class range")
    if predictions.size and (predictions.min() < 0 or predictions.max() >= n_classes):
        raise ValueError("prediction outside the class range")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (labels, predictions), 1)
    return matrix


@dataclass
class FoldReport:
    confusion: np.ndarray  # [3, 3] rows=true, cols=predicted
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[str, dict[str, float]]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "label_codes": dict(LABEL_CODES),
            "confusion_rows_true_cols_predicted": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "n_samples": self.n_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render_text(self) -> str:
        names = [CODE_TO_LABEL[i] for i in range(N_CLASSES)]
        lines = ["confusion (rows = true, cols = predicted):"]
        header = " " * 8 + "".join(f"{n:>8}" for n in names)
        lines.append(header)
        for i, name in enumerate(names):
            row = "".join(f"{int(v):>8}" for v in self.confusion[i])
            lines.append(f"{name:>8}{row}")
        lines.append(
            f"accuracy {self.accuracy:.4f}  macro P {self.macro_precision:.4f}  "
            f"macro R {self.macro_recall:.4f}  macro F1 {self.macro_f1:.4f}"
        )
        return "\n".join(lines)


def compute_metrics(confusion: np.ndarray) -> FoldReport:
    """Per-class and macro metrics from a confusion matrix."""
    matrix = np.asarray(confusion)
    if matrix.shape != (N_CLASSES, N_CLASSES):
        raise ValueError(f"expected a [3, 3] confusion matrix, got {matrix.shape}")
    if np.any(matrix < 0) or not np.issubdtype(matrix.dtype, np.integer):
        matrix = matrix.astype(np.int64)
        if np.any(matrix < 0):
            raise ValueError("confusion matrix entries must be non-negative integers")
    total = int(matrix.sum())
    if total == 0:
        raise ValueError("empty evaluation: confusion matrix is all zeros")

    per_class: dict[str, dict[str, float]] = {}
    precisions, recalls, f1s = [], [], []
    for c in range(N_CLASSES):
        tp = float(matrix[c, c])
        fp = float(matrix[:, c].sum() - matrix[c, c])
        fn = float(matrix[c, :].sum() - matrix[c, c])
        prec = tp / (tp + fp + EPS)
        rec = tp / (tp + fn + EPS)
        f1 = 2.0 * prec * rec / (prec + rec + EPS)
        per_class[CODE_TO_LABEL[c]] = {"precision": prec, "recall": rec, "f1": f1}
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)

    return FoldReport(
        confusion=matrix,
        accuracy=float(np.trace(matrix)) / total,
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        macro_f1=float(np.mean(f1s)),
        per_class=per_class,
        n_samples=total,
    )


def metrics_from_pairs(labels, predictions) -> FoldReport:
    return compute_metrics(confusion_from_pairs(labels, predictions))
