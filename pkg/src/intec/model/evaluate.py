from dataclasses import dataclass

import numpy as np

from intec.core import N_CLASSES
from intec.errors import EmptyInput


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray

    def as_dict(self):
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def report_from_predictions(y_true, y_pred, n_classes=N_CLASSES) -> EvalReport:
    """Metrics from argmax predictions, macro-averaged over the classes in ``y_true``."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise EmptyInput("no samples to evaluate")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    present = np.unique(y_true)
    tp = np.diag(confusion)[present].astype(float)
    support = confusion.sum(axis=1)[present]
    predicted = confusion.sum(axis=0)[present]
    recall = tp / support
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return EvalReport(accuracy=float(np.trace(confusion) / y_true.size),
                      precision=float(precision.mean()), recall=float(recall.mean()),
                      f1=float(f1.mean()), confusion=confusion)


def evaluate(model, X, y) -> EvalReport:
    X = np.asarray(X)
    if X.shape[0] == 0:
        raise EmptyInput("no windows to evaluate")
    return report_from_predictions(y, model.predict(X))
