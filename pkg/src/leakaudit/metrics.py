"""Classification metrics, multi-seed summaries and chance levels."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricSummary:
    values: tuple[float, ...]
    mean: float
    std: float

    def to_dict(self) -> dict:
        return {"per_seed": list(self.values), "mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSummary":
        return cls(tuple(d["per_seed"]), d["mean"], d["std"])


def confusion_matrix(y_true, y_pred, k: int) -> np.ndarray:
    """``k x k`` count matrix; rows are true classes, columns predictions.

    2-D inputs of shape (B, n) give a stacked (B, k, k) result.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.ndim > 2:
        raise ValueError("expected 1-D label vectors or a 2-D batch")
    for name, y in (("y_true", y_true), ("y_pred", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= k):
            raise ValueError(f"{name} contains labels outside [0, {k})")
    if y_true.ndim == 1:
        return np.bincount(y_true * k + y_pred, minlength=k * k).reshape(k, k)
    batch = y_true.shape[0]
    offset = np.arange(batch)[:, None] * (k * k)
    flat = (offset + y_true * k + y_pred).ravel()
    return np.bincount(flat, minlength=batch * k * k).reshape(batch, k, k)


def accuracy(cm: np.ndarray):
    """Trace over total; a stacked (B, k, k) input gives B values."""
    cm = np.asarray(cm)
    total = cm.sum(axis=(-2, -1))
    if np.any(total == 0):
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    acc = np.trace(cm, axis1=-2, axis2=-1) / total
    return float(acc) if cm.ndim == 2 else acc


def _per_class_f1(cm: np.ndarray) -> np.ndarray:
    # 2TP / (2TP + FP + FN): the harmonic mean of precision and recall
    # with a single rounding
    tp = np.diagonal(cm, axis1=-2, axis2=-1).astype(np.float64)
    support = (cm.sum(axis=-2) + cm.sum(axis=-1)).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(tp > 0, 2 * tp / support, 0.0)


def macro_f1(cm: np.ndarray):
    """Unweighted mean F1 over every declared class.

    Zero-support classes contribute an F1 of 0, and every 0/0 ratio is
    taken as 0. A stacked (B, k, k) input gives B values.
    """
    cm = np.asarray(cm)
    if np.any(cm.sum(axis=(-2, -1)) == 0):
        raise ValueError("macro-F1 of an empty confusion matrix is undefined")
    f1 = _per_class_f1(cm).sum(axis=-1) / cm.shape[-1]
    return float(f1) if cm.ndim == 2 else f1


def summarize_runs(per_seed_values) -> MetricSummary:
    values = tuple(float(v) for v in per_seed_values)
    if not values:
        raise ValueError("no values to summarize")
    mean = math.fsum(values) / len(values)
    if len(values) == 1:
        std = 0.0
    else:
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))
    return MetricSummary(values, mean, std)


def chance_level(k: int, metric: str, test_labels, n_mc: int = 1000,
                 seed: int = 0) -> float:
    """Expected score of a uniform-random predictor on ``test_labels``.

    Accuracy is exactly ``1/k``. Macro-F1 depends on the label composition
    and is estimated by Monte-Carlo over ``n_mc`` predictor draws.
    """
    test_labels = np.asarray(test_labels, dtype=np.int64).ravel()
    if k < 1:
        raise ValueError("k must be >= 1")
    if test_labels.size == 0:
        raise ValueError("test_labels is empty")
    if metric == "accuracy":
        return 1.0 / k
    if metric != "macro_f1":
        raise ValueError(f"unknown metric {metric!r}")

    from .classifier import uniform_random_predict

    n = test_labels.size
    preds = uniform_random_predict(k, n * n_mc, seed).reshape(n_mc, n)
    chunk = max(1, 2_000_000 // n)
    scores = [macro_f1(confusion_matrix(np.broadcast_to(test_labels, p.shape), p, k))
              for p in (preds[lo:lo + chunk] for lo in range(0, n_mc, chunk))]
    return float(np.concatenate(scores).mean())
