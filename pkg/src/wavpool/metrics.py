"""Classification metrics: accuracy, macro F1, confusion matrix, macro OvR ROC AUC."""
from __future__ import annotations

import logging

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)


def _check_pair(preds, labels):
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions for {labels.size} labels")
    return preds, labels


def accuracy(preds, labels) -> float:
    preds, labels = _check_pair(preds, labels)
    return float(np.mean(preds == labels)) if labels.size else 0.0


def confusion(preds, labels, num_classes: int | None = None) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds, labels = _check_pair(preds, labels)
    k = num_classes or int(max(preds.max(initial=-1), labels.max(initial=-1)) + 1)
    return np.bincount(labels * k + preds, minlength=k * k).reshape(k, k)


def f1_macro(preds, labels, num_classes: int | None = None) -> float:
    """Unweighted mean of per-class F1; a class with no support and no predictions scores 0."""
    cm = confusion(preds, labels, num_classes)
    tp = np.diag(cm).astype(float)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(per_class.mean())


def binary_auc(scores, positive) -> float:
    """Mann-Whitney rank statistic; tied scores contribute 1/2."""
    positive = np.asarray(positive, dtype=bool)
    n_pos = positive.sum()
    n_neg = positive.size - n_pos
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_auc_macro(scores, labels) -> float:
    """Macro one-vs-rest ROC AUC over the classes present in ``labels``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ValueError(f"scores must be [N x K] with K >= 2, got {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    aucs = []
    for k in range(scores.shape[1]):
        positive = labels == k
        if positive.all() or not positive.any():
            log.info("class %d has no positive or no negative samples; excluded from macro AUC", k)
            continue
        aucs.append(binary_auc(scores[:, k], positive))
    if not aucs:
        raise ValueError("ROC AUC undefined: labels contain a single class")
    return float(np.mean(aucs))


def aggregate(values) -> dict:
    """Mean, max absolute deviation from the mean, and population std of trial values."""
    v = np.asarray(values, dtype=np.float64)
    if v.min() == v.max():
        # identical trials: report the value itself, free of summation round-off
        return {"mean": float(v[0]), "spread": 0.0, "std": 0.0}
    mean = float(v.mean())
    return {"mean": mean, "spread": float(np.max(np.abs(v - mean))), "std": float(v.std())}
