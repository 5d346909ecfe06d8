"""Classification metrics and client-weighted averages."""
from __future__ import annotations

import numpy as np
from scipy import stats


def _pair(preds, labels):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    if preds.size == 0:
        raise ValueError("empty input")
    return preds, labels


def accuracy(preds, labels) -> float:
    preds, labels = _pair(preds, labels)
    return float(np.mean(preds == labels))


def confusion_matrix(preds, labels, class_count: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    preds, labels = _pair(preds, labels)
    for arr in (preds, labels):
        if arr.min() < 0 or arr.max() >= class_count:
            raise ValueError(f"class index out of range [0, {class_count})")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def mcc(preds, labels, class_count: int) -> float:
    """Multiclass Matthews correlation (Gorodkin's R_K); 0 when undefined."""
    cm = confusion_matrix(preds, labels, class_count).astype(np.float64)
    n = cm.sum()
    correct = np.trace(cm)
    t = cm.sum(axis=1)
    p = cm.sum(axis=0)
    num = correct * n - t @ p
    den = np.sqrt(n * n - p @ p) * np.sqrt(n * n - t @ t)
    if den == 0:
        return 0.0
    return float(num / den)


def auc(scores, labels) -> float:
    """Rank-based ROC AUC; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = stats.rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def weighted_average(values, weights) -> float:
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    return float(np.sum(values * weights) / np.sum(weights))


def evaluate(probs, labels, class_count: int) -> dict:
    """Accuracy, MCC and (binary tasks) AUC of the positive-class probability."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    preds = np.argmax(probs, axis=1)
    out = {
        "accuracy": accuracy(preds, labels),
        "mcc": mcc(preds, labels, class_count),
        "auc": float("nan"),
        "support": int(labels.size),
    }
    if class_count == 2 and 0 < labels.sum() < labels.size:
        out["auc"] = auc(probs[:, 1], labels)
    return out
