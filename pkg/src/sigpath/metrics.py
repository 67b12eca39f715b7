"""Classification metrics used for model selection and reporting."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _labels(y) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if y.size == 0:
        raise ValueError("metric of an empty label vector")
    return y.astype(int)


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = _labels(y_true), _labels(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    return float(np.mean(y_true == y_pred))


def balanced_accuracy(y_true, y_pred) -> float:
    """Mean per-class recall over the classes present in ``y_true``."""
    y_true, y_pred = _labels(y_true), _labels(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    recalls = [np.mean(y_pred[y_true == c] == c) for c in np.unique(y_true)]
    return float(np.mean(recalls))


def binary_auroc(y_true, scores) -> float:
    """Rank-based (Mann-Whitney) AUROC with midranks for ties.

    Returns 0.5 when ``y_true`` has no positives or no negatives.
    """
    y = _labels(y_true).astype(bool)
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if scores.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def weighted_auroc(y_true, scores) -> float:
    """One-vs-rest AUROC per class, averaged with weights = class support / n."""
    y = _labels(y_true)
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[0] != y.size:
        raise ValueError(f"scores must be (n, C), got {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    total = 0.0
    for c in range(scores.shape[1]):
        support = np.sum(y == c)
        if support:
            total += support / y.size * binary_auroc(y == c, scores[:, c])
    return float(total)


def average_precision(y_true, scores) -> float:
    """``sum_k (R_k - R_{k-1}) P_k`` over descending score thresholds.

    Tied scores form a single threshold, so constant scores give the
    prevalence.
    """
    y = _labels(y_true).astype(bool)
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if scores.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, hits = scores[order], y[order]
    tp = np.cumsum(hits)
    # keep the last position of every block of tied scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = tp[last]
    precision = tp / (last + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def selection_metric_name(n_classes: int) -> str:
    return "average_precision" if n_classes == 2 else "balanced_accuracy"


def selection_score(y_true, probs) -> float:
    """Validation score used for early stopping and search: AP if binary, else BAC."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape[1] == 2:
        y = _labels(y_true)
        if not np.any(y == 1):
            return balanced_accuracy(y, probs.argmax(axis=1))
        return average_precision(y == 1, probs[:, 1])
    return balanced_accuracy(y_true, probs.argmax(axis=1))


def classification_report(y_true, probs) -> dict:
    """All reported metrics for one fit; binary-only metrics appear only for C == 2."""
    y = _labels(y_true)
    probs = np.asarray(probs, dtype=float)
    pred = probs.argmax(axis=1)
    out = {
        "accuracy": accuracy(y, pred),
        "balanced_accuracy": balanced_accuracy(y, pred),
        "weighted_auroc": weighted_auroc(y, probs),
    }
    if probs.shape[1] == 2:
        out["auroc"] = binary_auroc(y == 1, probs[:, 1])
        if np.any(y == 1):
            out["average_precision"] = average_precision(y == 1, probs[:, 1])
    return out
