"""Weighted average precision and confusion matrices.

WAP is support-weighted precision::

    WAP = sum_c (n_c / N) * TP_c / (TP_c + FP_c)

where ``n_c`` is the number of true examples of class ``c``.  A class that
is never predicted has precision 0.
"""

from __future__ import annotations

import numpy as np

from .. import CLASSES


def _as_indices(values, num_classes):
    arr = np.asarray([CLASSES.index(v) if isinstance(v, str) else int(v) for v in values], dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        raise ValueError("class index out of range")
    return arr


def weighted_average_precision(preds, labels, num_classes: int = len(CLASSES)) -> float:
    preds = _as_indices(preds, num_classes)
    labels = _as_indices(labels, num_classes)
    if preds.size == 0:
        raise ValueError("WAP of an empty prediction set is undefined")
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    total = 0.0
    for c in range(num_classes):
        support = np.count_nonzero(labels == c)
        predicted = np.count_nonzero(preds == c)
        if support == 0 or predicted == 0:
            continue
        hits = np.count_nonzero((preds == c) & (labels == c))
        total += (support / labels.size) * (hits / predicted)
    return total


def confusion_counts(preds, labels, num_classes: int = len(CLASSES)) -> np.ndarray:
    preds = _as_indices(preds, num_classes)
    labels = _as_indices(labels, num_classes)
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return counts


def normalize_rows(counts: np.ndarray) -> np.ndarray:
    """Percentages per true-class row; rows with no support stay zero."""
    counts = np.asarray(counts, dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(100.0 * counts, sums, out=np.zeros_like(counts), where=sums > 0)


def confusion_matrix(preds, labels, num_classes: int = len(CLASSES)) -> np.ndarray:
    """Row = true class, column = predicted class, entries in percent."""
    return normalize_rows(confusion_counts(preds, labels, num_classes))


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
