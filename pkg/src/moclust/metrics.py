"""Clustering agreement and outlier-detection rates."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import comb

OUTLIER_LABEL = 0


@dataclass(frozen=True)
class ConfusionRates:
    """Outlier-detection counts and rates.  A rate is ``None`` when its denominator is zero."""

    tp: int
    fp: int
    tn: int
    fn: int
    tpr: Optional[float]
    fpr: Optional[float]
    tnr: Optional[float]
    fnr: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def ari(a: Sequence, b: Sequence) -> float:
    """Adjusted Rand index (Hubert-Arabie) from the contingency table.

    When the expected and maximum index coincide (both partitions trivial in
    the same way) the result is 1.0 for identical partitions.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must be one-dimensional and of equal length")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    sum_ij = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0 if sum_ij == maximum else 0.0
    return float((sum_ij - expected) / (maximum - expected))


def outlier_eval(predicted, truth) -> ConfusionRates:
    """Compare predicted outlier ids with ground truth.

    ``truth`` is a :class:`~moclust.simgen.LabeledDataSet` or a
    :class:`~moclust.data.DataSet` carrying ``is_outlier`` flags.
    """
    data = getattr(truth, "data", truth)
    ids, is_outlier = data.ids, truth.is_outlier
    if is_outlier is None:
        raise ValueError("ground truth has no outlier flags")
    predicted = set(predicted)
    unknown = predicted - set(ids)
    if unknown:
        raise KeyError(f"unknown ids: {sorted(unknown)[:5]}")
    pred = np.array([i in predicted for i in ids])
    truth = np.asarray(is_outlier, dtype=bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))

    def rate(num, den):
        return num / den if den else None

    return ConfusionRates(tp, fp, tn, fn, rate(tp, tp + fn), rate(fp, fp + tn), rate(tn, fp + tn), rate(fn, tp + fn))


def labels_with_outlier_class(ids: Sequence[str], fit_labels: Mapping[str, int], outlier_ids) -> np.ndarray:
    """Labels in ``ids`` order with every outlier assigned :data:`OUTLIER_LABEL`."""
    outlier_ids = set(outlier_ids)
    out = np.empty(len(ids), dtype=int)
    for k, i in enumerate(ids):
        out[k] = OUTLIER_LABEL if i in outlier_ids else int(fit_labels[i])
    return out


def truth_with_outlier_class(true_cluster, is_outlier) -> np.ndarray:
    return np.where(np.asarray(is_outlier, dtype=bool), OUTLIER_LABEL, np.asarray(true_cluster, dtype=int))
