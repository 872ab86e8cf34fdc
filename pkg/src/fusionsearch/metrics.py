"""Residue-level classification metrics: AUC, AUPR, MCC and F1.

Every function accepts an optional boolean ``mask``; residues where it is
false are dropped before anything is computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _prepare(scores, labels, mask=None) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores ({scores.size}) and labels ({labels.size}) differ in length")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).ravel()
        if mask.shape != scores.shape:
            raise ValueError("mask length differs from scores")
        scores, labels = scores[mask], labels[mask]
    return scores, labels.astype(np.int64) == 1


def confusion(scores, labels, threshold: float = 0.5, mask=None) -> ConfusionCounts:
    """Confusion counts with a residue called disordered iff ``score >= threshold``."""
    scores, pos = _prepare(scores, labels, mask)
    called = scores >= threshold
    return ConfusionCounts(
        tp=int(np.sum(called & pos)),
        tn=int(np.sum(~called & ~pos)),
        fp=int(np.sum(called & ~pos)),
        fn=int(np.sum(~called & pos)),
    )


def mcc(counts: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any marginal of the confusion table is empty."""
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def f1(counts: ConfusionCounts) -> float:
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def auc(scores, labels, mask=None) -> float:
    """ROC AUC via the Mann-Whitney rank sum, ties counted as one half."""
    scores, pos = _prepare(scores, labels, mask)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative residue")
    ranks = rankdata(scores, method="average")
    # ranks are multiples of 1/2, so the numerator below is exact
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def aupr(scores, labels, mask=None) -> float:
    """Area under the precision-recall curve.

    Thresholds are swept from the highest score down; residues with equal
    scores enter together, and each recall increment is weighted by the
    precision reached at that threshold (step interpolation).
    """
    scores, pos = _prepare(scores, labels, mask)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("AUPR needs at least one positive residue")
    order = np.argsort(-scores, kind="mergesort")
    s_sorted = scores[order]
    tp_cum = np.cumsum(pos[order])
    # last index of each tie group
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = tp_cum[ends]
    called = ends + 1
    precision = tp / called
    recall = tp / n_pos
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def report(scores, labels, threshold: float = 0.5, mask=None) -> dict[str, float]:
    """All four metrics in one dict (keys ``mcc``, ``auc``, ``aupr``, ``f1``)."""
    counts = confusion(scores, labels, threshold, mask)
    return {
        "mcc": mcc(counts),
        "auc": auc(scores, labels, mask),
        "aupr": aupr(scores, labels, mask),
        "f1": f1(counts),
    }
