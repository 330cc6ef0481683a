"""
Metrics service: bag and patch classification metrics, FROC and CPM.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from hcft.core.logging import get_logger
from hcft.schemas.metrics import ClassificationMetrics, FrocCurve, FrocPoint, PatchMetrics
from hcft.utils.exceptions import (
    ContractViolationException,
    DimensionMismatchException,
    UndefinedMetricException,
)

logger = get_logger(__name__)

# average false positives per image at which CPM reads sensitivity
CPM_FPI: Tuple[float, ...] = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)


def classification_metrics(
    pred: Sequence[int], truth: Sequence[int], n_classes: int
) -> ClassificationMetrics:
    """
    Accuracy and F1.

    F1 is the positive-class F1 for two classes and the macro average
    otherwise; a class with no support and no predictions scores 0.

    Raises:
        DimensionMismatchException: On length mismatch
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise DimensionMismatchException("classification_metrics", pred.shape, truth.shape)
    if pred.size == 0:
        raise UndefinedMetricException("no samples")

    per_class = []
    for c in range(n_classes):
        tp = np.count_nonzero((pred == c) & (truth == c))
        fp = np.count_nonzero((pred == c) & (truth != c))
        fn = np.count_nonzero((pred != c) & (truth == c))
        denom = 2 * tp + fp + fn
        per_class.append(2 * tp / denom if denom else 0.0)
    f1 = per_class[1] if n_classes == 2 else float(np.mean(per_class))
    return ClassificationMetrics(
        acc=float(np.mean(pred == truth)), f1=float(f1), per_class_f1=per_class
    )


def auc_binary(scores: np.ndarray, positive: np.ndarray) -> Optional[float]:
    """
    Mann-Whitney AUC with tied scores earning half credit.

    Returns:
        Optional[float]: None without both positives and negatives
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_ovr(probs: np.ndarray, truth: Sequence[int], n_classes: int) -> float:
    """
    One-vs-rest AUC macro-averaged over classes with both outcomes present.

    Args:
        probs: (samples, n) class probabilities, rows summing to 1
        truth: True class per sample
        n_classes: Number of classes

    Raises:
        ContractViolationException: If a probability row does not sum to 1
        UndefinedMetricException: If no class has both outcomes
    """
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if probs.ndim != 2 or probs.shape != (truth.size, n_classes):
        raise DimensionMismatchException("auc_ovr", probs.shape, (truth.size, n_classes))
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ContractViolationException("probability rows must sum to 1")

    aucs = []
    excluded = []
    for c in range(n_classes):
        auc = auc_binary(probs[:, c], truth == c)
        if auc is None:
            excluded.append(c)
        else:
            aucs.append(auc)
    if excluded:
        logger.warning("Classes excluded from AUC", classes=excluded)
    if not aucs:
        raise UndefinedMetricException("no class has both positive and negative samples")
    return float(np.mean(aucs))


def froc(scores: np.ndarray, truth: np.ndarray, slide_ids: Sequence[str]) -> FrocCurve:
    """
    FROC curve over every distinct score threshold.

    An instance is called positive when its score is at least the threshold.
    Points run from the highest threshold to the lowest.

    Args:
        scores: Tumor score per instance
        truth: True when the instance is tumor
        slide_ids: Slide of each instance

    Raises:
        UndefinedMetricException: Without any tumor instance
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape or scores.size != len(slide_ids):
        raise DimensionMismatchException("froc", scores.shape, truth.shape)
    n_tumor = int(truth.sum())
    if n_tumor == 0:
        raise UndefinedMetricException("FROC sensitivity is undefined without tumor instances")
    n_slides = len(set(slide_ids))

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp = np.cumsum(truth[order])
    fp = np.cumsum(~truth[order])
    # last position of each run of equal scores
    ends = np.flatnonzero(np.append(sorted_scores[1:] != sorted_scores[:-1], True))
    points = [
        FrocPoint(
            threshold=float(sorted_scores[i]),
            fpi=float(fp[i]) / n_slides,
            sensitivity=float(tp[i]) / n_tumor,
        )
        for i in ends
    ]
    return FrocCurve(points=points, n_slides=n_slides, n_tumor=n_tumor)


def sensitivity_at(curve: FrocCurve, fpi: float) -> float:
    """Highest sensitivity among points with at most ``fpi`` false positives per image."""
    eligible = [p.sensitivity for p in curve.points if p.fpi <= fpi]
    return max(eligible) if eligible else 0.0


def cpm(curve: FrocCurve, targets: Sequence[float] = CPM_FPI) -> float:
    """Mean sensitivity over the CPM false-positive rates."""
    if not curve.points:
        raise UndefinedMetricException("CPM of an empty FROC curve")
    return float(np.mean([sensitivity_at(curve, f) for f in targets]))


def patch_metrics(
    probs: np.ndarray,
    pred: np.ndarray,
    truth: np.ndarray,
    scores: np.ndarray,
    slide_ids: Sequence[str],
    n_classes: int,
) -> Tuple[PatchMetrics, Optional[FrocCurve]]:
    """
    Patch-level ACC/AUC/F1 plus FROC and CPM of one score source.

    Args:
        probs: (instances, n) class probabilities
        pred: Predicted class per instance
        truth: True class per instance
        scores: Tumor score per instance
        slide_ids: Slide of each instance
        n_classes: Number of bag classes

    Returns:
        Tuple[PatchMetrics, Optional[FrocCurve]]: Undefined metrics are None
    """
    cls = classification_metrics(pred, truth, n_classes)
    result = PatchMetrics(acc=cls.acc, f1=cls.f1)
    try:
        result.auc = auc_ovr(probs, truth, n_classes)
    except UndefinedMetricException:
        result.auc = None
    curve: Optional[FrocCurve] = None
    try:
        curve = froc(scores, np.asarray(truth) > 0, slide_ids)
        result.cpm = cpm(curve)
    except UndefinedMetricException:
        logger.warning("FROC undefined", instances=len(slide_ids))
    return result, curve


def froc_table(curve: FrocCurve) -> List[Tuple[float, float]]:
    """Plot-ready ``(fpi, sensitivity)`` rows."""
    return [(p.fpi, p.sensitivity) for p in curve.points]
