"""
Tests for classification metrics, AUC, FROC and CPM.
"""

import numpy as np
import pytest

from hcft.schemas.metrics import FrocCurve, FrocPoint
from hcft.services.metrics_service import (
    CPM_FPI,
    auc_binary,
    auc_ovr,
    classification_metrics,
    cpm,
    froc,
    froc_table,
    patch_metrics,
    sensitivity_at,
)
from hcft.utils.exceptions import (
    ContractViolationException,
    DimensionMismatchException,
    UndefinedMetricException,
)


def pair_counting_auc(scores, positive):
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def brute_force_froc(scores, truth, slide_ids):
    n_slides = len(set(slide_ids))
    n_tumor = sum(truth)
    points = []
    for threshold in sorted(set(scores), reverse=True):
        called = [s >= threshold for s in scores]
        tp = sum(1 for c, t in zip(called, truth) if c and t)
        fp = sum(1 for c, t in zip(called, truth) if c and not t)
        points.append((threshold, fp / n_slides, tp / n_tumor))
    return points


def curve_of(*pairs) -> FrocCurve:
    points = [FrocPoint(threshold=1.0 - i / 100, fpi=f, sensitivity=s) for i, (f, s) in enumerate(pairs)]
    return FrocCurve(points=points, n_slides=1, n_tumor=1)


def test_accuracy_and_binary_f1():
    """Test accuracy and positive-class F1 for two classes."""
    result = classification_metrics([1, 1, 0, 0], [1, 0, 0, 1], 2)
    assert result.acc == 0.5
    assert result.f1 == pytest.approx(0.5)


def test_perfect_and_all_wrong_f1():
    """Test F1 of one for perfect predictions and zero when positives are missed."""
    assert classification_metrics([0, 1, 1], [0, 1, 1], 2).f1 == 1.0
    assert classification_metrics([0, 0, 0], [0, 1, 1], 2).f1 == 0.0


def test_macro_f1_for_three_classes():
    """Test macro F1 averages per-class scores."""
    result = classification_metrics([0, 1, 2, 2], [0, 1, 1, 2], 3)
    expected = np.mean([1.0, 2 / 3, 2 / 3])
    assert result.f1 == pytest.approx(expected)
    assert len(result.per_class_f1) == 3


def test_classification_metrics_errors():
    """Test mismatched lengths and empty input are rejected."""
    with pytest.raises(DimensionMismatchException):
        classification_metrics([0, 1], [0], 2)
    with pytest.raises(UndefinedMetricException):
        classification_metrics([], [], 2)


@pytest.mark.parametrize("seed", range(200))
def test_auc_matches_pair_counting(seed: int):
    """Test the rank AUC equals pairwise counting with ties."""
    rng = np.random.default_rng(seed)
    size = int(rng.integers(2, 51))
    scores = np.round(rng.random(size), int(rng.integers(1, 3)))
    positive = rng.random(size) < rng.uniform(0.2, 0.8)
    positive[0], positive[-1] = True, False
    assert auc_binary(scores, positive) == pytest.approx(pair_counting_auc(scores, positive), abs=1e-12)


def test_auc_examples():
    """Test perfect, reversed and undefined rankings."""
    assert auc_binary(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])) == 1.0
    assert auc_binary(np.array([0.9, 0.8, 0.2, 0.1]), np.array([0, 0, 1, 1])) == 0.0
    assert auc_binary(np.array([0.5, 0.5]), np.array([0, 1])) == 0.5
    assert auc_binary(np.array([0.1, 0.2]), np.array([1, 1])) is None


def test_auc_ovr_excludes_single_outcome_classes():
    """Test classes without both outcomes are skipped."""
    probs = np.array([[0.8, 0.1, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1]])
    truth = [0, 1, 0]
    expected = np.mean([pair_counting_auc(probs[:, 0], [1, 0, 1]), pair_counting_auc(probs[:, 1], [0, 1, 0])])
    assert auc_ovr(probs, truth, 3) == pytest.approx(expected)


def test_auc_ovr_errors():
    """Test bad rows and all-one-class inputs are rejected."""
    with pytest.raises(ContractViolationException):
        auc_ovr(np.array([[0.5, 0.6], [0.5, 0.5]]), [0, 1], 2)
    with pytest.raises(UndefinedMetricException):
        auc_ovr(np.array([[0.5, 0.5], [0.4, 0.6]]), [1, 1], 2)


@pytest.mark.parametrize("seed", range(20))
def test_froc_matches_brute_force(seed: int):
    """Test FROC points and CPM equal a per-threshold recount over three slides."""
    rng = np.random.default_rng(seed)
    size = int(rng.integers(6, 40))
    scores = np.round(rng.random(size), 1)
    truth = rng.random(size) < 0.3
    truth[0] = True
    slide_ids = [f"s{i % 3}" for i in range(size)]
    curve = froc(scores, truth, slide_ids)
    expected = brute_force_froc(scores.tolist(), truth.tolist(), slide_ids)
    assert len(curve.points) == len(expected)
    for point, (threshold, fpi, sens) in zip(curve.points, expected):
        assert point.threshold == threshold
        assert point.fpi == pytest.approx(fpi)
        assert point.sensitivity == pytest.approx(sens)
    assert curve.points[-1].sensitivity == 1.0
    assert curve.n_slides == 3

    best = [max([s for _, f, s in expected if f <= target], default=0.0) for target in CPM_FPI]
    assert cpm(curve) == pytest.approx(sum(best) / len(CPM_FPI))



def test_froc_requires_tumor():
    """Test FROC without tumor instances is undefined."""
    with pytest.raises(UndefinedMetricException):
        froc(np.array([0.2, 0.4]), np.array([False, False]), ["a", "b"])


def test_cpm_examples():
    """Test CPM on hand-built curves."""
    perfect = curve_of((0.0, 1.0))
    assert cpm(perfect) == 1.0
    # sensitivity 0.5 from fpi 0.5 on, 1.0 from fpi 4 on
    stepped = curve_of((0.5, 0.5), (4.0, 1.0))
    assert cpm(stepped) == pytest.approx((0 + 0 + 0.5 + 0.5 + 0.5 + 1.0 + 1.0) / 7)
    late = curve_of((10.0, 1.0))
    assert cpm(late) == 0.0


def test_sensitivity_at_and_table():
    """Test the sensitivity readout and plot rows."""
    curve = curve_of((0.25, 0.4), (1.0, 0.8))
    assert sensitivity_at(curve, 0.125) == 0.0
    assert sensitivity_at(curve, 0.5) == 0.4
    assert sensitivity_at(curve, 8.0) == 0.8
    assert froc_table(curve) == [(0.25, 0.4), (1.0, 0.8)]
    assert len(CPM_FPI) == 7


def test_patch_metrics_without_tumor():
    """Test patch metrics leave CPM undefined when no patch is tumor."""
    probs = np.array([[0.9, 0.1], [0.8, 0.2]])
    result, curve = patch_metrics(probs, np.array([0, 0]), np.array([0, 0]), probs[:, 1], ["a", "a"], 2)
    assert result.acc == 1.0
    assert result.auc is None
    assert result.cpm is None
    assert curve is None


def test_patch_metrics_with_tumor():
    """Test all patch metrics are defined with both outcomes."""
    probs = np.array([[0.9, 0.1], [0.3, 0.7], [0.6, 0.4]])
    truth = np.array([0, 1, 1])
    result, curve = patch_metrics(probs, np.argmax(probs, axis=1), truth, probs[:, 1], ["a", "a", "b"], 2)
    assert result.auc == 1.0
    assert curve is not None
    assert result.cpm == pytest.approx(cpm(curve))
