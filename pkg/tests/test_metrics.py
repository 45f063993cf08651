import itertools

import numpy as np
import pytest

from wavpool.metrics import accuracy, aggregate, binary_auc, confusion, f1_macro, roc_auc_macro


def test_all_correct():
    y = np.array([0, 1, 2, 2, 1])
    assert accuracy(y, y) == 1.0
    assert f1_macro(y, y) == 1.0


def test_constant_prediction_balanced():
    y = np.array([0, 0, 1, 1])
    p = np.zeros(4, dtype=int)
    assert accuracy(p, y) == 0.5
    assert f1_macro(p, y) == pytest.approx(1 / 3, abs=1e-12)


def test_confusion_swapped():
    assert confusion([1, 0], [0, 1]).tolist() == [[0, 1], [1, 0]]


def test_confusion_rows_are_true_class():
    cm = confusion([2, 2, 0], [0, 2, 0], num_classes=3)
    assert cm[0].tolist() == [1, 0, 1]
    assert cm.sum() == 3


def test_accuracy_is_trace_over_n(rng):
    y, p = rng.integers(0, 5, 200), rng.integers(0, 5, 200)
    assert accuracy(p, y) == pytest.approx(np.trace(confusion(p, y, 5)) / 200, abs=1e-15)


def test_auc_perfect():
    labels = np.array([0, 1, 2, 0, 1, 2])
    assert roc_auc_macro(np.eye(3)[labels], labels) == 1.0


def test_auc_equal_scores():
    labels = np.array([0, 1, 2, 0, 1, 2])
    assert roc_auc_macro(np.full((6, 3), 0.2), labels) == 0.5


def pairwise_auc(scores, positive):
    pos, neg = scores[positive], scores[~positive]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def test_binary_auc_matches_pairwise(rng):
    scores = rng.integers(0, 6, 40).astype(float)  # deliberate ties
    positive = rng.random(40) < 0.4
    assert binary_auc(scores, positive) == pytest.approx(pairwise_auc(scores, positive), abs=1e-12)


def test_macro_auc_matches_pairwise(rng):
    scores = rng.random((60, 4))
    labels = rng.integers(0, 4, 60)
    ref = np.mean([pairwise_auc(scores[:, k], labels == k) for k in range(4)])
    assert roc_auc_macro(scores, labels) == pytest.approx(ref, abs=1e-12)


def test_auc_monotone_invariance(rng):
    scores = rng.normal(size=(50, 3))
    labels = rng.integers(0, 3, 50)
    assert roc_auc_macro(np.exp(3 * scores) + 1, labels) == pytest.approx(roc_auc_macro(scores, labels), abs=1e-12)


def test_auc_skips_absent_class(rng):
    scores = rng.random((20, 3))
    labels = rng.integers(0, 2, 20)
    ref = np.mean([pairwise_auc(scores[:, k], labels == k) for k in range(2)])
    assert roc_auc_macro(scores, labels) == pytest.approx(ref, abs=1e-12)


def test_auc_single_class_rejected():
    with pytest.raises(ValueError):
        roc_auc_macro(np.random.default_rng(0).random((4, 3)), [1, 1, 1, 1])


def test_auc_nonfinite_rejected():
    with pytest.raises(ValueError):
        roc_auc_macro(np.array([[np.nan, 0.0], [0.0, 1.0]]), [0, 1])


def test_aggregate():
    agg = aggregate([0.9, 0.91, 0.92])
    assert agg["mean"] == pytest.approx(0.91, abs=1e-12)
    assert agg["spread"] == pytest.approx(0.01, abs=1e-12)
    assert agg["std"] == pytest.approx(np.std([0.9, 0.91, 0.92]), abs=1e-15)
    assert aggregate([0.5, 0.5, 0.5])["spread"] == 0.0


def test_mismatched_lengths():
    with pytest.raises(ValueError):
        accuracy([0, 1], [0])
