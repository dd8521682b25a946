import numpy as np
import pytest

from otlabel.ot_assign.errors import EvaluationError, ShapeError
from otlabel.toy.metrics import ConfusionMatrix


def test_perfect_prediction():
    labels = np.array([[0, 1], [2, 2]])
    cm = ConfusionMatrix(3)
    cm.add(labels, labels)
    per_class, miou = cm.iou()
    np.testing.assert_array_equal(per_class, [1.0, 1.0, 1.0])
    assert miou == 1.0
    assert cm.pixel_accuracy() == 1.0


def test_complement_prediction():
    labels = np.array([[0, 1], [1, 0]])
    cm = ConfusionMatrix(2)
    cm.add(1 - labels, labels)
    assert cm.iou()[1] == 0.0


def test_hand_computed_case():
    labels = np.array([
        [0, 0, 1, 1],
        [0, 0, 1, 1],
        [2, 2, 2, 2],
        [2, 2, 255, 255],
    ])
    preds = np.array([
        [0, 1, 1, 1],
        [0, 0, 1, 2],
        [2, 2, 2, 2],
        [0, 2, 1, 1],
    ])
    cm = ConfusionMatrix(3)
    cm.add(preds, labels)
    per_class, miou = cm.iou()
    # class 0: tp 3, fp 1, fn 1; class 1: tp 3, fp 1, fn 1; class 2: tp 5, fp 1, fn 1
    np.testing.assert_allclose(per_class, [3 / 5, 3 / 5, 5 / 7])
    assert miou == pytest.approx((3 / 5 + 3 / 5 + 5 / 7) / 3)
    assert cm.total == 14


def test_absent_class_is_nan_and_excluded():
    labels = np.array([0, 0, 1, 1])
    cm = ConfusionMatrix(3)
    cm.add(labels, labels)
    per_class, miou = cm.iou()
    assert np.isnan(per_class[2])
    assert miou == 1.0


def test_accumulates_over_batches():
    cm = ConfusionMatrix(2)
    cm.add(np.array([0, 1]), np.array([0, 1]))
    cm.add(np.array([0, 0]), np.array([1, 1]))
    assert cm.total == 4
    np.testing.assert_allclose(cm.iou()[0], [1 / 3, 1 / 3])


def test_empty_evaluation_raises():
    cm = ConfusionMatrix(2)
    cm.add(np.array([0]), np.array([255]))
    with pytest.raises(EvaluationError):
        cm.iou()


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        ConfusionMatrix(2).add(np.zeros(3), np.zeros(4))


def test_out_of_range_prediction_raises():
    cm = ConfusionMatrix(3)
    with pytest.raises(ValueError):
        cm.add(np.array([0, 3]), np.array([0, 1]))
    with pytest.raises(ValueError):
        cm.add(np.array([-1]), np.array([2]))
    cm.add(np.array([0, 7]), np.array([0, 255]))
    assert cm.total == 1
