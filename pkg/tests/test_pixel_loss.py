import logging

import numpy as np
import pytest
from scipy.special import softmax

from otlabel.ot_assign.errors import ShapeError
from otlabel.ot_assign.pixel_loss import (
    IGNORE_INDEX,
    GateMask,
    LabelGrid,
    PseudoLabelGrid,
    argmax_pseudo_labels,
    confidence_gate,
    gate_fraction,
    make_pseudo_labels,
    real_pixel_loss,
    synthetic_pixel_loss,
    total_pixel_loss,
)
from otlabel.ot_assign.transport import LayoutDescriptor, build_cost_matrix, sinkhorn_solve


def test_one_hot_probabilities_pass_gate():
    p = np.eye(4)[[0, 1, 2, 3, 1]]
    gate = confidence_gate(p, 0.95)
    assert gate.fraction == 1.0


def test_uniform_probabilities_fail_gate():
    gate = confidence_gate(np.full((10, 19), 1 / 19), 0.95)
    assert gate.fraction == 0.0


def test_gate_extremes(rng, random_probs):
    p = random_probs(rng, 50, 4)
    assert confidence_gate(p, 0.0).flags.all()
    assert not confidence_gate(p, 1.0).flags.any()
    gate = confidence_gate(p, 0.6)
    np.testing.assert_array_equal(gate.flags, p.max(axis=1) >= 0.6)
    with pytest.raises(ValueError):
        confidence_gate(p, 1.5)


def test_pseudo_labels_are_row_normalized_plan(rng, random_probs):
    layout = LayoutDescriptor(batch=2, height=3, width=4)
    p = random_probs(rng, layout.n, 5)
    plan = sinkhorn_solve(build_cost_matrix(p))
    pl = make_pseudo_labels(plan, confidence_gate(p, 0.5), layout)
    np.testing.assert_allclose(pl.q.sum(axis=1), 1.0)
    np.testing.assert_allclose(pl.q * plan.data.sum(axis=1, keepdims=True), plan.data)
    assert pl.argmax_grid().shape == (2, 3, 4)


def test_argmax_grid_marks_gated_out_pixels():
    layout = LayoutDescriptor(batch=1, height=1, width=3)
    q = np.array([[0.9, 0.1], [0.2, 0.8], [0.4, 0.6]])
    pl = PseudoLabelGrid(q=q, gate=GateMask(np.array([True, True, False]), 0.95), layout=layout)
    np.testing.assert_array_equal(pl.argmax_grid(), [[[0, 1, IGNORE_INDEX]]])
    np.testing.assert_array_equal(pl.argmax_grid(ignore_gated=False), [[[0, 1, 1]]])


def test_argmax_pseudo_labels_are_one_hot(rng, random_probs):
    layout = LayoutDescriptor(batch=1, height=2, width=5)
    p = random_probs(rng, layout.n, 3)
    pl = argmax_pseudo_labels(p, confidence_gate(p, 0.0), layout)
    np.testing.assert_array_equal(pl.q.argmax(axis=1), p.argmax(axis=1))
    np.testing.assert_array_equal(pl.q.sum(axis=1), 1.0)


def test_synthetic_loss_gradient_matches_finite_differences(rng, random_probs, fd_grad):
    for _ in range(10):
        layout = LayoutDescriptor(batch=1, height=3, width=4)
        n, k = layout.n, int(rng.integers(2, 6))
        q = random_probs(rng, n, k)
        gate = GateMask(rng.random(n) < 0.6, 0.95)
        pl = PseudoLabelGrid(q=q, gate=gate, layout=layout)
        logits = rng.normal(0.0, 1.0, size=(n, k))

        _, grad = synthetic_pixel_loss(pl, softmax(logits, axis=1))
        numeric = fd_grad(lambda z: synthetic_pixel_loss(pl, softmax(z, axis=1))[0], logits)
        np.testing.assert_allclose(grad, numeric, atol=1e-4)


def test_synthetic_loss_is_zero_when_nothing_passes_gate(rng, random_probs):
    layout = LayoutDescriptor(batch=1, height=2, width=2)
    p = random_probs(rng, 4, 3)
    pl = PseudoLabelGrid(q=p, gate=GateMask(np.zeros(4, dtype=bool), 1.0), layout=layout)
    loss, grad = synthetic_pixel_loss(pl, p)
    assert loss == 0.0
    assert not grad.any()


def test_real_loss_gradient_matches_finite_differences(rng, fd_grad):
    for _ in range(10):
        layout = LayoutDescriptor(batch=2, height=2, width=3)
        k = int(rng.integers(2, 6))
        labels = rng.integers(0, k, size=(2, 2, 3))
        labels[rng.random(labels.shape) < 0.3] = IGNORE_INDEX
        labels[0, 0, 0] = 0
        grid = LabelGrid(labels)
        logits = rng.normal(0.0, 1.0, size=(layout.n, k))

        _, grad = real_pixel_loss(grid, softmax(logits, axis=1), layout)
        numeric = fd_grad(lambda z: real_pixel_loss(grid, softmax(z, axis=1), layout)[0], logits)
        np.testing.assert_allclose(grad, numeric, atol=1e-4)


def test_real_loss_averages_over_labeled_pixels_only():
    layout = LayoutDescriptor(batch=1, height=1, width=3)
    p = np.array([[0.5, 0.5], [0.25, 0.75], [0.9, 0.1]])
    labels = LabelGrid(np.array([[[0, 1, IGNORE_INDEX]]]))
    loss, grad = real_pixel_loss(labels, p, layout)
    assert loss == pytest.approx(-(np.log(0.5) + np.log(0.75)) / 2)
    assert not grad[2].any()


def test_all_ignored_labels_give_zero_loss(caplog):
    layout = LayoutDescriptor(batch=1, height=2, width=2)
    labels = LabelGrid(np.full((1, 2, 2), IGNORE_INDEX))
    with caplog.at_level(logging.WARNING):
        loss, grad = real_pixel_loss(labels, np.full((4, 3), 1 / 3), layout)
    assert loss == 0.0
    assert not grad.any()
    assert "ignore" in caplog.text


def test_out_of_range_label_rejected():
    layout = LayoutDescriptor(batch=1, height=1, width=2)
    with pytest.raises(ValueError):
        real_pixel_loss(LabelGrid(np.array([[[0, 7]]])), np.full((2, 3), 1 / 3), layout)


def test_shape_mismatch_rejected(rng, random_probs):
    layout = LayoutDescriptor(batch=1, height=2, width=2)
    p = random_probs(rng, 4, 3)
    pl = PseudoLabelGrid(q=p, gate=GateMask(np.ones(4, dtype=bool), 0.5), layout=layout)
    with pytest.raises(ShapeError):
        synthetic_pixel_loss(pl, random_probs(rng, 4, 2))
    with pytest.raises(ShapeError):
        PseudoLabelGrid(q=p, gate=GateMask(np.ones(3, dtype=bool), 0.5), layout=layout)


def test_total_loss_is_average():
    assert total_pixel_loss(1.0, 3.0) == 2.0
    with pytest.raises(ValueError):
        total_pixel_loss(float("nan"), 1.0)


def test_gate_fraction_among_valid_pixels():
    gate = GateMask(np.array([True, False, True, True]), 0.0)
    assert gate_fraction(gate) == 0.75
    assert gate_fraction(gate, valid=np.array([True, False, True, False])) == 1.0
    assert gate_fraction(gate, valid=np.zeros(4, dtype=bool)) == 0.0
