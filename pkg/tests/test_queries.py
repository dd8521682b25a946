import numpy as np
import pytest

from otlabel.ot_assign.errors import ShapeError, SimplexError
from otlabel.ot_assign.pixel_loss import IGNORE_INDEX
from otlabel.ot_assign.queries import (
    QuerySet,
    aggregate_semantics,
    derive_pseudo_pairs,
    label_map_to_pairs,
    normalize_semantics,
    pseudo_pair_confidence,
)
from otlabel.ot_assign.transport import LayoutDescriptor


def test_aggregation_matches_direct_summation(rng, random_query_set):
    for _ in range(20):
        n, k, h, w = (int(v) for v in rng.integers(1, 6, size=4))
        k += 1
        z, _, _ = random_query_set(rng, n, k, h, w)
        direct = np.zeros((k, h, w))
        for q in range(n):
            for j in range(k):
                direct[j] += z.scores[q, j] * z.masks[q]
        np.testing.assert_allclose(aggregate_semantics(z), direct, atol=1e-12)


def test_normalization_keeps_argmax_and_sums_to_one(rng, random_query_set):
    z, _, _ = random_query_set(rng, 6, 4, 5, 5)
    raw = aggregate_semantics(z)
    norm = normalize_semantics(raw)
    np.testing.assert_allclose(norm.sum(axis=0), 1.0)
    positive = raw.sum(axis=0) > 0
    np.testing.assert_array_equal(norm.argmax(axis=0)[positive], raw.argmax(axis=0)[positive])


def test_zero_mass_pixels_become_uniform():
    raw = np.zeros((3, 2, 2))
    raw[1, 0, 0] = 2.0
    norm = normalize_semantics(raw)
    np.testing.assert_allclose(norm[:, 0, 0], [0.0, 1.0, 0.0])
    np.testing.assert_allclose(norm[:, 1, 1], 1 / 3)


def test_query_set_validation():
    with pytest.raises(ShapeError):
        QuerySet(scores=np.full((2, 3), 1 / 3), masks=np.zeros((3, 2, 2)))
    with pytest.raises(SimplexError):
        QuerySet(scores=np.full((1, 2), 0.5), masks=np.full((1, 2, 2), 1.5))
    z = QuerySet(scores=np.full((2, 4), 0.25), masks=np.zeros((2, 3, 5)))
    assert z.num_classes == 3
    assert z.no_object == 3
    assert z.shape == (2, 3, 3, 5)


def _plan_grid(q_map: np.ndarray):
    """(k, H, W) distributions -> (H*W, k) plan rows and a single-image layout."""
    k, h, w = q_map.shape
    return q_map.transpose(1, 2, 0).reshape(-1, k), LayoutDescriptor(batch=1, height=h, width=w)


def test_pseudo_pairs_take_transported_class_mass():
    k, h, w = 2, 2, 2
    masks = np.zeros((2, h, w))
    masks[0, 0, :] = 0.9  # top row
    masks[1] = 0.1  # empty after binarization
    scores = np.array([[0.3, 0.3, 0.4], [0.2, 0.5, 0.3]])
    teacher = QuerySet(scores=scores, masks=masks)

    q_map = np.zeros((k, h, w))
    q_map[0] = 0.75
    q_map[1] = 0.25
    plan_q, layout = _plan_grid(q_map)

    pseudo = derive_pseudo_pairs(teacher, plan_q, layout)
    np.testing.assert_allclose(pseudo.scores[0], [0.6 * 0.75, 0.6 * 0.25, 0.4])
    np.testing.assert_array_equal(pseudo.masks[0], [[1.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(pseudo.scores[1], scores[1])
    np.testing.assert_array_equal(pseudo.masks[1], masks[1])


def test_pseudo_pairs_are_valid_query_sets(rng, random_query_set, random_probs):
    teacher, _, _ = random_query_set(rng, 5, 3, 4, 4)
    layout = LayoutDescriptor(batch=2, height=4, width=4)
    plan_q = random_probs(rng, layout.n, 3)
    pseudo = derive_pseudo_pairs(teacher, plan_q, layout, image_index=1)
    np.testing.assert_allclose(pseudo.scores.sum(axis=1), 1.0)
    np.testing.assert_array_equal(pseudo.scores[:, -1], teacher.scores[:, -1])
    assert set(np.unique(pseudo.masks)) <= {0.0, 1.0} | set(np.unique(teacher.masks))


def test_pseudo_pair_confidence():
    masks = np.zeros((2, 1, 2))
    masks[0, 0, 0] = 1.0
    teacher = QuerySet(scores=np.full((2, 3), 1 / 3), masks=masks)
    q_map = np.array([[[0.9, 0.5]], [[0.1, 0.5]]])
    plan_q, layout = _plan_grid(q_map)
    np.testing.assert_allclose(pseudo_pair_confidence(teacher, plan_q, layout), [0.9, 0.0])


def test_plan_must_match_query_grid(rng, random_query_set, random_probs):
    teacher, _, _ = random_query_set(rng, 2, 3, 4, 4)
    layout = LayoutDescriptor(batch=1, height=3, width=3)
    with pytest.raises(ShapeError):
        derive_pseudo_pairs(teacher, random_probs(rng, 9, 3), layout)
    with pytest.raises(ValueError):
        derive_pseudo_pairs(teacher, random_probs(rng, 16, 3), LayoutDescriptor(1, 4, 4), binarize_tau=1.0)


def test_label_map_splits_connected_components():
    labels = np.array([
        [1, 1, 0, 1],
        [0, 0, 0, 1],
        [2, 0, IGNORE_INDEX, 0],
        [0, 1, 0, 0],
    ])
    pairs = label_map_to_pairs(labels, num_classes=3)
    assert [cls for cls, _ in pairs] == [0, 0, 0, 1, 1, 1, 2]
    for cls, mask in pairs:
        assert np.all(labels[mask == 1] == cls)
    covered = sum(mask for _, mask in pairs)
    np.testing.assert_array_equal(covered == 0, labels == IGNORE_INDEX)


def test_diagonal_neighbours_are_separate_components():
    labels = np.array([[1, 0], [0, 1]])
    pairs = label_map_to_pairs(labels, num_classes=2)
    assert [cls for cls, _ in pairs] == [0, 0, 1, 1]
