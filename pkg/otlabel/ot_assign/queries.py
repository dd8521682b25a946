# queries.py
"""
Query sets for set-prediction segmentation
Per-pixel semantic aggregation over queries, OT-rectified pseudo pairs,
and ground-truth (class, mask) pairs decomposed from label maps
"""

from dataclasses import dataclass
from typing import List, Tuple

import cv2
import numpy as np

from .errors import ShapeError, SimplexError
from .pixel_loss import IGNORE_INDEX
from .transport import LayoutDescriptor, SIMPLEX_ATOL, validate_prob_matrix

DEFAULT_NUM_QUERIES = 100
DEFAULT_BINARIZE_TAU = 0.5


@dataclass(frozen=True)
class QuerySet:
    """
    N (class distribution, soft mask) pairs.

    scores has shape (N, k + 1); column k is the "no-object" class.
    masks has shape (N, H, W) with values in [0, 1].
    """

    scores: np.ndarray
    masks: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        masks = np.asarray(self.masks, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] < 1 or scores.shape[1] < 2:
            raise ShapeError(f"scores must be (N >= 1, k + 1 >= 2), got {scores.shape}")
        if masks.ndim != 3 or masks.shape[0] != scores.shape[0] or 0 in masks.shape:
            raise ShapeError(f"masks must be (N, H, W) matching scores, got {masks.shape}")
        validate_prob_matrix(scores, atol=SIMPLEX_ATOL)
        if masks.min() < 0.0 or masks.max() > 1.0:
            raise SimplexError("mask values must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "masks", masks)

    @property
    def num_queries(self) -> int:
        return self.scores.shape[0]

    @property
    def num_classes(self) -> int:
        """Number of object classes k (the no-object column excluded)."""
        return self.scores.shape[1] - 1

    @property
    def no_object(self) -> int:
        return self.num_classes

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        n, h, w = self.masks.shape
        return n, self.num_classes, h, w

    def target_classes(self) -> np.ndarray:
        """Hard class of every pair (k means no-object)."""
        return self.scores.argmax(axis=1)


def aggregate_semantics(z: QuerySet) -> np.ndarray:
    """
    Per-pixel class evidence summed over queries, no-object excluded.

    out[j, h, w] = sum_q s_q(j) * m_q(h, w); not normalized.
    """
    k = z.num_classes
    return np.einsum("qj,qhw->jhw", z.scores[:, :k], z.masks)


def normalize_semantics(raw: np.ndarray) -> np.ndarray:
    """
    Turn an aggregated (k, H, W) map into per-pixel class distributions.

    Pixels with zero total mass get the uniform distribution.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or 0 in raw.shape:
        raise ShapeError(f"aggregate must be (k, H, W), got {raw.shape}")
    if raw.min() < 0:
        raise SimplexError("aggregated semantics must be nonnegative")
    k = raw.shape[0]
    total = raw.sum(axis=0)
    positive = total > 0
    safe_total = np.where(positive, total, 1.0)
    return np.where(positive[None], raw / safe_total[None], 1.0 / k)


def _image_plan(plan_q: np.ndarray, layout: LayoutDescriptor, image_index: int, teacher: QuerySet) -> np.ndarray:
    plan_q = validate_prob_matrix(plan_q)
    grid = layout.unflatten(plan_q)
    if not 0 <= image_index < layout.batch:
        raise ShapeError(f"image index {image_index} outside batch of {layout.batch}")
    q = grid[image_index]
    _, k, h, w = teacher.shape
    if q.shape != (k, h, w):
        raise ShapeError(f"plan grid {q.shape} does not match query set {(k, h, w)}")
    return q


def derive_pseudo_pairs(
    teacher: QuerySet,
    plan_q: np.ndarray,
    layout: LayoutDescriptor,
    binarize_tau: float = DEFAULT_BINARIZE_TAU,
    image_index: int = 0,
) -> QuerySet:
    """
    Rectify teacher query pairs with the transported per-pixel distributions.

    Masks are binarized at tau. Each query's object-class distribution becomes
    the class mass transported onto its binarized mask, scaled to share
    1 - s_q(no-object) while the no-object mass is kept. Queries whose mask
    is empty after binarization keep the teacher pair unchanged.

    Args:
        teacher: Teacher query set on the weak view
        plan_q: n x k row-normalized transport plan
        layout: Row layout of plan_q
        binarize_tau: Mask threshold in (0, 1)
        image_index: Image of the batch this query set belongs to

    Returns:
        Pseudo-target QuerySet
    """
    if not 0.0 < binarize_tau < 1.0:
        raise ValueError(f"binarize_tau must lie in (0, 1), got {binarize_tau}")
    q = _image_plan(plan_q, layout, image_index, teacher)
    k = teacher.num_classes

    hard = (teacher.masks >= binarize_tau).astype(np.float64)
    mass = np.einsum("qhw,jhw->qj", hard, q)
    total = mass.sum(axis=1)
    rectify = (hard.reshape(teacher.num_queries, -1).sum(axis=1) > 0) & (total > 0)

    scores = teacher.scores.copy()
    masks = hard.copy()
    phi = teacher.scores[:, k]
    safe_total = np.where(rectify, total, 1.0)
    rectified = (1.0 - phi)[:, None] * mass / safe_total[:, None]
    scores[rectify, :k] = rectified[rectify]
    masks[~rectify] = teacher.masks[~rectify]
    return QuerySet(scores=scores, masks=masks)


def pseudo_pair_confidence(
    teacher: QuerySet,
    plan_q: np.ndarray,
    layout: LayoutDescriptor,
    binarize_tau: float = DEFAULT_BINARIZE_TAU,
    image_index: int = 0,
) -> np.ndarray:
    """Per-query mean of max_j Q(h, w, j) over the binarized mask; 0 for empty masks."""
    q = _image_plan(plan_q, layout, image_index, teacher)
    peak = q.max(axis=0)
    hard = (teacher.masks >= binarize_tau).astype(np.float64)
    area = hard.reshape(teacher.num_queries, -1).sum(axis=1)
    weighted = np.einsum("qhw,hw->q", hard, peak)
    return np.where(area > 0, weighted / np.where(area > 0, area, 1.0), 0.0)


def label_map_to_pairs(
    labels: np.ndarray,
    num_classes: int,
    ignore_value: int = IGNORE_INDEX,
) -> List[Tuple[int, np.ndarray]]:
    """
    Decompose a label map into (class, hard mask) pairs.

    Every class region is split into 4-connected components; pairs are
    ordered by class, then by component in raster order.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"label map must be 2-D, got shape {labels.shape}")
    pairs = []
    for cls in range(num_classes):
        if cls == ignore_value:
            continue
        region = (labels == cls).astype(np.uint8)
        if not region.any():
            continue
        count, components = cv2.connectedComponents(region, connectivity=4)
        for idx in range(1, count):
            pairs.append((cls, (components == idx).astype(np.float64)))
    return pairs
