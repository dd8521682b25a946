# matching.py
"""
Binary mask losses and Hungarian matching between predicted and target pairs
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import linear_sum_assignment

from .errors import MatchingError, ShapeError
from .queries import QuerySet
from .transport import DEFAULT_PROB_FLOOR

DICE_EPS = 1e-6
TIE_RTOL = 1e-10


class MaskLossWeights(BaseModel):
    """Weights of the mask (BCE, Dice) and classification terms."""

    model_config = ConfigDict(frozen=True)

    lambda_ce: float = Field(5.0, ge=0)
    lambda_dice: float = Field(5.0, ge=0)
    lambda_cls_obj: float = Field(2.0, ge=0)
    lambda_cls_noobj: float = Field(0.1, ge=0)


# Real data: full BCE + Dice; synthetic data drops Dice and down-weights no-object
REAL_WEIGHTS = MaskLossWeights(lambda_ce=5.0, lambda_dice=5.0, lambda_cls_obj=2.0, lambda_cls_noobj=0.1)
SYNTHETIC_WEIGHTS = MaskLossWeights(lambda_ce=5.0, lambda_dice=0.0, lambda_cls_obj=2.0, lambda_cls_noobj=0.02)

GroundTruthPairs = Sequence[Tuple[int, np.ndarray]]


@dataclass(frozen=True)
class MatchResult:
    """assignment[t] is the prediction matched to target t."""

    assignment: np.ndarray
    total_cost: float

    @property
    def num_targets(self) -> int:
        return self.assignment.shape[0]

    def unmatched_predictions(self, num_predictions: int) -> np.ndarray:
        matched = np.zeros(num_predictions, dtype=bool)
        matched[self.assignment] = True
        return np.flatnonzero(~matched)


def mask_loss(
    m_pred: np.ndarray,
    m_target: np.ndarray,
    weights: MaskLossWeights,
    prob_floor: float = DEFAULT_PROB_FLOOR,
) -> Tuple[float, np.ndarray]:
    """
    Weighted BCE + Dice loss of a soft mask against a target mask.

    BCE = mean(-[t log m + (1 - t) log(1 - m)]) with both logs clamped,
    Dice = 1 - 2 sum(m t) / (sum m + sum t + eps).

    Returns:
        (loss, gradient with respect to the mask logits, m = sigmoid(logit))
    """
    m = np.asarray(m_pred, dtype=np.float64)
    t = np.asarray(m_target, dtype=np.float64)
    if m.shape != t.shape:
        raise ShapeError(f"mask shapes differ: {m.shape} vs {t.shape}")

    size = m.size
    bce = -float(np.mean(
        t * np.log(np.maximum(m, prob_floor)) + (1.0 - t) * np.log(np.maximum(1.0 - m, prob_floor))
    ))
    grad_bce = (m - t) / size

    denom = m.sum() + t.sum() + DICE_EPS
    inter = float(np.sum(m * t))
    dice = 1.0 - 2.0 * inter / denom
    grad_dice = -(2.0 * t * denom - 2.0 * inter) / denom ** 2 * m * (1.0 - m)

    loss = weights.lambda_ce * bce + weights.lambda_dice * dice
    grad = weights.lambda_ce * grad_bce + weights.lambda_dice * grad_dice
    return float(loss), grad


def pairwise_mask_cost(
    pred_masks: np.ndarray,
    target_masks: np.ndarray,
    weights: MaskLossWeights,
    prob_floor: float = DEFAULT_PROB_FLOOR,
) -> np.ndarray:
    """mask_loss for every (target, prediction) pair, shape (G, N)."""
    m = pred_masks.reshape(pred_masks.shape[0], -1)
    t = target_masks.reshape(target_masks.shape[0], -1)
    size = m.shape[1]

    log_m = np.log(np.maximum(m, prob_floor))
    log_1m = np.log(np.maximum(1.0 - m, prob_floor))
    bce = -(t @ log_m.T + (1.0 - t) @ log_1m.T) / size

    inter = t @ m.T
    denom = t.sum(axis=1)[:, None] + m.sum(axis=1)[None, :] + DICE_EPS
    dice = 1.0 - 2.0 * inter / denom
    return weights.lambda_ce * bce + weights.lambda_dice * dice


def _targets(target: Union[QuerySet, GroundTruthPairs], pred: QuerySet) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(target, QuerySet):
        if target.num_classes != pred.num_classes or target.masks.shape[1:] != pred.masks.shape[1:]:
            raise ShapeError("target and prediction query sets differ in k, H or W")
        return target.target_classes(), target.masks
    pairs = list(target)
    h, w = pred.masks.shape[1:]
    if not pairs:
        return np.zeros(0, dtype=np.int64), np.zeros((0, h, w))
    classes = np.array([cls for cls, _ in pairs], dtype=np.int64)
    masks = np.stack([np.asarray(mask, dtype=np.float64) for _, mask in pairs])
    if masks.shape[1:] != (h, w):
        raise ShapeError(f"ground-truth masks {masks.shape[1:]} do not match predictions {(h, w)}")
    if np.any(classes < 0) or np.any(classes >= pred.num_classes):
        raise ValueError(f"ground-truth classes must lie in [0, {pred.num_classes})")
    return classes, masks


def matching_cost_matrix(
    pred: QuerySet,
    target_classes: np.ndarray,
    target_masks: np.ndarray,
    weights: MaskLossWeights,
    prob_floor: float = DEFAULT_PROB_FLOOR,
) -> np.ndarray:
    """
    Cost of matching target t to prediction p, shape (G, N).

    -lambda_cls * log s_p(class_t), plus the mask loss for object targets.
    """
    no_object = pred.no_object
    is_object = target_classes != no_object
    cls_weight = np.where(is_object, weights.lambda_cls_obj, weights.lambda_cls_noobj)
    log_s = np.log(np.maximum(pred.scores, prob_floor))
    cost = -cls_weight[:, None] * log_s[:, target_classes].T
    if is_object.any():
        mask_cost = pairwise_mask_cost(pred.masks, target_masks[is_object], weights, prob_floor)
        cost[is_object] += mask_cost
    return cost


def _optimum(cost: np.ndarray) -> float:
    if cost.shape[0] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def lexicographic_assignment(cost: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Minimum-cost assignment of every row to a distinct column.

    Among optimal assignments, returns the lexicographically smallest
    (row 0's column first, then row 1's, ...).

    Args:
        cost: (G, N) matrix with G <= N

    Returns:
        (column index per row, optimal total cost)
    """
    g, n = cost.shape
    if g == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(g, dtype=np.int64)
    assignment[rows] = cols
    best = float(cost[rows, cols].sum())
    slack = TIE_RTOL * max(1.0, abs(best))

    fixed = 0.0
    free: List[int] = list(range(n))
    for t in range(g):
        for p in free:
            if p >= assignment[t]:
                break
            rest = [c for c in free if c != p]
            sub = cost[t + 1:][:, rest]
            if fixed + cost[t, p] + _optimum(sub) <= best + slack:
                assignment[t] = p
                if sub.shape[0]:
                    r, c = linear_sum_assignment(sub)
                    assignment[t + 1 + r] = np.asarray(rest)[c]
                break
        fixed += cost[t, assignment[t]]
        free.remove(int(assignment[t]))
    return assignment, float(cost[np.arange(g), assignment].sum())


def hungarian_match(
    pred: QuerySet,
    target: Union[QuerySet, GroundTruthPairs],
    weights: MaskLossWeights,
    prob_floor: float = DEFAULT_PROB_FLOOR,
) -> MatchResult:
    """
    Exact minimum-cost bipartite matching of targets to predictions.

    Args:
        pred: Predicted query set
        target: Pseudo-target query set, or ground-truth (class, mask) pairs
        weights: Loss weights of the branch, reused as matching-cost weights

    Returns:
        MatchResult with a deterministic lexicographic tie-break

    Raises:
        MatchingError: If there are more targets than predictions
    """
    classes, masks = _targets(target, pred)
    if classes.shape[0] > pred.num_queries:
        raise MatchingError(f"{classes.shape[0]} targets cannot be matched to {pred.num_queries} predictions")
    cost = matching_cost_matrix(pred, classes, masks, weights, prob_floor)
    assignment, total = lexicographic_assignment(cost)
    return MatchResult(assignment=assignment, total_cost=total)
