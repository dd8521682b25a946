# query_loss.py
"""
Query-based supervision: synthetic set loss with confidence gates and
real set loss over Hungarian-matched ground-truth pairs
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import MatchingError, ShapeError
from .matching import (
    REAL_WEIGHTS,
    SYNTHETIC_WEIGHTS,
    GroundTruthPairs,
    MaskLossWeights,
    MatchResult,
    hungarian_match,
    mask_loss,
)
from .pixel_loss import DEFAULT_GAMMA
from .queries import QuerySet
from .transport import DEFAULT_PROB_FLOOR

DEFAULT_DELTA = 0.95


@dataclass
class QueryGrads:
    """Gradients with respect to class logits (N, k+1) and mask logits (N, H, W)."""

    scores: np.ndarray
    masks: np.ndarray

    @classmethod
    def zeros_like(cls, z: QuerySet) -> "QueryGrads":
        return cls(scores=np.zeros_like(z.scores), masks=np.zeros_like(z.masks))


def _class_term(
    scores: np.ndarray, cls: int, weight: float, prob_floor: float
) -> Tuple[float, np.ndarray]:
    loss = -weight * math.log(max(scores[cls], prob_floor))
    grad = weight * scores.copy()
    grad[cls] -= weight
    return loss, grad


def batch_confidence(pseudo: QuerySet) -> float:
    """Mean over all N pseudo pairs of their maximum class probability."""
    return float(pseudo.scores.max(axis=1).mean())


def synthetic_query_loss(
    pred_strong: QuerySet,
    pseudo: QuerySet,
    match: MatchResult,
    delta: float,
    per_query_conf: np.ndarray,
    weights: MaskLossWeights = SYNTHETIC_WEIGHTS,
    gamma: float = DEFAULT_GAMMA,
    prob_floor: float = DEFAULT_PROB_FLOOR,
) -> Tuple[float, QueryGrads]:
    """
    Set loss of strong-view predictions against OT-rectified pseudo pairs.

    The whole loss is zero when the batch confidence falls below delta.
    Otherwise each pseudo pair q contributes a classification term on its
    matched prediction, and a mask term when its confidence reaches gamma and
    its class is not no-object.

    Args:
        pred_strong: Predictions on the strong view
        pseudo: Pseudo-target pairs
        match: Matching of pseudo pairs (targets) to predictions
        delta: Batch-level confidence threshold
        per_query_conf: Per-pseudo-pair confidence, length N
        weights: Synthetic-branch weights (Dice off)
        gamma: Per-query mask gate

    Returns:
        (loss, gradients with respect to prediction logits)
    """
    per_query_conf = np.asarray(per_query_conf, dtype=np.float64)
    if per_query_conf.shape != (pseudo.num_queries,):
        raise ShapeError(f"need one confidence per pseudo pair, got shape {per_query_conf.shape}")
    if match.num_targets != pseudo.num_queries:
        raise ShapeError("match does not cover every pseudo pair")

    grads = QueryGrads.zeros_like(pred_strong)
    if batch_confidence(pseudo) < delta:
        return 0.0, grads

    classes = pseudo.target_classes()
    no_object = pseudo.no_object
    loss = 0.0
    for q, p in enumerate(match.assignment):
        cls = int(classes[q])
        cls_weight = weights.lambda_cls_obj if cls != no_object else weights.lambda_cls_noobj
        term, grad = _class_term(pred_strong.scores[p], cls, cls_weight, prob_floor)
        loss += term
        grads.scores[p] += grad
        if cls != no_object and per_query_conf[q] >= gamma:
            term, grad = mask_loss(pred_strong.masks[p], pseudo.masks[q], weights, prob_floor)
            loss += term
            grads.masks[p] += grad
    return loss, grads


def real_query_loss(
    pred: QuerySet,
    gt_pairs: GroundTruthPairs,
    weights: MaskLossWeights = REAL_WEIGHTS,
    prob_floor: float = DEFAULT_PROB_FLOOR,
    match: Optional[MatchResult] = None,
) -> Tuple[float, QueryGrads]:
    """
    Set loss against ground-truth (class, mask) pairs.

    Matched predictions get the object classification term and the full mask
    loss; unmatched predictions are pushed toward no-object.

    Raises:
        MatchingError: If there are more ground-truth pairs than queries
    """
    gt_pairs = list(gt_pairs)
    if len(gt_pairs) > pred.num_queries:
        raise MatchingError(f"{len(gt_pairs)} ground-truth pairs exceed {pred.num_queries} queries")
    match = match or hungarian_match(pred, gt_pairs, weights, prob_floor)

    grads = QueryGrads.zeros_like(pred)
    loss = 0.0
    for (cls, gt_mask), p in zip(gt_pairs, match.assignment):
        term, grad = _class_term(pred.scores[p], int(cls), weights.lambda_cls_obj, prob_floor)
        loss += term
        grads.scores[p] += grad
        term, grad = mask_loss(pred.masks[p], gt_mask, weights, prob_floor)
        loss += term
        grads.masks[p] += grad

    for p in match.unmatched_predictions(pred.num_queries):
        term, grad = _class_term(pred.scores[p], pred.no_object, weights.lambda_cls_noobj, prob_floor)
        loss += term
        grads.scores[p] += grad
    return loss, grads


def total_query_loss(l_s: float, l_r: float) -> float:
    """Average of the synthetic and real set losses."""
    if not (math.isfinite(l_s) and math.isfinite(l_r)):
        raise ValueError(f"losses must be finite, got ({l_s}, {l_r})")
    return 0.5 * (l_s + l_r)
