# pixel_loss.py
"""
Pixel-based supervision built on transport plans
Confidence-gated pseudo-labels for synthetic images
Synthetic / real cross-entropy losses with analytic logit gradients
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ShapeError
from .transport import (
    DEFAULT_PROB_FLOOR,
    LayoutDescriptor,
    TransportPlan,
    plan_row_normalize,
    validate_prob_matrix,
)

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.95
IGNORE_INDEX = 255


@dataclass(frozen=True)
class GateMask:
    """Per-pixel flags: max_j p_weak[i, j] >= gamma."""

    flags: np.ndarray
    gamma: float

    @property
    def n(self) -> int:
        return self.flags.shape[0]

    @property
    def fraction(self) -> float:
        return float(self.flags.mean()) if self.flags.size else 0.0


@dataclass(frozen=True)
class PseudoLabelGrid:
    """Row-normalized transport plan plus gate and layout; target for synthetic pixels."""

    q: np.ndarray
    gate: GateMask
    layout: LayoutDescriptor

    def __post_init__(self):
        q = validate_prob_matrix(self.q)
        if not (q.shape[0] == self.gate.n == self.layout.n):
            raise ShapeError(
                f"pseudo-label rows ({q.shape[0]}), gate ({self.gate.n}) "
                f"and layout ({self.layout.n}) disagree on n"
            )
        object.__setattr__(self, "q", q)

    @property
    def k(self) -> int:
        return self.q.shape[1]

    def argmax_grid(self, ignore_gated: bool = True) -> np.ndarray:
        """(b, H, W) hard labels; gated-out pixels get IGNORE_INDEX."""
        labels = self.q.argmax(axis=1)
        if ignore_gated:
            labels = np.where(self.gate.flags, labels, IGNORE_INDEX)
        return self.layout.to_grid(labels)


@dataclass(frozen=True)
class LabelGrid:
    """Integer label map (b, H, W); ignore_value marks unlabeled pixels."""

    labels: np.ndarray
    ignore_value: int = IGNORE_INDEX

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ShapeError(f"label grid must be (b, H, W), got shape {labels.shape}")
        object.__setattr__(self, "labels", labels.astype(np.int64))

    def validate(self, num_classes: int):
        valid = self.labels != self.ignore_value
        if np.any(self.labels[valid] < 0) or np.any(self.labels[valid] >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes}) or equal {self.ignore_value}")


def confidence_gate(p_weak: np.ndarray, gamma: float = DEFAULT_GAMMA) -> GateMask:
    """
    Gate pixels whose maximum class confidence reaches gamma.

    Args:
        p_weak: n x k probabilities on the weak view
        gamma: Threshold in [0, 1]; comparison is >=

    Returns:
        GateMask
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    p = validate_prob_matrix(p_weak)
    return GateMask(flags=p.max(axis=1) >= gamma, gamma=gamma)


def make_pseudo_labels(plan: TransportPlan, gate: GateMask, layout: LayoutDescriptor) -> PseudoLabelGrid:
    """Pseudo-label grid from a transport plan: rows normalized to class distributions."""
    if plan.n != gate.n or plan.n != layout.n:
        raise ShapeError(f"plan ({plan.n}), gate ({gate.n}) and layout ({layout.n}) disagree on n")
    return PseudoLabelGrid(q=plan_row_normalize(plan), gate=gate, layout=layout)


def argmax_pseudo_labels(p_weak: np.ndarray, gate: GateMask, layout: LayoutDescriptor) -> PseudoLabelGrid:
    """Plain hard pseudo-labels (one-hot teacher argmax), the assignment used without OT."""
    p = validate_prob_matrix(p_weak)
    q = np.zeros_like(p)
    q[np.arange(p.shape[0]), p.argmax(axis=1)] = 1.0
    return PseudoLabelGrid(q=q, gate=gate, layout=layout)


def synthetic_pixel_loss(
    pl: PseudoLabelGrid,
    p_strong: np.ndarray,
    prob_floor: float = DEFAULT_PROB_FLOOR,
) -> Tuple[float, np.ndarray]:
    """
    Gated soft cross-entropy between pseudo-labels and strong-view predictions.

    loss = -(1/n) * sum_{i gated} sum_j q_ij * log max(p_strong_ij, prob_floor)

    Args:
        pl: Pseudo-label grid
        p_strong: n x k student probabilities (softmax of logits)
        prob_floor: Clamp applied before the log

    Returns:
        (loss, n x k gradient with respect to the student logits)
    """
    p = validate_prob_matrix(p_strong)
    if p.shape != pl.q.shape:
        raise ShapeError(f"predictions {p.shape} do not match pseudo-labels {pl.q.shape}")

    n = pl.layout.n
    weight = pl.gate.flags.astype(np.float64)
    log_p = np.log(np.maximum(p, prob_floor))
    loss = -float(np.sum(weight[:, None] * pl.q * log_p)) / n
    grad = (weight[:, None] / n) * (p - pl.q)
    return loss, grad


def real_pixel_loss(
    labels: LabelGrid,
    p: np.ndarray,
    layout: LayoutDescriptor,
    prob_floor: float = DEFAULT_PROB_FLOOR,
) -> Tuple[float, np.ndarray]:
    """
    Mean pixel-wise cross-entropy against ground-truth labels.

    Ignore pixels contribute neither to the mean nor to the gradient; a grid
    with no labeled pixel gives loss 0 and a zero gradient.

    Returns:
        (loss, n x k gradient with respect to the logits)
    """
    p = validate_prob_matrix(p)
    if p.shape[0] != layout.n:
        raise ShapeError(f"predictions have {p.shape[0]} rows, layout expects {layout.n}")
    labels.validate(p.shape[1])

    y = layout.flatten_map(labels.labels)
    valid = np.flatnonzero(y != labels.ignore_value)
    grad = np.zeros_like(p)
    if valid.size == 0:
        logger.warning("⚠️ All pixels carry the ignore label; real loss set to 0")
        return 0.0, grad

    targets = y[valid]
    picked = np.maximum(p[valid, targets], prob_floor)
    loss = float(-np.mean(np.log(picked)))

    grad[valid] = p[valid]
    grad[valid, targets] -= 1.0
    grad /= valid.size
    return loss, grad


def total_pixel_loss(l_s: float, l_r: float) -> float:
    """Average of the synthetic and real losses."""
    if not (math.isfinite(l_s) and math.isfinite(l_r)):
        raise ValueError(f"losses must be finite, got ({l_s}, {l_r})")
    return 0.5 * (l_s + l_r)


def gate_fraction(gate: GateMask, valid: Optional[np.ndarray] = None) -> float:
    """Share of gated-in pixels, optionally among valid pixels only."""
    if valid is None:
        return gate.fraction
    valid = np.asarray(valid, dtype=bool)
    return float(gate.flags[valid].mean()) if valid.any() else 0.0
