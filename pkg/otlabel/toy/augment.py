# augment.py
"""
Weak and strong views for teacher/student consistency training

Weak:   random resize in [0.5, 2.0], pad/crop to a fixed size, horizontal flip
Strong: weak view + colour jitter, random grayscale, Gaussian blur and CutMix
Geometric transforms move labels with nearest-neighbour sampling; padded
pixels carry the ignore label and are marked invalid.
"""

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import cv2
import numpy as np

from ..ot_assign.pixel_loss import IGNORE_INDEX

CROP_SIZE = 64
SCALE_RANGE = (0.5, 2.0)
FLIP_PROB = 0.5
GRAYSCALE_PROB = 0.2
BLUR_PROB = 0.5
BLUR_SIGMA_RANGE = (0.1, 2.0)
JITTER = 0.25
CUTMIX_BETA = 1.0


@dataclass(frozen=True)
class AugmentedView:
    image: np.ndarray  # (H, W, 3) uint8
    labels: np.ndarray  # (H, W) int64, IGNORE_INDEX outside the source image
    valid: np.ndarray  # (H, W) bool


@dataclass(frozen=True)
class Box:
    """Half-open pixel box [y0, y1) x [x0, x1)."""

    y0: int
    y1: int
    x0: int
    x1: int

    @property
    def area(self) -> int:
        return max(0, self.y1 - self.y0) * max(0, self.x1 - self.x0)

    def mask(self, height: int, width: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=bool)
        out[self.y0:self.y1, self.x0:self.x1] = True
        return out


def horizontal_flip(view: AugmentedView) -> AugmentedView:
    return AugmentedView(
        image=view.image[:, ::-1].copy(),
        labels=view.labels[:, ::-1].copy(),
        valid=view.valid[:, ::-1].copy(),
    )


def _resize(view: AugmentedView, scale: float) -> AugmentedView:
    h, w = view.labels.shape
    size = (max(1, int(round(w * scale))), max(1, int(round(h * scale))))
    image = cv2.resize(view.image, size, interpolation=cv2.INTER_LINEAR)
    labels = cv2.resize(view.labels.astype(np.uint8), size, interpolation=cv2.INTER_NEAREST)
    valid = cv2.resize(view.valid.astype(np.uint8), size, interpolation=cv2.INTER_NEAREST)
    return AugmentedView(image=image, labels=labels.astype(np.int64), valid=valid.astype(bool))


def _pad_crop(view: AugmentedView, crop: int, rng: np.random.Generator) -> AugmentedView:
    h, w = view.labels.shape
    pad_h, pad_w = max(0, crop - h), max(0, crop - w)
    image = np.pad(view.image, ((0, pad_h), (0, pad_w), (0, 0)))
    labels = np.pad(view.labels, ((0, pad_h), (0, pad_w)), constant_values=IGNORE_INDEX)
    valid = np.pad(view.valid, ((0, pad_h), (0, pad_w)), constant_values=False)
    y = int(rng.integers(0, labels.shape[0] - crop + 1))
    x = int(rng.integers(0, labels.shape[1] - crop + 1))
    window = (slice(y, y + crop), slice(x, x + crop))
    return AugmentedView(image=image[window].copy(), labels=labels[window].copy(), valid=valid[window].copy())


def weak_augment(
    image: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator,
    crop: int = CROP_SIZE,
    flip_prob: float = FLIP_PROB,
) -> AugmentedView:
    """
    Resize by a factor drawn from [0.5, 2.0], crop to `crop` x `crop` (padding
    when smaller) and flip horizontally with probability flip_prob.
    """
    view = AugmentedView(
        image=np.asarray(image, dtype=np.uint8),
        labels=np.asarray(labels, dtype=np.int64),
        valid=np.ones(np.shape(labels), dtype=bool),
    )
    view = _resize(view, rng.uniform(*SCALE_RANGE))
    view = _pad_crop(view, crop, rng)
    if rng.random() < flip_prob:
        view = horizontal_flip(view)
    return view


def photometric_augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Colour jitter (brightness, contrast, saturation), grayscale and blur."""
    out = image.astype(np.float64)
    brightness, contrast, saturation = rng.uniform(1.0 - JITTER, 1.0 + JITTER, size=3)
    out = out * brightness
    out = (out - out.mean()) * contrast + out.mean()
    gray = cv2.cvtColor(np.clip(out, 0, 255).astype(np.float32), cv2.COLOR_RGB2GRAY)[..., None]
    out = gray + saturation * (out - gray)
    if rng.random() < GRAYSCALE_PROB:
        out = np.repeat(cv2.cvtColor(np.clip(out, 0, 255).astype(np.float32), cv2.COLOR_RGB2GRAY)[..., None], 3, axis=2)
    out = np.clip(out, 0, 255).astype(np.uint8)
    if rng.random() < BLUR_PROB:
        sigma = rng.uniform(*BLUR_SIGMA_RANGE)
        out = cv2.GaussianBlur(out, (0, 0), sigmaX=sigma, borderType=cv2.BORDER_REFLECT)
    return out


def cutmix_box(height: int, width: int, rng: np.random.Generator, beta: float = CUTMIX_BETA) -> Box:
    """Box covering a 1 - lam share of the image, lam ~ Beta(beta, beta), centre uniform."""
    lam = rng.beta(beta, beta)
    cut_rat = np.sqrt(1.0 - lam)
    cut_h, cut_w = int(height * cut_rat), int(width * cut_rat)
    cy, cx = int(rng.integers(height)), int(rng.integers(width))
    return Box(
        y0=int(np.clip(cy - cut_h // 2, 0, height)),
        y1=int(np.clip(cy + cut_h // 2, 0, height)),
        x0=int(np.clip(cx - cut_w // 2, 0, width)),
        x1=int(np.clip(cx + cut_w // 2, 0, width)),
    )


def apply_box(target: np.ndarray, source: np.ndarray, box: Box) -> np.ndarray:
    """Copy of target with source pasted inside the box; leading axes are (H, W)."""
    if target.shape != source.shape:
        raise ValueError(f"cannot mix arrays of shapes {target.shape} and {source.shape}")
    out = target.copy()
    out[box.y0:box.y1, box.x0:box.x1] = source[box.y0:box.y1, box.x0:box.x1]
    return out


def strong_augment(
    view: AugmentedView,
    rng: np.random.Generator,
    partner: Optional[AugmentedView] = None,
    cutmix_prob: float = 0.5,
) -> Tuple[AugmentedView, Optional[Box]]:
    """
    Photometric transforms on a weak view, then CutMix against `partner`
    (itself photometrically augmented) with probability cutmix_prob.

    Returns:
        (strong view, CutMix box or None); pseudo-labels and gates follow the
        same box through apply_box
    """
    strong = replace(view, image=photometric_augment(view.image, rng))
    if partner is None or rng.random() >= cutmix_prob:
        return strong, None
    other = replace(partner, image=photometric_augment(partner.image, rng))
    h, w = view.labels.shape
    box = cutmix_box(h, w, rng)
    mixed = AugmentedView(
        image=apply_box(strong.image, other.image, box),
        labels=apply_box(strong.labels, other.labels, box),
        valid=apply_box(strong.valid, other.valid, box),
    )
    return mixed, box
