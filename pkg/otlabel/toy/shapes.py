# shapes.py
"""
Procedural "shapes world": RGB images of textured rectangles, disks and
triangles on a background, with exact label maps

Class colours sit on distinct corners of the RGB cube, so with corruption off
every pixel maps back to its class by thresholding each channel.
"""

from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

BACKGROUND = 0
COLOR_LOW = 40
COLOR_HIGH = 215
TEXTURE_AMPLITUDE = 15
SHAPE_KINDS = ("rectangle", "disk", "triangle")


class ShapesConfig(BaseModel):
    """Generator knobs. Class 0 is the background; shapes carry classes 1..k-1."""

    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(5, ge=3, le=8)
    size: int = Field(64, ge=16)
    min_shapes: int = Field(1, ge=1)
    max_shapes: int = Field(6, ge=1)
    min_radius: int = Field(5, ge=2)
    max_radius: int = Field(14, ge=2)
    # frequency of the most common shape class over the rarest one
    imbalance_ratio: float = Field(1.0, ge=1.0)
    corrupt: bool = False
    noise_sigma: float = Field(12.0, ge=0)
    color_shift: float = Field(25.0, ge=0)
    blur_sigma: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def check_geometry(self) -> "ShapesConfig":
        if self.max_radius < self.min_radius:
            raise ValueError(f"max_radius {self.max_radius} is below min_radius {self.min_radius}")
        # shape centres are drawn from [r, size - r)
        if self.size <= 2 * self.max_radius:
            raise ValueError(f"size {self.size} must exceed 2 * max_radius = {2 * self.max_radius}")
        return self

    def class_weights(self) -> np.ndarray:
        """Sampling probabilities of shape classes 1..k-1 (geometric long tail)."""
        steps = np.arange(self.num_classes - 1) / (self.num_classes - 2)
        weights = self.imbalance_ratio ** -steps
        return weights / weights.sum()


@dataclass(frozen=True)
class ShapesSample:
    image: np.ndarray  # (H, W, 3) uint8 RGB
    labels: np.ndarray  # (H, W) int64
    seed: int
    class_histogram: np.ndarray  # pixel count per class


def class_palette(num_classes: int) -> np.ndarray:
    """(k, 3) base colour per class: class c takes RGB-cube corner with bit pattern c."""
    bits = (np.arange(num_classes)[:, None] >> np.arange(3)[None, :]) & 1
    return np.where(bits == 1, COLOR_HIGH, COLOR_LOW).astype(np.int64)


def color_to_class(image: np.ndarray) -> np.ndarray:
    """Invert the palette: threshold every channel at mid-gray."""
    bits = (np.asarray(image) > (COLOR_LOW + COLOR_HIGH) / 2).astype(np.int64)
    return bits[..., 0] | (bits[..., 1] << 1) | (bits[..., 2] << 2)


def class_texture(cls: int, size: int) -> np.ndarray:
    """Signed +-1 checker pattern whose cell size depends on the class."""
    if cls == BACKGROUND:
        return np.zeros((size, size))
    cell = 1 + (cls - 1) % 4
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy // cell + xx // cell) % 2) * 2.0 - 1.0


def derive_seed(*keys: int) -> int:
    """Split a seed into an independent stream, e.g. derive_seed(seed, stream, index)."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _draw_shape(labels: np.ndarray, kind: str, cls: int, rng: np.random.Generator, config: ShapesConfig):
    size = config.size
    r = int(rng.integers(config.min_radius, config.max_radius + 1))
    cy, cx = (int(v) for v in rng.integers(r, size - r, size=2))
    if kind == "rectangle":
        hy, hx = (int(v) for v in rng.integers(max(2, r // 2), r + 1, size=2))
        cv2.rectangle(labels, (cx - hx, cy - hy), (cx + hx, cy + hy), cls, thickness=-1)
    elif kind == "disk":
        cv2.circle(labels, (cx, cy), r, cls, thickness=-1)
    else:
        angles = rng.uniform(0, 2 * np.pi) + np.array([0.0, 2.0, 4.0]) * np.pi / 3
        points = np.stack([cx + r * np.cos(angles), cy + r * np.sin(angles)], axis=1)
        cv2.fillPoly(labels, [np.round(points).astype(np.int32)], cls)


def render(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Clean RGB image of a label map: palette colour plus class texture."""
    palette = class_palette(num_classes)
    size = labels.shape[0]
    textures = np.stack([class_texture(c, size) for c in range(num_classes)])
    rows, cols = np.indices(labels.shape)
    shade = TEXTURE_AMPLITUDE * textures[labels, rows, cols]
    image = palette[labels] + shade[..., None]
    return np.clip(image, 0, 255).astype(np.uint8)


def corrupt_image(image: np.ndarray, rng: np.random.Generator, config: ShapesConfig) -> np.ndarray:
    """Generative-domain gap: global colour shift, pixel noise, softened edges."""
    shift = rng.uniform(-config.color_shift, config.color_shift, size=3)
    noise = rng.normal(0.0, config.noise_sigma, size=image.shape)
    out = image.astype(np.float64) + shift + noise
    out = np.clip(out, 0, 255).astype(np.uint8)
    if config.blur_sigma > 0:
        out = cv2.GaussianBlur(out, (0, 0), sigmaX=config.blur_sigma, borderType=cv2.BORDER_REFLECT)
    return out


def generate_shapes(config: ShapesConfig, seed: int) -> ShapesSample:
    """
    Render one sample; a pure function of (config, seed).

    Args:
        config: Generator settings
        seed: Non-negative integer seed

    Returns:
        ShapesSample with exact labels
    """
    rng = np.random.default_rng(seed)
    size = config.size
    labels = np.full((size, size), BACKGROUND, dtype=np.uint8)

    count = int(rng.integers(config.min_shapes, max(config.min_shapes, config.max_shapes) + 1))
    classes = 1 + rng.choice(config.num_classes - 1, size=count, p=config.class_weights())
    kinds = rng.integers(0, len(SHAPE_KINDS), size=count)
    for cls, kind in zip(classes, kinds):
        _draw_shape(labels, SHAPE_KINDS[kind], int(cls), rng, config)

    labels = labels.astype(np.int64)
    image = render(labels, config.num_classes)
    if config.corrupt:
        image = corrupt_image(image, rng, config)
    histogram = np.bincount(labels.ravel(), minlength=config.num_classes)
    return ShapesSample(image=image, labels=labels, seed=seed, class_histogram=histogram)


def generate_dataset(config: ShapesConfig, seed: int, stream: int, count: int) -> Sequence[ShapesSample]:
    """`count` samples whose seeds are split from (seed, stream, index)."""
    return [generate_shapes(config, derive_seed(seed, stream, index)) for index in range(count)]
