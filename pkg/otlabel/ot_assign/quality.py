# quality.py
"""
Instance-fidelity proxies for ranking synthetic image corpora

GLCM contrast score (higher = more local high-frequency detail)
Lossless compression ratio (lower = more high-frequency detail)
"""

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import cv2
import numpy as np
import skimage
from pydantic import BaseModel, Field
from skimage.feature import graycomatrix, graycoprops

from .errors import EvaluationError, FormatError, OTLabelError, ShapeError
from .formats import read_image

logger = logging.getLogger(__name__)

# Metric parameters, echoed in every report
GLCM_LEVELS = 32
GLCM_OFFSETS: Tuple[Tuple[int, int], ...] = ((0, 1), (1, 0))
PNG_COMPRESSION_LEVEL = 9
PNG_STRATEGY = cv2.IMWRITE_PNG_STRATEGY_DEFAULT
MIN_IMAGE_SIDE = 8

METRIC_VERSION = "glcm-contrast/v1 levels=32 offsets=(0,1),(1,0) symmetric normed /(levels-1)"
CODEC_VERSION = (
    f"png/v1 opencv={cv2.__version__} level={PNG_COMPRESSION_LEVEL} strategy=default "
    f"skimage={skimage.__version__}"
)

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


def to_gray(img: np.ndarray) -> np.ndarray:
    """
    Validate an image and convert it to 8-bit luma (Rec. 601 weights for RGB).

    Raises:
        ShapeError: If the image is not (H, W) or (H, W, 3), or is smaller than 8x8
    """
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 3:
        gray = cv2.cvtColor(np.ascontiguousarray(img, dtype=np.uint8), cv2.COLOR_RGB2GRAY)
    elif img.ndim == 2:
        gray = img.astype(np.uint8)
    else:
        raise ShapeError(f"expected a gray or RGB image, got shape {img.shape}")
    if min(gray.shape) < MIN_IMAGE_SIDE:
        raise ShapeError(f"image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {gray.shape}")
    return gray


def quantize(gray: np.ndarray, levels: int) -> np.ndarray:
    return ((gray.astype(np.uint16) * levels) // 256).astype(np.uint8)


def glcm_score(
    img: np.ndarray,
    levels: int = GLCM_LEVELS,
    offsets: Sequence[Tuple[int, int]] = GLCM_OFFSETS,
) -> float:
    """
    Mean GLCM contrast over the offsets, divided by (levels - 1).

    The image is quantized to `levels` gray levels; each (row, col) offset
    yields a symmetric, normalized co-occurrence matrix P and the contrast
    sum_{a,b} P(a, b) (a - b)^2. A constant image scores 0.
    """
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    q = quantize(to_gray(img), levels)
    contrasts = []
    for dr, dc in offsets:
        distance = int(round(math.hypot(dr, dc)))
        angle = math.atan2(dr, dc)
        glcm = graycomatrix(q, distances=[distance], angles=[angle], levels=levels, symmetric=True, normed=True)
        contrasts.append(float(graycoprops(glcm, "contrast")[0, 0]))
    return float(np.mean(contrasts)) / (levels - 1)


def compression_ratio(img: np.ndarray) -> float:
    """
    Raw bytes over PNG bytes at the pinned codec settings.

    Raises:
        ShapeError: If the image is too small or of the wrong rank
        FormatError: If PNG encoding fails
    """
    img = np.ascontiguousarray(img, dtype=np.uint8)
    to_gray(img)
    encoded = img if img.ndim == 2 else cv2.cvtColor(img, cv2.COLOR_RGB2BGR)
    ok, buffer = cv2.imencode(
        ".png",
        encoded,
        [cv2.IMWRITE_PNG_COMPRESSION, PNG_COMPRESSION_LEVEL, cv2.IMWRITE_PNG_STRATEGY, PNG_STRATEGY],
    )
    if not ok:
        raise FormatError("PNG encoding failed")
    return img.nbytes / len(buffer)


class ImageMetrics(BaseModel):
    path: str
    glcm_score: float = Field(ge=0)
    # dips below 1 on incompressible content, where PNG framing outweighs the raw bytes
    compression_ratio: float = Field(gt=0)


class MetricReport(BaseModel):
    """Per-image metrics plus corpus mean and (population) standard deviation."""

    images: List[ImageMetrics]
    glcm_mean: float
    glcm_std: float
    ratio_mean: float
    ratio_std: float
    metric_version: str = METRIC_VERSION
    codec_version: str = CODEC_VERSION

    @classmethod
    def from_images(cls, images: List[ImageMetrics]) -> "MetricReport":
        if not images:
            raise EvaluationError("no images to summarize")
        glcm = np.array([m.glcm_score for m in images])
        ratio = np.array([m.compression_ratio for m in images])
        return cls(
            images=images,
            glcm_mean=float(glcm.mean()),
            glcm_std=float(glcm.std()),
            ratio_mean=float(ratio.mean()),
            ratio_std=float(ratio.std()),
        )


def score_image(path: Union[str, Path], image: np.ndarray) -> ImageMetrics:
    return ImageMetrics(path=str(path), glcm_score=glcm_score(image), compression_ratio=compression_ratio(image))


def list_images(directory: Union[str, Path]) -> List[Path]:
    """Image files under a directory, sorted by path."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def score_corpus(paths: Iterable[Union[str, Path]]) -> MetricReport:
    """
    Score every decodable image; undecodable or undersized files are skipped.

    Raises:
        EvaluationError: If no image could be scored
    """
    images = []
    for path in sorted(Path(p) for p in paths):
        try:
            images.append(score_image(path, read_image(path)))
        except OTLabelError as e:
            logger.warning(f"⚠️ Skipping {path}: {e}")
    if not images:
        raise EvaluationError("no decodable images")
    logger.info(f"✓ Scored {len(images)} images")
    return MetricReport.from_images(images)


def write_metric_csv(report: MetricReport, path: Union[str, Path]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "glcm_score", "compression_ratio"])
        for m in report.images:
            writer.writerow([m.path, repr(m.glcm_score), repr(m.compression_ratio)])


def format_summary(report: MetricReport) -> str:
    """Plain-text summary block: corpus statistics and pinned metric versions."""
    return "\n".join([
        f"images: {len(report.images)}",
        f"glcm_score: mean={report.glcm_mean:.6f} std={report.glcm_std:.6f}",
        f"compression_ratio: mean={report.ratio_mean:.6f} std={report.ratio_std:.6f}",
        f"metric: {report.metric_version}",
        f"codec: {report.codec_version}",
    ])


def texture_pair(seed: int, size: int = 64, sigma: float = 1.5) -> Tuple[np.ndarray, np.ndarray]:
    """
    Procedural sharp texture and its Gaussian-blurred counterpart.

    The sharp image mixes a blocky random pattern with per-pixel noise.
    """
    rng = np.random.default_rng(seed)
    blocks = cv2.resize(
        rng.integers(0, 256, (size // 8, size // 8), dtype=np.uint8),
        (size, size),
        interpolation=cv2.INTER_NEAREST,
    )
    noise = rng.integers(0, 256, (size, size))
    sharp = np.clip(0.6 * blocks + 0.4 * noise, 0, 255).astype(np.uint8)
    blurred = cv2.GaussianBlur(sharp, (0, 0), sigmaX=sigma, borderType=cv2.BORDER_REFLECT)
    return sharp, blurred
