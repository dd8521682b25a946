# features.py
"""Handcrafted per-pixel features for the linear segmentation model."""

import numpy as np
from scipy.ndimage import uniform_filter

# RGB, (x, y), 3x3 mean per channel, 3x3 std per channel
FEATURE_DIM = 11
WINDOW = 3


def extract_features(images: np.ndarray) -> np.ndarray:
    """
    Args:
        images: (b, H, W, 3) or (H, W, 3) uint8 RGB

    Returns:
        float64 array (..., H, W, 11) with colours scaled to [0, 1] and
        coordinates normalized to [0, 1]
    """
    images = np.asarray(images)
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected (b, H, W, 3) images, got shape {images.shape}")

    rgb = images.astype(np.float64) / 255.0
    b, h, w, _ = rgb.shape
    window = (1, WINDOW, WINDOW, 1)
    mean = uniform_filter(rgb, size=window, mode="reflect")
    sq_mean = uniform_filter(rgb * rgb, size=window, mode="reflect")
    std = np.sqrt(np.maximum(sq_mean - mean * mean, 0.0))

    ys = np.linspace(0.0, 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(0.0, 1.0, w) if w > 1 else np.zeros(1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    coords = np.broadcast_to(np.stack([xx, yy], axis=-1), (b, h, w, 2))

    features = np.concatenate([rgb, coords, mean, std], axis=-1)
    return features[0] if single else features
