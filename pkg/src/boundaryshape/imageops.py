"""Image, mask, and scalar-field primitives shared by all modules."""

from __future__ import annotations

import math
import os

import numpy as np
from PIL import Image
from scipy import ndimage

from .validation import LUMA_WEIGHTS, check_gray_image, check_mask, check_positive

# Datasets store masks as 0/255; anything brighter than mid-gray is foreground.
MASK_THRESHOLD = 127


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode a raster file to an (H, W, 3) uint8 RGB array."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from exc


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Load a mask image; a pixel is foreground iff its luminance > 127."""
    rgb = load_image(path)
    r, g, b = LUMA_WEIGHTS
    luma = r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]
    return (luma > MASK_THRESHOLD).astype(np.uint8)


def save_mask(mask: np.ndarray, path: str | os.PathLike) -> None:
    """Write a binary mask as an 8-bit PNG containing only 0 and 255."""
    mask = check_mask(mask)
    Image.fromarray(mask * np.uint8(255), mode="L").save(path)


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    img = np.asarray(img, dtype=np.uint8)
    Image.fromarray(img).save(path)


def gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel (dx, dy) with central differences inside, one-sided at borders.

    Requires at least a 3x3 image so every central difference is well defined.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"gradient needs an (H, W) image with H, W >= 3, got {img.shape}")
    dy, dx = np.gradient(img)
    return dx, dy


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), edges clamped."""
    img = check_gray_image(img)
    sigma = check_positive(sigma, "sigma")
    radius = max(1, math.ceil(3.0 * sigma))
    out = ndimage.gaussian_filter1d(img, sigma, axis=0, mode="nearest", radius=radius)
    out = ndimage.gaussian_filter1d(out, sigma, axis=1, mode="nearest", radius=radius)
    return out


def blur_raw(img: np.ndarray, sigma: float) -> np.ndarray:
    """gaussian_blur without the [0, 1] range check, for internal scale-space use."""
    radius = max(1, math.ceil(3.0 * sigma))
    out = ndimage.gaussian_filter1d(img, sigma, axis=0, mode="nearest", radius=radius)
    return ndimage.gaussian_filter1d(out, sigma, axis=1, mode="nearest", radius=radius)
