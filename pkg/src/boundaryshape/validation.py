"""Input validation helpers shared by all modules.

Images are plain numpy arrays: RGB images are (H, W, 3) uint8, grayscale
images are (H, W) float64 in [0, 1], binary masks are (H, W) uint8 with
values in {0, 1}, and scalar fields are (H, W) float64 with finite values.
The helpers below normalize and check those conventions at API boundaries.
"""

from __future__ import annotations

import numpy as np

# ITU-R BT.601 luma coefficients, fixed for deterministic RGB -> gray.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be finite and > 0, got {value}")
    return value


def check_in_open_unit_interval(value: float, name: str) -> float:
    value = float(value)
    if not (0.0 < value < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value


def check_rgb_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1, got {img.shape}")
    if img.dtype != np.uint8:
        if np.issubdtype(img.dtype, np.floating):
            if img.min() < 0.0 or img.max() > 255.0:
                raise ValueError(f"{name} values must lie in [0, 255]")
        img = img.astype(np.uint8)
    return img


def check_gray_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return img


def check_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {mask.shape}")
    if mask.dtype == bool:
        return mask.astype(np.uint8)
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError(f"{name} must be strictly binary (0/1), found {vals[:8]}")
    return mask.astype(np.uint8)


def check_scalar_field(field: np.ndarray, name: str = "field") -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {field.shape}")
    if not np.all(np.isfinite(field)):
        raise ValueError(f"{name} contains non-finite values")
    return field


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(
            f"{name_a} and {name_b} must share (H, W), got {a.shape[:2]} vs {b.shape[:2]}"
        )


def as_gray(img: np.ndarray) -> np.ndarray:
    """Coerce an RGB, grayscale, or binary-mask array to float64 gray in [0, 1]."""
    img = np.asarray(img)
    if img.ndim == 3:
        img = check_rgb_image(img)
        r, g, b = LUMA_WEIGHTS
        return (r * img[..., 0] + g * img[..., 1] + b * img[..., 2]) / 255.0
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"cannot interpret array of shape {img.shape} as an image")
    if img.max(initial=0.0) > 1.0:
        return img / 255.0
    return img
