"""Interest-point detection and SIFT descriptors on images and binary masks.

Detection combines multi-scale Harris corners (scale picked by a
Laplacian-of-Gaussian extremum across levels) with difference-of-Gaussian
blob extrema on one shared full-resolution scale space.

Descriptors are upright SIFT: a 4x4 grid of 8-bin gradient-orientation
histograms with trilinear interpolation, Gaussian windowing, and the usual
clamp-at-0.2 renormalization. No dominant-orientation rotation is applied,
so descriptor grids stay aligned with the image axes; orientation bin b
covers angles around 45*b degrees, measured from +x toward +y (downward).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imageops import blur_raw, gradient
from .validation import check_gray_image, check_positive

DESCRIPTOR_SIZE = 128
GRID_CELLS = 4
ORI_BINS = 8


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    response: float = 0.0


@dataclass(frozen=True)
class FeatureParams:
    """Detector and descriptor tunables, fixed for determinism."""

    harris_k: float = 0.04
    n_octaves: int = 3
    levels_per_octave: int = 5
    base_sigma: float = 1.6
    harris_rel_threshold: float = 1e-4
    dog_rel_threshold: float = 0.05
    integration_factor: float = 1.5
    patch_factor: float = 6.0
    min_image_side: int = 32
    merge_radius: float = 2.0
    max_keypoints: int = 300

    def __post_init__(self) -> None:
        for name in ("harris_k", "base_sigma", "integration_factor",
                     "patch_factor", "merge_radius"):
            check_positive(getattr(self, name), name)
        for name in ("n_octaves", "levels_per_octave", "min_image_side",
                     "max_keypoints"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("harris_rel_threshold", "dog_rel_threshold"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be >= 0")

    def sigmas(self) -> np.ndarray:
        n = self.n_octaves * self.levels_per_octave
        return self.base_sigma * 2.0 ** (np.arange(n) / self.levels_per_octave)


DEFAULT_FEATURE_PARAMS = FeatureParams()


@dataclass
class ScaleSpace:
    """Gaussian stack plus per-level gradients, shared by detector and descriptors."""

    sigmas: np.ndarray
    gaussians: list[np.ndarray]
    dogs: list[np.ndarray]

    @classmethod
    def build(cls, img: np.ndarray, params: FeatureParams) -> "ScaleSpace":
        sigmas = params.sigmas()
        gaussians = [blur_raw(img, s) for s in sigmas]
        dogs = [gaussians[i + 1] - gaussians[i] for i in range(len(gaussians) - 1)]
        return cls(sigmas=sigmas, gaussians=gaussians, dogs=dogs)


def _local_maxima_2d(resp: np.ndarray, threshold: float, margin: int) -> np.ndarray:
    """(row, col) of strict 3x3 maxima above threshold, away from the border."""
    h, w = resp.shape
    if h < 2 * margin + 3 or w < 2 * margin + 3:
        return np.empty((0, 2), dtype=np.intp)
    c = resp[1:-1, 1:-1]
    best = (
        (c > resp[:-2, :-2]) & (c > resp[:-2, 1:-1]) & (c > resp[:-2, 2:])
        & (c > resp[1:-1, :-2]) & (c > resp[1:-1, 2:])
        & (c > resp[2:, :-2]) & (c > resp[2:, 1:-1]) & (c > resp[2:, 2:])
        & (c > threshold)
    )
    rows, cols = np.nonzero(best)
    rows = rows + 1
    cols = cols + 1
    keep = (rows >= margin) & (rows < h - margin) & (cols >= margin) & (cols < w - margin)
    return np.stack([rows[keep], cols[keep]], axis=1)


def _harris_response(g: np.ndarray, sigma: float, params: FeatureParams) -> np.ndarray:
    dx, dy = gradient(g)
    # sigma^2 normalization keeps responses comparable across scales
    s2 = sigma * sigma
    ixx = blur_raw(dx * dx, params.integration_factor * sigma) * s2
    iyy = blur_raw(dy * dy, params.integration_factor * sigma) * s2
    ixy = blur_raw(dx * dy, params.integration_factor * sigma) * s2
    det = ixx * iyy - ixy * ixy
    tr = ixx + iyy
    return det - params.harris_k * tr * tr


def detect_harris_laplace(
    img: np.ndarray, params: FeatureParams = DEFAULT_FEATURE_PARAMS
) -> list[Keypoint]:
    """Detect keypoints; too-small images yield an empty list, not an error."""
    img = check_gray_image(img)
    h, w = img.shape
    if min(h, w) < params.min_image_side:
        return []

    space = ScaleSpace.build(img, params)
    harris = _detect_harris(space, params)
    blobs = _detect_dog(space, params)
    merged = _merge_keypoints(harris, blobs, params)
    if params.max_keypoints and len(merged) > params.max_keypoints:
        merged = _cap_interleaved(merged, params.max_keypoints)
    merged.sort(key=lambda kp: (-kp.response, kp.y, kp.x, kp.scale))
    return merged


def _detect_harris(space: ScaleSpace, params: FeatureParams) -> list[tuple[Keypoint, float]]:
    responses = [
        _harris_response(space.gaussians[i], space.sigmas[i], params)
        for i in range(len(space.dogs))
    ]
    peak = max((r.max() for r in responses), default=0.0)
    if peak <= 0.0:
        return []
    threshold = params.harris_rel_threshold * peak

    out: list[tuple[Keypoint, float]] = []
    n_dog = len(space.dogs)
    for i, resp in enumerate(responses):
        margin = max(2, math.ceil(2.0 * space.sigmas[i]))
        d_here = np.abs(space.dogs[i])
        d_prev = np.abs(space.dogs[i - 1]) if i > 0 else None
        d_next = np.abs(space.dogs[i + 1]) if i + 1 < n_dog else None
        for row, col in _local_maxima_2d(resp, threshold, margin):
            v = d_here[row, col]
            if d_prev is not None and v < d_prev[row, col]:
                continue
            if d_next is not None and v < d_next[row, col]:
                continue
            kp = Keypoint(float(col), float(row), float(space.sigmas[i]), float(resp[row, col]))
            out.append((kp, float(i)))
    return out


def _detect_dog(space: ScaleSpace, params: FeatureParams) -> list[tuple[Keypoint, float]]:
    dogs = space.dogs
    if len(dogs) < 3:
        return []
    peak = max(float(np.abs(d).max()) for d in dogs)
    threshold = max(params.dog_rel_threshold * peak, 1e-12)

    out: list[tuple[Keypoint, float]] = []
    step = 2.0 ** (0.5 / params.levels_per_octave)
    for i in range(1, len(dogs) - 1):
        margin = max(2, math.ceil(2.0 * space.sigmas[i]))
        below, here, above = dogs[i - 1], dogs[i], dogs[i + 1]
        stack = np.stack([below, here, above])
        c = here[1:-1, 1:-1]
        is_max = np.ones_like(c, dtype=bool)
        is_min = np.ones_like(c, dtype=bool)
        for layer in range(3):
            for dr in (0, 1, 2):
                for dc in (0, 1, 2):
                    if layer == 1 and dr == 1 and dc == 1:
                        continue
                    n = stack[layer, dr : dr + c.shape[0], dc : dc + c.shape[1]]
                    is_max &= c > n
                    is_min &= c < n
        extremal = (is_max | is_min) & (np.abs(c) > threshold)
        rows, cols = np.nonzero(extremal)
        rows = rows + 1
        cols = cols + 1
        h, w = here.shape
        keep = (rows >= margin) & (rows < h - margin) & (cols >= margin) & (cols < w - margin)
        scale = float(space.sigmas[i] * step)
        for row, col in zip(rows[keep], cols[keep]):
            kp = Keypoint(float(col), float(row), scale, float(abs(here[row, col])))
            out.append((kp, i + 0.5))
    return out


def _merge_keypoints(
    harris: list[tuple[Keypoint, float]],
    blobs: list[tuple[Keypoint, float]],
    params: FeatureParams,
) -> list[Keypoint]:
    """Greedy duplicate removal: within merge_radius px and one scale level."""
    tagged = harris + blobs
    tagged.sort(key=lambda t: (-t[0].response, t[0].y, t[0].x, t[0].scale))
    kept: list[Keypoint] = []
    kept_levels: list[float] = []
    r2 = params.merge_radius**2
    for kp, level in tagged:
        dup = False
        for other, other_level in zip(kept, kept_levels):
            if abs(level - other_level) <= 1.0:
                if (kp.x - other.x) ** 2 + (kp.y - other.y) ** 2 <= r2:
                    dup = True
                    break
        if not dup:
            kept.append(kp)
            kept_levels.append(level)
    return kept


def _cap_interleaved(kps: list[Keypoint], limit: int) -> list[Keypoint]:
    return kps[:limit]


def dense_sample(
    roi: tuple[float, float, float, float], stride: float, scales: list[float]
) -> list[Keypoint]:
    """Regular keypoint grid over roi=(x, y, w, h) at each scale, response 0."""
    x0, y0, w, h = (float(v) for v in roi)
    if w <= 0.0 or h <= 0.0:
        raise ValueError(f"ROI must have positive area, got w={w}, h={h}")
    if stride < 1.0:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if not scales:
        raise ValueError("scales must be non-empty")
    for s in scales:
        check_positive(s, "scale")
    nx = math.ceil(w / stride)
    ny = math.ceil(h / stride)
    xs = [min(x0 + (i + 0.5) * stride, x0 + w - 1e-9) for i in range(nx)]
    ys = [min(y0 + (j + 0.5) * stride, y0 + h - 1e-9) for j in range(ny)]
    return [
        Keypoint(x, y, float(s), 0.0)
        for s in scales
        for y in ys
        for x in xs
    ]


class _GradientCache:
    """Full-image dx/dy maps, computed once per image."""

    def __init__(self, img: np.ndarray):
        self.dx, self.dy = gradient(img)
        self.mag = np.hypot(self.dx, self.dy)
        self.ori = np.mod(np.arctan2(self.dy, self.dx), 2.0 * math.pi)
        self.shape = img.shape


def compute_sift(
    img: np.ndarray,
    kp: Keypoint,
    params: FeatureParams = DEFAULT_FEATURE_PARAMS,
    _cache: _GradientCache | None = None,
) -> np.ndarray:
    """Upright 128-d SIFT descriptor at kp; all-zero when the patch is constant."""
    if _cache is None:
        img = np.asarray(img, dtype=np.float64)
        _cache = _GradientCache(img)
    check_positive(kp.scale, "keypoint scale")
    h, w = _cache.shape

    cell = params.patch_factor * kp.scale / GRID_CELLS
    extent = 2.5 * cell  # grid spans cells -1..4; outermost samples still contribute
    x_lo = max(0, math.floor(kp.x - extent))
    x_hi = min(w - 1, math.ceil(kp.x + extent))
    y_lo = max(0, math.floor(kp.y - extent))
    y_hi = min(h - 1, math.ceil(kp.y + extent))
    if x_lo > x_hi or y_lo > y_hi:
        raise ValueError(f"descriptor window fully outside image for keypoint {kp}")

    ys, xs = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
    dxp = xs - kp.x
    dyp = ys - kp.y
    rf = dyp / cell + 1.5
    cf = dxp / cell + 1.5
    inside = (rf > -1.0) & (rf < 4.0) & (cf > -1.0) & (cf < 4.0)
    if not inside.any():
        raise ValueError(f"descriptor window fully outside image for keypoint {kp}")

    rf = rf[inside]
    cf = cf[inside]
    mag = _cache.mag[y_lo : y_hi + 1, x_lo : x_hi + 1][inside]
    ori = _cache.ori[y_lo : y_hi + 1, x_lo : x_hi + 1][inside]
    sigma_w = 2.0 * cell  # half the window side
    gauss = np.exp(-(dxp[inside] ** 2 + dyp[inside] ** 2) / (2.0 * sigma_w**2))
    weight = mag * gauss

    of = ori / (2.0 * math.pi) * ORI_BINS
    r0 = np.floor(rf).astype(np.intp)
    c0 = np.floor(cf).astype(np.intp)
    o0 = np.floor(of).astype(np.intp) % ORI_BINS
    wr1 = rf - np.floor(rf)
    wc1 = cf - np.floor(cf)
    wo1 = of - np.floor(of)

    hist = np.zeros((GRID_CELLS, GRID_CELLS, ORI_BINS))
    for dr in (0, 1):
        rr = r0 + dr
        w_r = wr1 if dr else 1.0 - wr1
        row_ok = (rr >= 0) & (rr < GRID_CELLS)
        for dc in (0, 1):
            cc = c0 + dc
            w_c = wc1 if dc else 1.0 - wc1
            ok = row_ok & (cc >= 0) & (cc < GRID_CELLS)
            if not ok.any():
                continue
            for do in (0, 1):
                oo = (o0 + do) % ORI_BINS
                w_o = wo1 if do else 1.0 - wo1
                contrib = weight * w_r * w_c * w_o
                np.add.at(
                    hist,
                    (rr[ok], cc[ok], oo[ok]),
                    contrib[ok],
                )
    return normalize_descriptor(hist.ravel())


def normalize_descriptor(vec: np.ndarray, clamp: float = 0.2) -> np.ndarray:
    """Unit-normalize, clamp large bins, renormalize; zero vectors stay zero."""
    vec = np.asarray(vec, dtype=np.float64).copy()
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return np.zeros_like(vec)
    vec /= norm
    np.minimum(vec, clamp, out=vec)
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return np.zeros_like(vec)
    return vec / norm


def compute_descriptors(
    img: np.ndarray,
    kps: list[Keypoint],
    params: FeatureParams = DEFAULT_FEATURE_PARAMS,
) -> np.ndarray:
    """Descriptors for many keypoints of one image, sharing the gradient maps."""
    img = np.asarray(img, dtype=np.float64)
    cache = _GradientCache(img)
    out = np.zeros((len(kps), DESCRIPTOR_SIZE))
    for i, kp in enumerate(kps):
        out[i] = compute_sift(img, kp, params, _cache=cache)
    return out
