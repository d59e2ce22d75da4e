"""Shape-likelihood consolidation and dense-CRF segmentation.

The contributors of a detection are grouped per (codeword, feature) anchor;
each group's occurrence-weighted sum of shape-codebook cell strengths is
splatted, rescaled, at the anchor's location into a signed likelihood image.
That image drives the shape part of a two-label unary (shape + color KDE +
ROI box), and a fully connected pairwise CRF with Gaussian kernels is solved
by parallel mean-field updates.

Pairwise semantics are unnormalized: message m_i(l) = sum_{j != i} of
k(f_i, f_j) Q_j(l), with k the plain Gaussian kernel, never divided by its
mass.  Exact mode materializes the combined kernel matrix (float64, images up
to 96x96 only); fast mode approximates the appearance kernel on a
permutohedral lattice and the smoothness kernel by separable truncated
convolution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d, gaussian_filter

from .codebook import Model
from .detection import Hypothesis
from .permutohedral import PermutohedralLattice
from .validation import check_rgb_image

log = logging.getLogger(__name__)

EXACT_MAX_SIDE = 96
KDE_BINS = 32
MIN_COLOR_SEEDS = 50


@dataclass(frozen=True)
class CrfParams:
    lambda1: float = 1.0  # shape
    lambda2: float = 0.5  # color
    lambda3: float = 1.0  # ROI box
    w_appearance: float = 5.0
    w_smoothness: float = 3.0
    theta_alpha: float = 40.0
    theta_beta: float = 13.0
    theta_gamma: float = 3.0
    iterations: int = 10
    kde_bandwidth: float = 12.0
    roi_penalty: float = 10.0
    roi_inner_factor: float = 1.2
    roi_outer_factor: float = 1.5

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3", "w_appearance", "w_smoothness"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("theta_alpha", "theta_beta", "theta_gamma", "kde_bandwidth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass(frozen=True)
class ConsolidatedStrength:
    grid: np.ndarray  # (4, 4) signed
    codeword_id: int
    fx: float
    fy: float
    fscale: float


@dataclass
class UnaryField:
    psi_u: np.ndarray  # (H, W, 2), label 0 = bg, 1 = fg
    psi_shape: np.ndarray
    psi_color: np.ndarray
    psi_roi: np.ndarray
    params: CrfParams


def consolidate(h: Hypothesis, model: Model) -> list[ConsolidatedStrength]:
    """Occurrence-weighted strength sums, one per (codeword, feature) anchor."""
    if not h.contributors:
        raise ValueError("hypothesis has no contributors")
    groups: dict[tuple[int, int], ConsolidatedStrength] = {}
    sums: dict[tuple[int, int], np.ndarray] = {}
    for v in h.contributors:
        cw = model.codewords[v.codeword_id]
        occ = cw.occurrences[v.occurrence_id]
        grid = cw.shape_codebook[occ.shape_idx].strengths
        key = (v.codeword_id, v.feature_id)
        if key not in sums:
            sums[key] = np.zeros((4, 4))
            groups[key] = ConsolidatedStrength(
                grid=sums[key], codeword_id=v.codeword_id,
                fx=v.fx, fy=v.fy, fscale=v.fscale,
            )
        sums[key] += v.weight * grid
    return list(groups.values())


def _upscale_bilinear(grid: np.ndarray, n: int) -> np.ndarray:
    """Resize a 4x4 grid to n x n, sampling cell centers with edge clamping."""
    u = (np.arange(n) + 0.5) * 4.0 / n - 0.5
    u = np.clip(u, 0.0, 3.0)
    i0 = np.minimum(u.astype(np.int64), 2)
    frac = u - i0
    rows = (1 - frac)[:, None] * grid[i0] + frac[:, None] * grid[i0 + 1]
    cols = (1 - frac)[None, :] * rows[:, i0] + frac[None, :] * rows[:, i0 + 1]
    return cols


def splat_likelihood(
    strengths: list[ConsolidatedStrength],
    image_shape: tuple[int, int],
    base_size: int,
    mean_feat_scale: float,
) -> np.ndarray:
    """Accumulate rescaled strength grids at their anchors; off-image parts drop."""
    if base_size < 3 or base_size % 2 == 0:
        raise ValueError("base_size must be odd and >= 3")
    H, W = image_shape
    out = np.zeros((H, W))
    for cs in strengths:
        n = max(1, int(round(base_size * cs.fscale / mean_feat_scale)))
        patch = _upscale_bilinear(cs.grid, n)
        x0 = int(round(cs.fx - n / 2.0))
        y0 = int(round(cs.fy - n / 2.0))
        sy0, sy1 = max(0, -y0), min(n, H - y0)
        sx0, sx1 = max(0, -x0), min(n, W - x0)
        if sy1 <= sy0 or sx1 <= sx0:
            continue
        out[y0 + sy0 : y0 + sy1, x0 + sx0 : x0 + sx1] += patch[sy0:sy1, sx0:sx1]
    return out


def _scaled_box_mask(
    shape: tuple[int, int], roi: tuple[float, float, float, float], factor: float
) -> np.ndarray:
    """Boolean mask of pixels inside the ROI scaled about its center."""
    H, W = shape
    x0, y0, w, h = roi
    cx, cy = x0 + w / 2.0, y0 + h / 2.0
    hw, hh = factor * w / 2.0, factor * h / 2.0
    yy, xx = np.mgrid[0:H, 0:W]
    return (np.abs(xx + 0.0 - cx) <= hw) & (np.abs(yy + 0.0 - cy) <= hh)


def _kde_energy(
    colors: np.ndarray,
    fg_seeds: np.ndarray,
    bg_seeds: np.ndarray,
    bandwidth: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Binned per-label Gaussian KDE, renormalized across labels, as energies.

    colors: (N, 3) float in 0..255; seeds are boolean masks over N.
    """
    bin_w = 256.0 / KDE_BINS
    idx = np.clip((colors / bin_w).astype(np.int64), 0, KDE_BINS - 1)
    densities = []
    for seeds in (bg_seeds, fg_seeds):
        hist = np.zeros((KDE_BINS,) * 3)
        np.add.at(hist, tuple(idx[seeds].T), 1.0)
        hist /= seeds.sum()
        # common normalization constants cancel in the label renormalization
        hist = gaussian_filter(hist, sigma=bandwidth / bin_w, mode="constant")
        densities.append(hist[idx[:, 0], idx[:, 1], idx[:, 2]])
    p_bg, p_fg = densities
    tot = p_bg + p_fg
    safe = tot > 0
    pn_bg = np.where(safe, p_bg / np.where(safe, tot, 1.0), 0.5)
    pn_fg = np.where(safe, p_fg / np.where(safe, tot, 1.0), 0.5)
    eps = 1e-8
    return -np.log(pn_bg + eps), -np.log(pn_fg + eps)


def build_unary(
    likelihood: np.ndarray,
    image: np.ndarray,
    h: Hypothesis,
    params: CrfParams,
) -> UnaryField:
    """Combine shape, color-KDE, and ROI-box terms into per-pixel energies."""
    image = check_rgb_image(image, "image")
    H, W = likelihood.shape
    if image.shape[:2] != (H, W):
        raise ValueError("likelihood/image shape mismatch")

    amax = float(np.abs(likelihood).max())
    v_n = likelihood / amax if amax > 0 else np.zeros_like(likelihood)

    psi_shape = np.stack([v_n, -v_n], axis=-1)  # bg, fg

    colors = image.reshape(-1, 3).astype(np.float64)
    inner = _scaled_box_mask((H, W), h.roi, params.roi_inner_factor)
    outer = _scaled_box_mask((H, W), h.roi, params.roi_outer_factor)
    fg_seeds = (v_n > 0.5).ravel()
    bg_seeds = ((v_n < -0.5) | ~outer).ravel()
    if fg_seeds.sum() < MIN_COLOR_SEEDS or bg_seeds.sum() < MIN_COLOR_SEEDS:
        log.warning(
            "color model starved (fg=%d, bg=%d seeds); using uniform color term",
            int(fg_seeds.sum()), int(bg_seeds.sum()),
        )
        psi_color = np.zeros((H, W, 2))
    else:
        e_bg, e_fg = _kde_energy(colors, fg_seeds, bg_seeds, params.kde_bandwidth)
        psi_color = np.stack([e_bg.reshape(H, W), e_fg.reshape(H, W)], axis=-1)

    psi_roi = np.zeros((H, W, 2))
    psi_roi[:, :, 1] = np.where(inner, 0.0, params.roi_penalty)

    psi_u = (
        params.lambda1 * psi_shape
        + params.lambda2 * psi_color
        + params.lambda3 * psi_roi
    )
    return UnaryField(psi_u, psi_shape, psi_color, psi_roi, params)


def _softmax2(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis of size 2, overflow-safe."""
    m = a.max(axis=-1, keepdims=True)
    e = np.exp(a - m)
    return e / e.sum(axis=-1, keepdims=True)


def _exact_kernel(image: np.ndarray, params: CrfParams) -> np.ndarray:
    """Combined appearance+smoothness kernel matrix, float64, no diagonal zeroing."""
    H, W = image.shape[:2]
    N = H * W
    yy, xx = np.mgrid[0:H, 0:W]
    pos = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)
    col = image.reshape(-1, 3).astype(np.float64)
    K = np.empty((N, N), dtype=np.float64)
    block = max(1, (1 << 22) // N)
    for a in range(0, N, block):
        b = min(N, a + block)
        dp2 = ((pos[a:b, None, :] - pos[None, :, :]) ** 2).sum(-1)
        dc2 = ((col[a:b, None, :] - col[None, :, :]) ** 2).sum(-1)
        K[a:b] = params.w_appearance * np.exp(
            -dp2 / (2 * params.theta_alpha**2) - dc2 / (2 * params.theta_beta**2)
        )
        K[a:b] += params.w_smoothness * np.exp(-dp2 / (2 * params.theta_gamma**2))
    return K


def _gibbs_free_energy(q: np.ndarray, psi: np.ndarray, Kq: np.ndarray, self_w: float) -> float:
    """F = E_Q[energy] - H(Q) for the Potts model with kernel products Kq."""
    unary = float((q * psi).sum())
    cross = float((q[:, 0] * Kq[:, 1]).sum())
    cross -= self_w * float((q[:, 0] * q[:, 1]).sum())
    ent = float((q * np.log(q, where=q > 0, out=np.zeros_like(q))).sum())
    return unary + cross + ent


class _SmoothnessFilter:
    """Separable unnormalized Gaussian, truncated at five stds, zero boundary."""

    def __init__(self, shape: tuple[int, int], theta: float):
        self.shape = shape
        r = int(np.ceil(5.0 * theta))
        x = np.arange(-r, r + 1, dtype=np.float64)
        self.kernel = np.exp(-(x**2) / (2 * theta**2))

    def __call__(self, field: np.ndarray) -> np.ndarray:
        out = correlate1d(field, self.kernel, axis=0, mode="constant")
        return correlate1d(out, self.kernel, axis=1, mode="constant")


def meanfield_infer(
    unary: UnaryField,
    image: np.ndarray,
    params: CrfParams | None = None,
    mode: str = "fast",
    track_energy: bool = False,
):
    """Parallel mean-field inference; returns Q(fg) as (H, W) float.

    With track_energy (exact mode only) returns (Q, energies) where energies
    holds the Gibbs free energy before iterating and after each iteration.
    """
    if params is None:
        params = unary.params
    image = check_rgb_image(image, "image")
    H, W = image.shape[:2]
    if unary.psi_u.shape[:2] != (H, W):
        raise ValueError("unary/image shape mismatch")
    N = H * W
    psi = unary.psi_u.reshape(N, 2)
    self_w = params.w_appearance + params.w_smoothness

    q = _softmax2(-psi)
    if mode == "exact":
        if H > EXACT_MAX_SIDE or W > EXACT_MAX_SIDE:
            raise ValueError(
                f"exact mode limited to {EXACT_MAX_SIDE}x{EXACT_MAX_SIDE} images"
            )
        K = _exact_kernel(image, params)
        energies = []
        if track_energy:
            energies.append(_gibbs_free_energy(q, psi, K @ q, self_w))
        for _ in range(params.iterations):
            Kq = K @ q
            m = Kq - self_w * q  # remove the self term
            q = _softmax2(-psi - m[:, ::-1])  # Potts: cross-label coupling
            if track_energy:
                energies.append(_gibbs_free_energy(q, psi, K @ q, self_w))
        Q = q[:, 1].reshape(H, W)
        return (Q, energies) if track_energy else Q

    if mode != "fast":
        raise ValueError(f"unknown inference mode: {mode!r}")
    if track_energy:
        raise ValueError("free-energy tracking requires exact mode")

    yy, xx = np.mgrid[0:H, 0:W]
    feats = np.stack(
        [
            xx.ravel() / params.theta_alpha,
            yy.ravel() / params.theta_alpha,
            image[..., 0].ravel() / params.theta_beta,
            image[..., 1].ravel() / params.theta_beta,
            image[..., 2].ravel() / params.theta_beta,
        ],
        axis=1,
    )
    lattice = PermutohedralLattice(feats)
    smooth = _SmoothnessFilter((H, W), params.theta_gamma)
    for _ in range(params.iterations):
        app = lattice.filter(q) - q
        sm = np.stack(
            [smooth(q[:, l].reshape(H, W)).ravel() for l in (0, 1)], axis=1
        ) - q
        m = params.w_appearance * app + params.w_smoothness * sm
        q = _softmax2(-psi - m[:, ::-1])
    return q[:, 1].reshape(H, W)


def segment(
    image: np.ndarray,
    h: Hypothesis,
    model: Model,
    params: CrfParams | None = None,
    mode: str = "fast",
    return_diagnostics: bool = False,
):
    """Full per-hypothesis segmentation; ties at Q=0.5 go to background."""
    if params is None:
        params = CrfParams()
    image = check_rgb_image(image, "image")
    H, W = image.shape[:2]
    if not h.contributors:
        log.warning("hypothesis has no contributors; returning empty mask")
        empty = np.zeros((H, W), dtype=np.uint8)
        if return_diagnostics:
            return empty, np.zeros((H, W)), None
        return empty
    strengths = consolidate(h, model)
    likelihood = splat_likelihood(
        strengths, (H, W), model.params.base_size, model.stats.mean_feat_scale
    )
    unary = build_unary(likelihood, image, h, params)
    Q = meanfield_infer(unary, image, params, mode=mode)
    mask = (Q > 0.5).astype(np.uint8)
    if return_diagnostics:
        return mask, likelihood, unary
    return mask


def segment_image(
    image: np.ndarray,
    hypotheses: list[Hypothesis],
    model: Model,
    params: CrfParams | None = None,
    mode: str = "fast",
) -> np.ndarray:
    """Segment every hypothesis independently and OR the masks together."""
    image = check_rgb_image(image, "image")
    out = np.zeros(image.shape[:2], dtype=np.uint8)
    for h in hypotheses:
        out |= segment(image, h, model, params, mode=mode)
    return out
