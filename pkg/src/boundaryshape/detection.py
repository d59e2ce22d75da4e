"""Object detection: codeword matching, weighted voting, mean-shift modes, ROI refinement.

Votes live in a continuous (x, y, log s) space.  Modes are found by weighted
mean-shift with a Gaussian kernel whose spatial bandwidth adapts to the scale
of the current estimate; hypotheses below a relative score floor are dropped
and the rest pass greedy non-maximum suppression on ROI overlap.

Refinement keeps a hypothesis fixed and enlarges its supporting feature set by
dense sampling inside the ROI; the refined score is the kernel-weighted mass
of the enlarged set, so it stays commensurate with the mean-shift score.
Final ranking uses the refined score; NMS membership is settled before
refinement because refinement never moves an ROI.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .codebook import Model, similarity_matrix
from .features import Keypoint, compute_descriptors, dense_sample, detect_harris_laplace
from .validation import as_gray, check_positive

log = logging.getLogger(__name__)

DEFAULT_LOG_S_BANDWIDTH = 0.2
DEFAULT_SCORE_REL_THRESHOLD = 0.1
DEFAULT_NMS_IOU = 0.5
DEFAULT_REFINE_STRIDE = 4
DEFAULT_REFINE_SCALE_FACTORS = (0.75, 1.0, 1.5)
# dense-sampled features get ids disjoint from detector keypoint indices
REFINE_FEATURE_ID_BASE = 1_000_000

_MAX_SEEDS = 64
_MAX_MEANSHIFT_ITERS = 100
_CONVERGENCE_TOL = 1e-4


@dataclass(frozen=True)
class DetectionParams:
    """Tunables of the voting/mode-seeking stage.

    bandwidth=None means a tenth of the mean training object diagonal.
    """

    bandwidth: float | None = None
    log_s_bandwidth: float = DEFAULT_LOG_S_BANDWIDTH
    score_rel_threshold: float = DEFAULT_SCORE_REL_THRESHOLD
    nms_iou: float = DEFAULT_NMS_IOU
    refine: bool = True
    refine_stride: int = DEFAULT_REFINE_STRIDE
    refine_scale_factors: tuple[float, ...] = DEFAULT_REFINE_SCALE_FACTORS

    def __post_init__(self) -> None:
        if self.bandwidth is not None:
            check_positive(self.bandwidth, "bandwidth")
        check_positive(self.log_s_bandwidth, "log_s_bandwidth")
        if not 0.0 <= self.score_rel_threshold <= 1.0:
            raise ValueError("score_rel_threshold must lie in [0, 1]")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError("nms_iou must lie in [0, 1]")
        if self.refine_stride < 1:
            raise ValueError("refine_stride must be >= 1")


@dataclass(frozen=True)
class Match:
    feature_id: int
    keypoint: Keypoint
    codeword_id: int
    sim: float


@dataclass(frozen=True)
class Vote:
    cx: float
    cy: float
    s: float
    weight: float
    feature_id: int
    codeword_id: int
    occurrence_id: int
    # anchor: the feature that cast this vote, needed to place shape splats
    fx: float = 0.0
    fy: float = 0.0
    fscale: float = 1.0


@dataclass(frozen=True)
class Hypothesis:
    cx: float
    cy: float
    s: float
    score: float
    roi: tuple[float, float, float, float]  # (x0, y0, w, h)
    contributors: tuple[Vote, ...]
    flags: tuple[str, ...] = ()


def roi_rect(
    cx: float, cy: float, s: float, obj_size: tuple[float, float]
) -> tuple[float, float, float, float]:
    w = obj_size[0] * s
    h = obj_size[1] * s
    return (cx - w / 2.0, cy - h / 2.0, w, h)


def rect_iou(
    a: tuple[float, float, float, float], b: tuple[float, float, float, float]
) -> float:
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def match_features(
    keypoints: list[Keypoint], descriptors: np.ndarray, model: Model
) -> list[Match]:
    """All (feature, codeword) pairs with similarity >= the model threshold."""
    if not keypoints:
        return []
    sims = similarity_matrix(np.asarray(descriptors), model.centers)
    matches = []
    for k, kp in enumerate(keypoints):
        for i in np.flatnonzero(sims[k] >= model.params.t):
            matches.append(Match(k, kp, int(i), float(sims[k, i])))
    return matches


def cast_votes(matches: list[Match], model: Model) -> list[Vote]:
    """One vote per (match, occurrence); weights of one feature sum to 1."""
    m_count: dict[int, int] = {}
    for m in matches:
        m_count[m.feature_id] = m_count.get(m.feature_id, 0) + 1
    votes = []
    for m in matches:
        cw = model.codewords[m.codeword_id]
        n_occ = len(cw.occurrences)
        w = 1.0 / (m_count[m.feature_id] * n_occ)
        for o_id, occ in enumerate(cw.occurrences):
            s = m.keypoint.scale / occ.feat_scale
            votes.append(
                Vote(
                    cx=m.keypoint.x - occ.dx * s,
                    cy=m.keypoint.y - occ.dy * s,
                    s=s,
                    weight=w,
                    feature_id=m.feature_id,
                    codeword_id=m.codeword_id,
                    occurrence_id=o_id,
                    fx=m.keypoint.x,
                    fy=m.keypoint.y,
                    fscale=m.keypoint.scale,
                )
            )
    return votes


def _vote_arrays(votes: list[Vote]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([(v.cx, v.cy, np.log(v.s)) for v in votes], dtype=np.float64)
    W = np.array([v.weight for v in votes], dtype=np.float64)
    return X, W


def _seed_points(X: np.ndarray, W: np.ndarray, bandwidth: float) -> np.ndarray:
    """Weighted bin means as mean-shift starting points, heaviest bins first."""
    b_xy = bandwidth * float(np.exp(np.average(X[:, 2], weights=W)))
    keys = np.stack(
        [
            np.floor(X[:, 0] / b_xy),
            np.floor(X[:, 1] / b_xy),
            np.floor(X[:, 2] / DEFAULT_LOG_S_BANDWIDTH),
        ],
        axis=1,
    ).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    n_bins = uniq.shape[0]
    mass = np.bincount(inv, weights=W, minlength=n_bins)
    seeds = np.zeros((n_bins, 3))
    for d in range(3):
        seeds[:, d] = np.bincount(inv, weights=W * X[:, d], minlength=n_bins) / mass
    order = np.argsort(-mass, kind="stable")
    return seeds[order[:_MAX_SEEDS]]


def _normalized_sq_dist(
    points: np.ndarray, X: np.ndarray, bandwidth: float, log_s_bandwidth: float
) -> np.ndarray:
    """(n_points, n_votes) squared distances, spatial part scaled per point."""
    h_xy = bandwidth * np.exp(points[:, 2])  # scale-adaptive
    d = points[:, None, :] - X[None, :, :]
    r2 = (d[:, :, 0] ** 2 + d[:, :, 1] ** 2) / h_xy[:, None] ** 2
    r2 += d[:, :, 2] ** 2 / log_s_bandwidth**2
    return r2


def estimate_modes(
    votes: list[Vote],
    bandwidth: float,
    obj_size: tuple[float, float],
    log_s_bandwidth: float = DEFAULT_LOG_S_BANDWIDTH,
    score_rel_threshold: float = DEFAULT_SCORE_REL_THRESHOLD,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> list[Hypothesis]:
    """Weighted Gaussian mean-shift in (x, y, log s) followed by NMS."""
    if not votes:
        return []
    check_positive(bandwidth, "bandwidth")
    X, W = _vote_arrays(votes)
    seeds = _seed_points(X, W, bandwidth)

    modes = seeds.copy()
    active = np.ones(len(modes), dtype=bool)
    for _ in range(_MAX_MEANSHIFT_ITERS):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        r2 = _normalized_sq_dist(modes[idx], X, bandwidth, log_s_bandwidth)
        k = np.exp(-0.5 * r2) * W[None, :]
        denom = k.sum(axis=1)
        safe = denom > 1e-300
        new = modes[idx].copy()
        new[safe] = (k[safe] @ X) / denom[safe, None]
        shift = np.abs(new - modes[idx]).max(axis=1)
        modes[idx] = new
        h_ref = bandwidth * np.exp(modes[idx][:, 2])
        done = shift < _CONVERGENCE_TOL * np.minimum(h_ref, log_s_bandwidth)
        active[idx[done]] = False
        active[idx[~safe]] = False

    # score every mode, then deduplicate keeping the heaviest
    r2 = _normalized_sq_dist(modes, X, bandwidth, log_s_bandwidth)
    k = np.exp(-0.5 * r2) * W[None, :]
    scores = k.sum(axis=1)
    order = np.argsort(-scores, kind="stable")
    kept: list[int] = []
    for i in order:
        dup = False
        for j in kept:
            d = modes[i] - modes[j]
            h_xy = bandwidth * np.exp(modes[j][2])
            r2_ij = (d[0] ** 2 + d[1] ** 2) / h_xy**2 + d[2] ** 2 / log_s_bandwidth**2
            if np.sqrt(r2_ij) < 0.5:
                dup = True
                break
        if not dup:
            kept.append(int(i))

    hyps = []
    for i in kept:
        cx, cy, logs = modes[i]
        s = float(np.exp(logs))
        contrib = tuple(votes[j] for j in np.flatnonzero(r2[i] <= 1.0))
        if not contrib:
            continue
        hyps.append(
            Hypothesis(
                cx=float(cx),
                cy=float(cy),
                s=s,
                score=float(scores[i]),
                roi=roi_rect(float(cx), float(cy), s, obj_size),
                contributors=contrib,
            )
        )
    if not hyps:
        return []
    hyps.sort(key=lambda h: -h.score)
    floor = hyps[0].score * score_rel_threshold
    hyps = [h for h in hyps if h.score >= floor]

    final: list[Hypothesis] = []
    for h in hyps:
        if all(rect_iou(h.roi, g.roi) <= nms_iou for g in final):
            final.append(h)
    return final


def refine_hypothesis(
    h: Hypothesis,
    image: np.ndarray,
    model: Model,
    stride: int = DEFAULT_REFINE_STRIDE,
    scale_factors: tuple[float, ...] = DEFAULT_REFINE_SCALE_FACTORS,
    bandwidth: float | None = None,
    log_s_bandwidth: float = DEFAULT_LOG_S_BANDWIDTH,
) -> Hypothesis:
    """Enlarge a hypothesis' support by dense sampling inside its ROI.

    Center and scale stay fixed.  Votes from the dense features are kept only
    when they land within a quarter ROI diagonal of the hypothesis center;
    their contributors join the original ones.  The score is recomputed as the
    kernel-weighted mass of the union under the same Gaussian kernel the mode
    search uses, so refined and unrefined scores stay on one scale and larger
    ROIs gain nothing from their larger sampling window alone.
    """
    gray = as_gray(image)
    ih, iw = gray.shape
    x0, y0, rw, rh = h.roi
    # clip the sampling window to the image; an off-image ROI leaves h as-is
    cx0, cy0 = max(x0, 0.0), max(y0, 0.0)
    cx1, cy1 = min(x0 + rw, float(iw)), min(y0 + rh, float(ih))
    if cx1 <= cx0 or cy1 <= cy0:
        log.warning("refinement skipped: ROI fully outside image")
        return replace(h, flags=h.flags + ("roi_outside",))

    scales = tuple(f * model.stats.mean_feat_scale * h.s for f in scale_factors)
    kps = dense_sample((cx0, cy0, cx1 - cx0, cy1 - cy0), stride, list(scales))
    if not kps:
        return replace(h, flags=h.flags + ("refined",))
    descs = compute_descriptors(gray, kps, model.params.features)
    matches = match_features(kps, descs, model)
    matches = [replace(m, feature_id=m.feature_id + REFINE_FEATURE_ID_BASE) for m in matches]
    votes = cast_votes(matches, model)

    max_dist = 0.25 * float(np.hypot(rw, rh))
    near = [
        v
        for v in votes
        if np.hypot(v.cx - h.cx, v.cy - h.cy) <= max_dist
    ]
    seen = {(v.feature_id, v.codeword_id, v.occurrence_id) for v in h.contributors}
    merged = list(h.contributors)
    for v in near:
        key = (v.feature_id, v.codeword_id, v.occurrence_id)
        if key not in seen:
            seen.add(key)
            merged.append(v)
    if bandwidth is None:
        bandwidth = 0.1 * model.stats.mean_obj_diag
    X, W = _vote_arrays(merged)
    point = np.array([[h.cx, h.cy, np.log(h.s)]])
    r2 = _normalized_sq_dist(point, X, bandwidth, log_s_bandwidth)[0]
    score = float(np.sum(W * np.exp(-0.5 * r2)))
    return replace(
        h,
        score=score,
        contributors=tuple(merged),
        flags=h.flags + ("refined",),
    )


def detect_objects(
    image: np.ndarray,
    model: Model,
    params: DetectionParams | None = None,
) -> list[Hypothesis]:
    """Full single-image detection pipeline; hypotheses sorted by final score."""
    if params is None:
        params = DetectionParams()
    gray = as_gray(image)
    bandwidth = params.bandwidth
    if bandwidth is None:
        bandwidth = 0.1 * model.stats.mean_obj_diag
    kps = detect_harris_laplace(gray, model.params.features)
    if not kps:
        return []
    descs = compute_descriptors(gray, kps, model.params.features)
    matches = match_features(kps, descs, model)
    votes = cast_votes(matches, model)
    obj_size = (model.stats.mean_obj_w, model.stats.mean_obj_h)
    hyps = estimate_modes(
        votes,
        bandwidth,
        obj_size,
        log_s_bandwidth=params.log_s_bandwidth,
        score_rel_threshold=params.score_rel_threshold,
        nms_iou=params.nms_iou,
    )
    if params.refine:
        hyps = [
            refine_hypothesis(
                h, gray, model,
                stride=params.refine_stride,
                scale_factors=params.refine_scale_factors,
                bandwidth=bandwidth,
                log_s_bandwidth=params.log_s_bandwidth,
            )
            for h in hyps
        ]
        hyps.sort(key=lambda h: -h.score)
    return hyps
