"""Mask IoU, average precision, COCO-style mAP, and fold assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COCO_IOU_THRESHOLDS = tuple(np.arange(0.50, 0.951, 0.05).round(2))


@dataclass(frozen=True)
class SegDetection:
    image_id: str
    mask: np.ndarray
    score: float


@dataclass(frozen=True)
class FoldSpec:
    assignments: dict[str, int]
    n_folds: int


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; two empty masks give 0."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = (a | b).sum()
    if union == 0:
        return 0.0
    return float((a & b).sum() / union)


def _match_detections(
    dets: list[SegDetection],
    gts: dict[str, list[np.ndarray]],
    iou_thresh: float,
) -> tuple[np.ndarray, int]:
    """Greedy TP/FP flags in score order plus the total ground-truth count."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    used: dict[str, set[int]] = {k: set() for k in gts}
    tp = np.zeros(len(dets), dtype=bool)
    for rank, i in enumerate(order):
        det = dets[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts.get(det.image_id, [])):
            if j in used[det.image_id]:
                continue
            v = mask_iou(det.mask, gt)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_thresh:
            used[det.image_id].add(best_j)
            tp[rank] = True
    n_gt = sum(len(v) for v in gts.values())
    return tp, n_gt


def average_precision(
    dets: list[SegDetection],
    gts: dict[str, list[np.ndarray]],
    iou_thresh: float = 0.5,
) -> float:
    """All-point interpolated AP with greedy highest-IoU matching."""
    tp, n_gt = _match_detections(dets, gts, iou_thresh)
    if n_gt == 0 or len(dets) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # monotone precision envelope, integrated over recall increments
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def coco_map(
    dets: list[SegDetection], gts: dict[str, list[np.ndarray]]
) -> float:
    """Mean AP over IoU thresholds 0.50, 0.55, ..., 0.95."""
    return float(
        np.mean([average_precision(dets, gts, t) for t in COCO_IOU_THRESHOLDS])
    )


def mean_matched_iou(
    dets: list[SegDetection],
    gts: dict[str, list[np.ndarray]],
    iou_thresh: float = 0.5,
) -> float:
    """Mean IoU of greedily matched detection/ground-truth pairs."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    used: dict[str, set[int]] = {k: set() for k in gts}
    ious = []
    for i in order:
        det = dets[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts.get(det.image_id, [])):
            if j in used[det.image_id]:
                continue
            v = mask_iou(det.mask, gt)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_thresh:
            used[det.image_id].add(best_j)
            ious.append(best_iou)
    return float(np.mean(ious)) if ious else 0.0


def make_folds(
    image_ids: list[str],
    n_folds: int,
    pairs: list[set[str]] | None = None,
    seed: int = 0,
) -> FoldSpec:
    """Assign ids to folds, keeping paired ids together.

    Pair-groups are shuffled by the seed and then each goes to the currently
    smallest fold, which bounds the fold-size spread by the largest group.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    pairs = pairs or []
    seen: set[str] = set()
    for group in pairs:
        for gid in group:
            if gid in seen:
                raise ValueError(f"id {gid!r} appears in multiple pairs")
            seen.add(gid)
            if gid not in image_ids:
                raise ValueError(f"paired id {gid!r} is not a dataset image")
    id_to_group: dict[str, int] = {}
    groups: list[list[str]] = []
    for group in pairs:
        idx = len(groups)
        groups.append(sorted(group))
        for gid in group:
            id_to_group[gid] = idx
    for iid in image_ids:
        if iid not in id_to_group:
            id_to_group[iid] = len(groups)
            groups.append([iid])
    if n_folds > len(groups):
        raise ValueError(
            f"n_folds={n_folds} exceeds the {len(groups)} available pair-groups"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(groups))
    sizes = [0] * n_folds
    assignments: dict[str, int] = {}
    for g in order:
        fold = int(np.argmin(sizes))
        for iid in groups[g]:
            assignments[iid] = fold
        sizes[fold] += len(groups[g])
    return FoldSpec(assignments, n_folds)
