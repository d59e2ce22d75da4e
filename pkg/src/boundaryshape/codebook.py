"""Appearance codebook learning with occurrences and per-codeword shape codebooks.

Training images contribute foreground keypoints only.  Each keypoint yields an
appearance descriptor (image window) and a mask descriptor (binary mask window)
at identical coordinates and scale.  Appearance descriptors are clustered into
codewords by reciprocal-nearest-neighbor agglomeration; the mask descriptors
attached to one codeword are clustered the same way and quantized into that
codeword's shape codebook.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .features import (
    DESCRIPTOR_SIZE,
    FeatureParams,
    Keypoint,
    compute_descriptors,
    detect_harris_laplace,
)
from .shape_descriptor import (
    DEFAULT_BETA,
    ShapeDescriptor,
    cell_strengths,
    quantize,
)
from .validation import as_gray, check_mask, check_positive

MODEL_FORMAT_VERSION = 1

DEFAULT_SIMILARITY_THRESHOLD = 0.7
DEFAULT_BASE_SIZE = 21

_SQRT2 = float(np.sqrt(2.0))


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Similarity of two unit (or all-zero) descriptors, in [0, 1].

    1 - ||a - b|| / sqrt(2).  Two all-zero descriptors compare as 1.0, an
    all-zero against a non-zero as 0.0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    za = not a.any()
    zb = not b.any()
    if za and zb:
        return 1.0
    if za or zb:
        return 0.0
    return 1.0 - float(np.linalg.norm(a - b)) / _SQRT2


def similarity_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise similarity between rows of A (n,128) and rows of B (m,128)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    # ||a-b||^2 = |a|^2 + |b|^2 - 2ab; descriptors are unit or all-zero
    sq_a = np.einsum("ij,ij->i", A, A)
    sq_b = np.einsum("ij,ij->i", B, B)
    d2 = sq_a[:, None] + sq_b[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    sims = 1.0 - np.sqrt(d2) / _SQRT2
    zero_a = sq_a == 0.0
    zero_b = sq_b == 0.0
    if zero_a.any() or zero_b.any():
        sims[zero_a, :] = 0.0
        sims[:, zero_b] = 0.0
        sims[np.ix_(zero_a, zero_b)] = 1.0
    return sims


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]
    centroid: np.ndarray


def _renormalized_mean(vectors: np.ndarray) -> np.ndarray:
    m = vectors.mean(axis=0)
    n = np.linalg.norm(m)
    return m / n if n > 0 else m


def agglomerative_cluster(descs: np.ndarray, t: float) -> list[Cluster]:
    """Merge reciprocal-nearest-neighbor pairs while centroid similarity >= t.

    Starts from singletons.  Each round merges the lowest-index reciprocal
    pair whose centroid similarity meets the threshold, recomputes the merged
    centroid as the renormalized member mean, and stops when no reciprocal
    pair qualifies.  Fully deterministic for a fixed input order.
    """
    D = np.asarray(descs, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] == 0:
        raise ValueError("agglomerative_cluster needs a non-empty (n, d) array")
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {t}")
    n = D.shape[0]
    members: list[list[int]] = [[i] for i in range(n)]
    centroids = D.copy()
    alive = np.ones(n, dtype=bool)
    sims = similarity_matrix(centroids, centroids)
    np.fill_diagonal(sims, -np.inf)

    while True:
        # nearest neighbor per live cluster; argmax takes the lowest index on ties
        nn = sims.argmax(axis=1)
        best = (-1, -1)
        for i in np.flatnonzero(alive):
            j = nn[i]
            if j > i and nn[j] == i and sims[i, j] >= t:
                best = (i, j)
                break
        if best[0] < 0:
            break
        i, j = best
        assert sims[i, j] >= t
        members[i].extend(members[j])
        alive[j] = False
        centroids[i] = _renormalized_mean(D[members[i]])
        row = similarity_matrix(centroids[i : i + 1], centroids)[0]
        row[~alive] = -np.inf
        row[i] = -np.inf
        sims[i, :] = row
        sims[:, i] = row
        sims[j, :] = -np.inf
        sims[:, j] = -np.inf

    return [
        Cluster(tuple(members[i]), centroids[i].copy())
        for i in np.flatnonzero(alive)
    ]


@dataclass(frozen=True)
class Occurrence:
    """One training observation of a codeword on one object instance."""

    dx: float  # keypoint minus object center, pixels at training scale
    dy: float
    feat_scale: float
    obj_w: float
    obj_h: float
    shape_idx: int
    source_image: str

    def __post_init__(self) -> None:
        check_positive(self.feat_scale, "feat_scale")
        check_positive(self.obj_w, "obj_w")
        check_positive(self.obj_h, "obj_h")
        if self.shape_idx < 0:
            raise ValueError("shape_idx must be non-negative")


@dataclass(frozen=True)
class ShapeEntry:
    """Quantized shape-codebook entry with its precomputed cell strengths."""

    shape: ShapeDescriptor
    strengths: np.ndarray  # (4, 4) float
    member_count: int


@dataclass
class Codeword:
    center: np.ndarray  # (128,) unit or all-zero
    occurrences: list[Occurrence]
    shape_codebook: list[ShapeEntry]

    def __post_init__(self) -> None:
        if len(self.occurrences) == 0:
            raise ValueError("codeword must own at least one occurrence")
        for occ in self.occurrences:
            if occ.shape_idx >= len(self.shape_codebook):
                raise ValueError("occurrence shape_idx out of range")


@dataclass(frozen=True)
class ModelParams:
    t: float = DEFAULT_SIMILARITY_THRESHOLD
    beta: float = DEFAULT_BETA
    base_size: int = DEFAULT_BASE_SIZE
    features: FeatureParams = field(default_factory=FeatureParams)

    def __post_init__(self) -> None:
        if not 0.0 < self.t < 1.0:
            raise ValueError("t must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.base_size < 3 or self.base_size % 2 == 0:
            raise ValueError("base_size must be odd and >= 3")


@dataclass(frozen=True)
class TrainingStats:
    mean_obj_w: float
    mean_obj_h: float
    mean_obj_diag: float
    mean_feat_scale: float
    n_images: int


@dataclass
class Model:
    codewords: list[Codeword]
    params: ModelParams
    class_name: str
    stats: TrainingStats

    @property
    def centers(self) -> np.ndarray:
        """Codeword centroids stacked as an (n_codewords, 128) array."""
        return np.stack([cw.center for cw in self.codewords])


def mask_bbox(mask: np.ndarray) -> tuple[float, float, float, float]:
    """Foreground bounding box as (x0, y0, w, h); raises on an empty mask."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("mask has no foreground")
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1)


def foreground_keypoints(
    keypoints: list[Keypoint], mask: np.ndarray
) -> list[Keypoint]:
    h, w = mask.shape
    kept = []
    for kp in keypoints:
        xi = int(round(kp.x))
        yi = int(round(kp.y))
        if 0 <= xi < w and 0 <= yi < h and mask[yi, xi]:
            kept.append(kp)
    return kept


def build_model(
    images: list[np.ndarray],
    masks: list[np.ndarray],
    params: ModelParams | None = None,
    class_name: str = "object",
    image_ids: list[str] | None = None,
) -> Model:
    """Learn a model from (image, mask) training pairs.

    Keypoints are detected on each grayscale image and only those on mask
    foreground are kept.  Every kept keypoint contributes one appearance
    descriptor, one mask descriptor, and one occurrence record.
    """
    if params is None:
        params = ModelParams()
    if len(images) == 0 or len(images) != len(masks):
        raise ValueError("need equal, non-zero numbers of images and masks")
    if image_ids is None:
        image_ids = [f"train_{i:04d}" for i in range(len(images))]

    app_descs: list[np.ndarray] = []
    mask_descs: list[np.ndarray] = []
    raw_occurrences: list[dict] = []
    obj_sizes: list[tuple[float, float]] = []

    for img, msk, img_id in zip(images, masks, image_ids):
        gray = as_gray(img)
        msk = check_mask(msk, "mask")
        if gray.shape != msk.shape:
            raise ValueError(f"image/mask shape mismatch for {img_id}")
        x0, y0, bw, bh = mask_bbox(msk)
        cx = x0 + (bw - 1) / 2.0
        cy = y0 + (bh - 1) / 2.0
        obj_sizes.append((bw, bh))

        kps = detect_harris_laplace(gray, params.features)
        kps = foreground_keypoints(kps, msk)
        if not kps:
            continue
        app = compute_descriptors(gray, kps, params.features)
        shp = compute_descriptors(msk.astype(np.float64), kps, params.features)
        for kp, a, s in zip(kps, app, shp):
            app_descs.append(a)
            mask_descs.append(s)
            raw_occurrences.append(
                dict(
                    dx=kp.x - cx,
                    dy=kp.y - cy,
                    feat_scale=kp.scale,
                    obj_w=bw,
                    obj_h=bh,
                    source_image=img_id,
                )
            )

    if not app_descs:
        raise ValueError("no foreground keypoints found in any training image")

    clusters = agglomerative_cluster(np.stack(app_descs), params.t)
    mask_desc_arr = np.stack(mask_descs)

    codewords: list[Codeword] = []
    for cluster in clusters:
        idx = list(cluster.members)
        shape_clusters = agglomerative_cluster(mask_desc_arr[idx], params.t)
        entries = []
        member_to_entry: dict[int, int] = {}
        for e, sc in enumerate(shape_clusters):
            sd = quantize(sc.centroid, params.beta)
            entries.append(
                ShapeEntry(
                    shape=sd,
                    strengths=cell_strengths(sd),
                    member_count=len(sc.members),
                )
            )
            for local in sc.members:
                member_to_entry[local] = e
        occs = [
            Occurrence(shape_idx=member_to_entry[local], **raw_occurrences[g])
            for local, g in enumerate(idx)
        ]
        codewords.append(
            Codeword(
                center=cluster.centroid,
                occurrences=occs,
                shape_codebook=entries,
            )
        )

    ws = np.array([s[0] for s in obj_sizes])
    hs = np.array([s[1] for s in obj_sizes])
    scales = np.array([o["feat_scale"] for o in raw_occurrences])
    stats = TrainingStats(
        mean_obj_w=float(ws.mean()),
        mean_obj_h=float(hs.mean()),
        mean_obj_diag=float(np.sqrt(ws**2 + hs**2).mean()),
        mean_feat_scale=float(scales.mean()),
        n_images=len(images),
    )
    return Model(codewords, params, class_name, stats)


# --- persistence ------------------------------------------------------------
#
# JSON document: ints round-trip bit-exactly, floats via repr (exact for
# float64).  Field order is fixed so identical models produce identical bytes.


def model_to_dict(model: Model) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "class_name": model.class_name,
        "params": {
            "t": model.params.t,
            "beta": model.params.beta,
            "base_size": model.params.base_size,
            "features": {
                k: getattr(model.params.features, k)
                for k in (
                    "harris_k",
                    "n_octaves",
                    "levels_per_octave",
                    "base_sigma",
                    "harris_rel_threshold",
                    "dog_rel_threshold",
                    "integration_factor",
                    "patch_factor",
                    "min_image_side",
                    "merge_radius",
                    "max_keypoints",
                )
            },
        },
        "stats": {
            "mean_obj_w": model.stats.mean_obj_w,
            "mean_obj_h": model.stats.mean_obj_h,
            "mean_obj_diag": model.stats.mean_obj_diag,
            "mean_feat_scale": model.stats.mean_feat_scale,
            "n_images": model.stats.n_images,
        },
        "codewords": [
            {
                "center": [float(v) for v in cw.center],
                "occurrences": [
                    {
                        "dx": occ.dx,
                        "dy": occ.dy,
                        "feat_scale": occ.feat_scale,
                        "obj_w": occ.obj_w,
                        "obj_h": occ.obj_h,
                        "shape_idx": occ.shape_idx,
                        "source_image": occ.source_image,
                    }
                    for occ in cw.occurrences
                ],
                "shape_codebook": [
                    {
                        "bins": [int(b) for b in entry.shape.bins.ravel()],
                        "beta": entry.shape.beta,
                        "strengths": [float(v) for v in entry.strengths.ravel()],
                        "member_count": entry.member_count,
                    }
                    for entry in cw.shape_codebook
                ],
            }
            for cw in model.codewords
        ],
    }


def model_from_dict(doc: dict) -> Model:
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version: {version!r}")
    p = doc["params"]
    params = ModelParams(
        t=float(p["t"]),
        beta=float(p["beta"]),
        base_size=int(p["base_size"]),
        features=FeatureParams(**p["features"]),
    )
    s = doc["stats"]
    stats = TrainingStats(
        mean_obj_w=float(s["mean_obj_w"]),
        mean_obj_h=float(s["mean_obj_h"]),
        mean_obj_diag=float(s["mean_obj_diag"]),
        mean_feat_scale=float(s["mean_feat_scale"]),
        n_images=int(s["n_images"]),
    )
    codewords = []
    for cd in doc["codewords"]:
        center = np.asarray(cd["center"], dtype=np.float64)
        if center.shape != (DESCRIPTOR_SIZE,):
            raise ValueError("codeword center has wrong length")
        entries = []
        for ed in cd["shape_codebook"]:
            bins = np.asarray(ed["bins"], dtype=np.uint8).reshape(4, 4, 8)
            sd = ShapeDescriptor(bins=bins, beta=float(ed["beta"]))
            strengths = np.asarray(ed["strengths"], dtype=np.float64).reshape(4, 4)
            entries.append(ShapeEntry(sd, strengths, int(ed["member_count"])))
        occs = [
            Occurrence(
                dx=float(od["dx"]),
                dy=float(od["dy"]),
                feat_scale=float(od["feat_scale"]),
                obj_w=float(od["obj_w"]),
                obj_h=float(od["obj_h"]),
                shape_idx=int(od["shape_idx"]),
                source_image=str(od["source_image"]),
            )
            for od in cd["occurrences"]
        ]
        codewords.append(Codeword(center, occs, entries))
    return Model(codewords, params, str(doc["class_name"]), stats)


def save_model(model: Model, path: str) -> None:
    doc = model_to_dict(model)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path: str) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return model_from_dict(doc)
