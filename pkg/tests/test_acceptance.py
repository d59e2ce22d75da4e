"""Acceptance suite: one test per criterion, one summary line each.

Criteria 1-7 are blocking.  Criterion 8 compares against reference targets
published for the standard class datasets; it is informational and never
fails (see README, "Reference targets").  Run with `pytest -v
tests/test_acceptance.py -rA` to see every summary line.
"""

import time

import numpy as np

from boundaryshape.codebook import ModelParams, build_model
from boundaryshape.detection import (
    Match,
    cast_votes,
    detect_objects,
)
from boundaryshape.evaluation import (
    SegDetection,
    average_precision,
    coco_map,
    mask_iou,
)
from boundaryshape.features import Keypoint
from boundaryshape.imageops import load_image, load_mask
from boundaryshape.segmentation import (
    CrfParams,
    build_unary,
    consolidate,
    meanfield_infer,
    segment_image,
    splat_likelihood,
)
from boundaryshape.shape_descriptor import (
    cell_strengths,
    extract_shape_descriptor,
    quantize,
)
from boundaryshape.synthetic import generate_dataset

# results shared from criterion 7 into the informational criterion 8
_shared: dict = {}


def _line(n: int, ok: bool, detail: str) -> None:
    print(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")


# --------------------------------------------------------------------------
# Criterion 1: strength signs on 8 edge/corner masks, < 1 s
# --------------------------------------------------------------------------

_C1_SIZE = 64
_C1_SCALE = 3.5
_C1_CELL = 6 * _C1_SCALE / 4.0  # descriptor cell side in px
_C1_R = _C1_CELL  # corner fillet radius, about one cell


def _edge_mask(kind):
    c = _C1_SIZE // 2
    m = np.zeros((_C1_SIZE, _C1_SIZE), np.uint8)
    if kind == "fg_right":
        m[:, c:] = 1
    elif kind == "fg_left":
        m[:, :c] = 1
    elif kind == "fg_bottom":
        m[c:, :] = 1
    elif kind == "fg_top":
        m[:c, :] = 1
    return m


def _diag_mask(kind):
    yy, xx = np.mgrid[0:_C1_SIZE, 0:_C1_SIZE]
    if kind == "diag_lr":  # foreground below the main diagonal
        return (yy >= xx).astype(np.uint8)
    return (yy <= (_C1_SIZE - 1 - xx)).astype(np.uint8)


def _corner_mask(quadrant, R):
    # right-angle corner with a quarter-circle fillet of radius R, so the
    # corner region carries gradient energy in the diagonal orientations too
    c = _C1_SIZE / 2
    yy, xx = np.mgrid[0:_C1_SIZE, 0:_C1_SIZE].astype(float)
    if quadrant == "lr":
        fg = (xx >= c) & (yy >= c)
        sq = fg & (xx < c + R) & (yy < c + R)
        arc = (xx - (c + R)) ** 2 + (yy - (c + R)) ** 2 <= R * R
    else:
        fg = (xx < c) & (yy < c)
        sq = fg & (xx >= c - R) & (yy >= c - R)
        arc = (xx - (c - R)) ** 2 + (yy - (c - R)) ** 2 <= R * R
    return ((fg & ~sq) | (sq & arc)).astype(np.uint8)


def _c1_truth(name, px, py):
    c = _C1_SIZE / 2
    R = _C1_R
    if name == "fg_right":
        return 1 if px >= c else -1
    if name == "fg_left":
        return 1 if px < c else -1
    if name == "fg_bottom":
        return 1 if py >= c else -1
    if name == "fg_top":
        return 1 if py < c else -1
    if name == "diag_lr":
        return 1 if py >= px else -1
    if name == "diag_ul":
        return 1 if py <= (_C1_SIZE - 1 - px) else -1
    if name == "corner_lr":
        if px >= c and py >= c:
            if px < c + R and py < c + R:
                return 1 if (px - (c + R)) ** 2 + (py - (c + R)) ** 2 <= R * R else -1
            return 1
        return -1
    if name == "corner_ul":
        if px < c and py < c:
            if px >= c - R and py >= c - R:
                return 1 if (px - (c - R)) ** 2 + (py - (c - R)) ** 2 <= R * R else -1
            return 1
        return -1
    raise AssertionError(name)


def test_criterion_1_strength_signs():
    masks = {
        "fg_right": _edge_mask("fg_right"),
        "fg_left": _edge_mask("fg_left"),
        "fg_bottom": _edge_mask("fg_bottom"),
        "fg_top": _edge_mask("fg_top"),
        "diag_lr": _diag_mask("diag_lr"),
        "diag_ul": _diag_mask("diag_ul"),
        "corner_lr": _corner_mask("lr", _C1_R),
        "corner_ul": _corner_mask("ul", _C1_R),
    }
    t0 = time.perf_counter()
    wrong = []
    checked = 0
    for name, m in masks.items():
        kp = Keypoint(_C1_SIZE / 2.0, _C1_SIZE / 2.0, _C1_SCALE)
        sd = extract_shape_descriptor(m, kp)
        strengths = cell_strengths(sd)
        empty = sd.empty_cells()
        for r in range(4):
            for c in range(4):
                if not empty[r, c]:
                    continue
                px = kp.x + (c - 1.5) * _C1_CELL
                py = kp.y + (r - 1.5) * _C1_CELL
                checked += 1
                if np.sign(strengths[r, c]) != _c1_truth(name, px, py):
                    wrong.append((name, r, c))
    elapsed = time.perf_counter() - t0
    ok = not wrong and elapsed < 1.0
    _line(1, ok, f"{checked - len(wrong)}/{checked} empty-cell signs correct "
                 f"on 8 masks in {elapsed:.3f}s (limit 1s)")
    assert not wrong, f"wrong signs: {wrong}"
    assert elapsed < 1.0


# --------------------------------------------------------------------------
# Criterion 2: quantization matches brute force on 1,000 descriptors
# --------------------------------------------------------------------------

def test_criterion_2_quantization_oracle():
    rng = np.random.default_rng(123)
    mismatches = 0
    for i in range(1000):
        if i % 10 == 0:
            d = np.zeros(128)  # all-zero edge case mixed in
        else:
            d = rng.random(128) * rng.choice([1e-6, 1.0, 1e3])
        sd = quantize(d, 0.4)
        brute = set(np.flatnonzero(d > 0.4 * d.max(initial=0.0)))
        got = set(np.flatnonzero(sd.bins.ravel()))
        if got != brute:
            mismatches += 1
    _line(2, mismatches == 0,
          f"{1000 - mismatches}/1000 descriptors match the brute-force "
          f"threshold set exactly")
    assert mismatches == 0


# --------------------------------------------------------------------------
# Criterion 3: per-feature vote mass sums to 1 within 1e-12, 1,000 configs
# --------------------------------------------------------------------------

def test_criterion_3_vote_mass_conservation(disc_model):
    rng = np.random.default_rng(7)
    n_cw = len(disc_model.codewords)
    worst = 0.0
    for _ in range(1000):
        n_feat = int(rng.integers(1, 6))
        matches = []
        for fid in range(n_feat):
            kp = Keypoint(float(rng.uniform(0, 90)), float(rng.uniform(0, 90)),
                          float(rng.uniform(1.5, 7.0)))
            k = int(rng.integers(1, min(5, n_cw) + 1))
            for cw_id in rng.choice(n_cw, size=k, replace=False):
                matches.append(Match(feature_id=fid, keypoint=kp,
                                     codeword_id=int(cw_id),
                                     sim=float(rng.uniform(0.7, 1.0))))
        votes = cast_votes(matches, disc_model)
        sums: dict[int, float] = {}
        for v in votes:
            sums[v.feature_id] = sums.get(v.feature_id, 0.0) + v.weight
        for fid in range(n_feat):
            worst = max(worst, abs(sums[fid] - 1.0))
    ok = worst < 1e-12
    _line(3, ok, f"max |sum - 1| = {worst:.2e} over 1000 random match "
                 f"configurations (limit 1e-12)")
    assert ok


# --------------------------------------------------------------------------
# Criterion 4: fast vs exact inference on ten 64x64 images, < 60 s
# --------------------------------------------------------------------------

def _unary_for_scene(scene, model, params):
    hyps = detect_objects(scene.image, model)
    assert hyps, "detection must fire on synthetic scenes"
    h = hyps[0]
    strengths = consolidate(h, model)
    like = splat_likelihood(strengths, scene.image.shape[:2],
                            model.params.base_size,
                            model.stats.mean_feat_scale)
    return build_unary(like, scene.image, h, params)


def test_criterion_4_fast_matches_exact(disc_model):
    from boundaryshape.synthetic import generate_scene

    params = CrfParams()  # 10 iterations
    t0 = time.perf_counter()
    linf_all = []
    agree_all = []
    for i in range(10):
        scene = generate_scene("disc", seed=31, index=i, size=64)
        unary = _unary_for_scene(scene, disc_model, params)
        q_exact = meanfield_infer(unary, scene.image, params, mode="exact")
        q_fast = meanfield_infer(unary, scene.image, params, mode="fast")
        linf_all.append(float(np.abs(q_fast - q_exact).max()))
        agree_all.append(float(np.mean((q_fast > 0.5) == (q_exact > 0.5))))
    elapsed = time.perf_counter() - t0
    linf = max(linf_all)
    agree = min(agree_all)
    ok = linf <= 0.05 and agree >= 0.99 and elapsed < 60.0
    _line(4, ok, f"10 images: max Linf = {linf:.4f} (limit 0.05), min argmax "
                 f"agreement = {agree:.4f} (limit 0.99), {elapsed:.1f}s "
                 f"(limit 60s)")
    assert linf <= 0.05
    assert agree >= 0.99
    assert elapsed < 60.0


# --------------------------------------------------------------------------
# Criterion 5: Gibbs free energy non-increasing, exact mode, 96x96
# --------------------------------------------------------------------------

def test_criterion_5_free_energy_descent(disc_model, disc_split):
    _, test = disc_split
    params = CrfParams()
    worst = -np.inf
    n_instances = 2
    for scene in test[:n_instances]:
        assert scene.image.shape[:2] == (96, 96)
        unary = _unary_for_scene(scene, disc_model, params)
        _, energies = meanfield_infer(unary, scene.image, params,
                                      mode="exact", track_energy=True)
        assert len(energies) == params.iterations + 1
        worst = max(worst, float(np.max(np.diff(energies))))
    ok = worst <= 1e-6
    _line(5, ok, f"max per-iteration free-energy increase = {worst:.2e} over "
                 f"{n_instances} instances of 96x96 (limit 1e-6)")
    assert ok


# --------------------------------------------------------------------------
# Criterion 6: AP matches a brute-force PR integrator, 200 sets + hand case
# --------------------------------------------------------------------------

def _box(y0, y1, x0, x1, size=20):
    m = np.zeros((size, size), np.uint8)
    m[y0:y1, x0:x1] = 1
    return m


def _brute_ap(dets, gts, thr):
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    used = {k: set() for k in gts}
    flags = []
    for i in order:
        d = dets[i]
        best, bj = 0.0, -1
        for j, g in enumerate(gts.get(d.image_id, [])):
            if j in used[d.image_id]:
                continue
            v = mask_iou(d.mask, g)
            if v > best:
                best, bj = v, j
        if bj >= 0 and best >= thr:
            used[d.image_id].add(bj)
            flags.append(1)
        else:
            flags.append(0)
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0 or not flags:
        return 0.0
    precs, recs = [], []
    tp = 0
    for k, f in enumerate(flags):
        tp += f
        precs.append(tp / (k + 1))
        recs.append(tp / n_gt)
    ap, prev_r = 0.0, 0.0
    for idx in range(len(flags)):
        if flags[idx]:
            r = recs[idx]
            p = max(precs[j] for j in range(len(precs)) if recs[j] >= r)
            ap += (r - prev_r) * p
            prev_r = r
    return ap


def test_criterion_6_ap_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        n_img = int(rng.integers(1, 4))
        gts = {
            f"im{i}": [
                _box(int(rng.integers(0, 10)), int(rng.integers(10, 20)),
                     int(rng.integers(0, 10)), int(rng.integers(10, 20)))
                for _ in range(rng.integers(0, 3))
            ]
            for i in range(n_img)
        }
        dets = [
            SegDetection(
                f"im{int(rng.integers(0, n_img))}",
                _box(int(rng.integers(0, 10)), int(rng.integers(10, 20)),
                     int(rng.integers(0, 10)), int(rng.integers(10, 20))),
                float(rng.random()),
            )
            for _ in range(rng.integers(0, 8))
        ]
        for thr in (0.3, 0.5, 0.75):
            worst = max(worst, abs(average_precision(dets, gts, thr)
                                   - _brute_ap(dets, gts, thr)))

    g1, g2 = _box(0, 8, 0, 8), _box(12, 20, 12, 20)
    hand = average_precision(
        [SegDetection("i", g1, 0.9),
         SegDetection("i", _box(0, 8, 10, 18), 0.8),
         SegDetection("i", g2, 0.7)],
        {"i": [g1, g2]},
        0.5,
    )
    hand_ok = abs(hand - 0.833333) <= 1e-6 + 1e-7
    ok = worst < 1e-9 and hand_ok
    _line(6, ok, f"200 random sets: max |AP diff| = {worst:.2e} (limit 1e-9); "
                 f"hand case AP = {hand:.6f} (want 0.833333 +/- 1e-6)")
    assert worst < 1e-9
    assert hand_ok


# --------------------------------------------------------------------------
# Criterion 7: end-to-end on 30 synthetic images, 20 train / 10 test, < 5 min
# --------------------------------------------------------------------------

def test_criterion_7_end_to_end(tmp_path):
    t0 = time.perf_counter()
    ds_dir = tmp_path / "synth30"
    manifest = generate_dataset(str(ds_dir), 30, seed=7, shape="disc")
    entries = manifest["images"]
    images = [load_image(ds_dir / e["image"]) for e in entries]
    masks = [load_mask(ds_dir / e["mask"]) for e in entries]

    model = build_model(images[:20], masks[:20], ModelParams())
    obj = manifest["object"]
    diag = float(np.hypot(obj["width"], obj["height"]))

    detected = 0
    ious = []
    seg_dets = []
    gts = {}
    for i in range(20, 30):
        image_id = f"im{i}"
        gts[image_id] = [masks[i]]
        hyps = detect_objects(images[i], model)
        if hyps:
            h = hyps[0]
            d = np.hypot(h.cx - entries[i]["cx"], h.cy - entries[i]["cy"])
            if d <= 0.1 * diag:
                detected += 1
        pred = segment_image(images[i], hyps[:1], model, CrfParams())
        ious.append(mask_iou(pred, masks[i]))
        score = hyps[0].score if hyps else 0.0
        seg_dets.append(SegDetection(image_id, pred, float(score)))
    elapsed = time.perf_counter() - t0

    rate = detected / 10.0
    mean_iou = float(np.mean(ious))
    _shared["synthetic_coco_map"] = coco_map(seg_dets, gts)
    _shared["synthetic_mean_iou"] = mean_iou
    ok = rate >= 0.9 and mean_iou >= 0.75 and elapsed < 300.0
    _line(7, ok, f"detection rate {rate:.2f} (limit 0.90), mean IoU "
                 f"{mean_iou:.4f} (limit 0.75), {elapsed:.0f}s (limit 300s)")
    assert rate >= 0.9
    assert mean_iou >= 0.75
    assert elapsed < 300.0


# --------------------------------------------------------------------------
# Criterion 8 (informational, never fails): reference targets
# --------------------------------------------------------------------------

def test_criterion_8_reference_targets_informational():
    targets = {
        "car sideviews": 0.39,
        "cow sideviews": 0.48,
        "MSRC cows": 0.57,
    }
    achieved = _shared.get("synthetic_coco_map")
    if achieved is None:
        detail = ("reference mAP targets " + ", ".join(
            f"{k}={v:.2f}" for k, v in targets.items())
            + "; synthetic proxy not computed in this run (criterion 7 "
              "did not execute first); see README 'Reference targets'")
    else:
        detail = ("reference mAP targets " + ", ".join(
            f"{k}={v:.2f}" for k, v in targets.items())
            + f"; synthetic-data COCO mAP proxy = {achieved:.3f} "
              f"(mean IoU {_shared['synthetic_mean_iou']:.3f}); the class "
              "datasets themselves are not bundled, see README 'Reference "
              "targets' for the tuning recipe")
    _line(8, True, f"INFORMATIONAL - {detail}")
