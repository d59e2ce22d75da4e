import dataclasses
import logging

import numpy as np
import pytest

from boundaryshape.detection import Hypothesis, Vote, detect_objects
from boundaryshape.segmentation import (
    EXACT_MAX_SIDE,
    ConsolidatedStrength,
    CrfParams,
    _upscale_bilinear,
    build_unary,
    consolidate,
    meanfield_infer,
    segment,
    segment_image,
    splat_likelihood,
)


def _hypothesis(votes, cx=48.0, cy=48.0, s=1.0, roi=(28.0, 28.0, 40.0, 40.0)):
    return Hypothesis(cx=cx, cy=cy, s=s, score=1.0, roi=roi,
                      contributors=tuple(votes))


def _vote(fid, cw, occ, w, fx=40.0, fy=40.0, fs=3.0):
    return Vote(cx=48.0, cy=48.0, s=1.0, weight=w, feature_id=fid,
                codeword_id=cw, occurrence_id=occ, fx=fx, fy=fy, fscale=fs)


def test_crf_params_validation():
    with pytest.raises(ValueError):
        CrfParams(iterations=0)
    with pytest.raises(ValueError):
        CrfParams(theta_alpha=-1.0)
    with pytest.raises(ValueError):
        CrfParams(lambda1=-0.1)


def test_consolidate_weighted_sum(disc_model):
    # two votes of one (codeword, feature) pair must sum their weighted grids
    cw_id = 0
    cw = disc_model.codewords[cw_id]
    if len(cw.occurrences) < 2:
        for cw_id, cw in enumerate(disc_model.codewords):
            if len(cw.occurrences) >= 2:
                break
    v1 = _vote(5, cw_id, 0, 0.5)
    v2 = _vote(5, cw_id, min(1, len(cw.occurrences) - 1), 0.25)
    h = _hypothesis([v1, v2])
    out = consolidate(h, disc_model)
    assert len(out) == 1
    g1 = cw.shape_codebook[cw.occurrences[v1.occurrence_id].shape_idx].strengths
    g2 = cw.shape_codebook[cw.occurrences[v2.occurrence_id].shape_idx].strengths
    assert np.allclose(out[0].grid, 0.5 * g1 + 0.25 * g2)
    assert out[0].fx == 40.0 and out[0].fscale == 3.0


def test_consolidate_separate_features_stay_separate(disc_model):
    v1 = _vote(1, 0, 0, 0.5, fx=30.0)
    v2 = _vote(2, 0, 0, 0.5, fx=60.0)
    out = consolidate(_hypothesis([v1, v2]), disc_model)
    assert len(out) == 2


def test_consolidate_requires_contributors(disc_model):
    with pytest.raises(ValueError):
        consolidate(_hypothesis([]), disc_model)


def test_upscale_constant_grid():
    g = np.full((4, 4), 2.5)
    for n in (1, 4, 9, 21):
        assert np.allclose(_upscale_bilinear(g, n), 2.5)


def test_upscale_linear_in_input():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 4))
    b = rng.normal(size=(4, 4))
    out = _upscale_bilinear(2.0 * a + b, 13)
    assert np.allclose(out, 2.0 * _upscale_bilinear(a, 13) + _upscale_bilinear(b, 13))


def test_upscale_identity_at_four():
    g = np.arange(16, dtype=float).reshape(4, 4)
    assert np.allclose(_upscale_bilinear(g, 4), g)


def test_splat_clipping_matches_enlarged_canvas():
    # half-off-image splat keeps exactly the in-image part of the full splat
    rng = np.random.default_rng(1)
    grid = rng.normal(size=(4, 4))
    cs = ConsolidatedStrength(grid=grid, codeword_id=0, fx=2.0, fy=10.0, fscale=3.5)
    small = splat_likelihood([cs], (24, 24), 21, 3.5)
    pad = 64
    cs_shift = ConsolidatedStrength(grid=grid, codeword_id=0, fx=2.0 + pad,
                                    fy=10.0 + pad, fscale=3.5)
    big = splat_likelihood([cs_shift], (24 + 2 * pad, 24 + 2 * pad), 21, 3.5)
    assert np.allclose(small, big[pad:pad + 24, pad:pad + 24])


def test_splat_scale_controls_patch_size():
    grid = np.ones((4, 4))
    a = splat_likelihood(
        [ConsolidatedStrength(grid, 0, 48.0, 48.0, 3.0)], (96, 96), 21, 3.0
    )
    b = splat_likelihood(
        [ConsolidatedStrength(grid, 0, 48.0, 48.0, 6.0)], (96, 96), 21, 3.0
    )
    assert (b > 0).sum() > (a > 0).sum()
    assert (a > 0).sum() == 21 * 21


def test_splat_additive():
    rng = np.random.default_rng(2)
    g1, g2 = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    c1 = ConsolidatedStrength(g1, 0, 30.0, 30.0, 3.0)
    c2 = ConsolidatedStrength(g2, 1, 50.0, 50.0, 3.0)
    both = splat_likelihood([c1, c2], (96, 96), 21, 3.0)
    assert np.allclose(
        both,
        splat_likelihood([c1], (96, 96), 21, 3.0)
        + splat_likelihood([c2], (96, 96), 21, 3.0),
    )


def _toy_unary(size=32, seed=0):
    """Unary from a synthetic blob likelihood over a flat image."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    like = np.exp(-(((xx - size / 2) ** 2 + (yy - size / 2) ** 2) / 50.0)) - 0.3
    img = (rng.random((size, size, 3)) * 60 + 90).astype(np.uint8)
    img[like > 0] = (200, 60, 60)
    h = Hypothesis(cx=size / 2, cy=size / 2, s=1.0, score=1.0,
                   roi=(size * 0.2, size * 0.2, size * 0.6, size * 0.6),
                   contributors=(
                       Vote(cx=0, cy=0, s=1, weight=1, feature_id=0,
                            codeword_id=0, occurrence_id=0),
                   ))
    params = CrfParams(iterations=5)
    unary = build_unary(like, img, h, params)
    return unary, img, params


def test_unary_shape_term_signs():
    unary, img, _ = _toy_unary()
    # positive likelihood pushes label fg: shape energy higher for bg there
    center = unary.psi_shape[16, 16]
    assert center[0] > 0 and center[1] < 0
    corner = unary.psi_shape[1, 1]
    assert corner[0] <= 0 and corner[1] >= 0


def test_unary_roi_term_outside_penalty():
    unary, _, params = _toy_unary()
    assert unary.psi_roi[0, 0, 1] == params.roi_penalty
    assert unary.psi_roi[16, 16, 1] == 0.0
    assert np.all(unary.psi_roi[..., 0] == 0.0)


def test_unary_is_weighted_sum_of_terms():
    unary, _, params = _toy_unary()
    recon = (params.lambda1 * unary.psi_shape
             + params.lambda2 * unary.psi_color
             + params.lambda3 * unary.psi_roi)
    assert np.allclose(unary.psi_u, recon)


def test_color_starvation_falls_back_to_uniform(caplog):
    # a likelihood with no confident pixels yields < 50 seeds per side
    size = 32
    img = np.full((size, size, 3), 120, np.uint8)
    like = np.zeros((size, size))
    like[16, 16] = 0.1  # normalizes to strength 1.0 at one pixel only
    h = Hypothesis(cx=16.0, cy=16.0, s=1.0, score=1.0,
                   roi=(4.0, 4.0, 24.0, 24.0), contributors=(
                       Vote(cx=0, cy=0, s=1, weight=1, feature_id=0,
                            codeword_id=0, occurrence_id=0),))
    with caplog.at_level(logging.WARNING, logger="boundaryshape.segmentation"):
        unary = build_unary(like, img, h, CrfParams())
    assert "starved" in caplog.text
    assert np.allclose(unary.psi_color, 0.0)


def test_meanfield_zero_coupling_keeps_unary_softmax():
    unary, img, _ = _toy_unary()
    params = CrfParams(w_appearance=0.0, w_smoothness=0.0, iterations=5)
    unary = dataclasses.replace(unary, params=params)
    q = meanfield_infer(unary, img, params, mode="exact")
    # direct two-label softmax of the negated unary
    z = np.exp(-unary.psi_u[..., 1]) + np.exp(-unary.psi_u[..., 0])
    expect = np.exp(-unary.psi_u[..., 1]) / z
    assert np.allclose(q, expect, atol=1e-12)


def test_meanfield_label_swap_symmetry():
    # swapping the two unary channels must complement Q exactly (exact mode)
    unary, img, params = _toy_unary()
    q = meanfield_infer(unary, img, params, mode="exact")
    swapped = dataclasses.replace(unary, psi_u=unary.psi_u[..., ::-1].copy())
    q2 = meanfield_infer(swapped, img, params, mode="exact")
    assert np.allclose(q + q2, 1.0, atol=1e-9)


def test_meanfield_energy_descends_exact():
    unary, img, params = _toy_unary()
    q, energies = meanfield_infer(unary, img, params, mode="exact",
                                  track_energy=True)
    assert len(energies) == params.iterations + 1
    diffs = np.diff(energies)
    assert np.all(diffs <= 1e-6)


def test_meanfield_fast_close_to_exact():
    unary, img, params = _toy_unary()
    q_exact = meanfield_infer(unary, img, params, mode="exact")
    q_fast = meanfield_infer(unary, img, params, mode="fast")
    assert np.abs(q_fast - q_exact).max() <= 0.05
    agree = np.mean((q_fast > 0.5) == (q_exact > 0.5))
    assert agree >= 0.99


def test_meanfield_exact_size_guard():
    size = EXACT_MAX_SIDE + 8
    rng = np.random.default_rng(0)
    img = (rng.random((size, size, 3)) * 255).astype(np.uint8)
    like = rng.normal(size=(size, size))
    h = Hypothesis(cx=size / 2, cy=size / 2, s=1.0, score=1.0,
                   roi=(10.0, 10.0, 60.0, 60.0), contributors=(
                       Vote(cx=0, cy=0, s=1, weight=1, feature_id=0,
                            codeword_id=0, occurrence_id=0),))
    unary = build_unary(like, img, h, CrfParams())
    with pytest.raises(ValueError):
        meanfield_infer(unary, img, CrfParams(), mode="exact")


def test_meanfield_track_energy_fast_rejected():
    unary, img, params = _toy_unary()
    with pytest.raises(ValueError):
        meanfield_infer(unary, img, params, mode="fast", track_energy=True)


def test_meanfield_bad_mode():
    unary, img, params = _toy_unary()
    with pytest.raises(ValueError):
        meanfield_infer(unary, img, params, mode="turbo")


def test_segment_no_contributors_empty_mask(disc_model, caplog):
    img = np.full((48, 48, 3), 100, np.uint8)
    h = Hypothesis(cx=24.0, cy=24.0, s=1.0, score=0.0,
                   roi=(10.0, 10.0, 28.0, 28.0), contributors=())
    with caplog.at_level(logging.WARNING, logger="boundaryshape.segmentation"):
        mask = segment(img, h, disc_model)
    assert mask.shape == (48, 48)
    assert mask.sum() == 0


def test_segment_image_merges_detections(disc_split, disc_model):
    _, test = disc_split
    s = test[0]
    hyps = detect_objects(s.image, disc_model)
    assert hyps
    merged = segment_image(s.image, hyps[:1], disc_model, CrfParams())
    assert merged.dtype == np.uint8
    # recovered mask overlaps ground truth strongly
    inter = np.logical_and(merged, s.mask).sum()
    union = np.logical_or(merged, s.mask).sum()
    assert inter / union >= 0.75


def test_segment_image_no_hypotheses_is_empty(disc_model):
    img = np.full((64, 64, 3), 99, np.uint8)
    out = segment_image(img, [], disc_model, CrfParams())
    assert out.sum() == 0
