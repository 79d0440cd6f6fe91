"""Corner detection, patch matching, DLT/RANSAC estimation, warping.

The 2x-scale warp probes use a bilinear-in-(u,v) test image
(value = 40*v + 10*u), whose interpolation at (u/2, v/2) is exactly
20*v + 5*u; DLT/RANSAC cases plant a known homography and check transfer
error against it.
"""

from __future__ import annotations

import numpy as np
import pytest

from pis3r.metrics import psnr
from pis3r.registration import (
    DegenerateConfiguration,
    Homography,
    MatchSet,
    RegistrationFailure,
    apply_homography,
    baseline_stitch,
    detect_corners,
    estimate_homography_dlt,
    match_patches,
    ransac_homography,
    symmetric_transfer_error,
    warp_homography,
)
from pis3r.stitcher import StitchCanvas, stitch
from pis3r.synth import Quad, SceneSpec, TextureSpec, generate_pair, make_camera


def noise_image(rng, h=96, w=128):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def checkerboard(size=64, square=8):
    idx = np.arange(size) // square
    tile = (idx[:, None] + idx[None, :]) % 2
    return (tile * 255).astype(np.uint8)


class TestDetectCorners:
    def test_constant_image_has_no_corners(self):
        assert detect_corners(np.full((32, 32), 128, np.uint8)) == []

    def test_single_bright_pixel(self):
        img = np.zeros((32, 32), dtype=np.uint8)
        img[16, 20] = 255
        kps = detect_corners(img, max_count=10, nms_radius=5)
        assert kps
        u, v = kps[0].position
        assert abs(u - 20) <= 1 and abs(v - 16) <= 1

    def test_checkerboard_crossings(self):
        img = checkerboard(64, 8)
        kps = detect_corners(img, max_count=100, nms_radius=4)
        assert len(kps) >= 20
        crossings = np.array(
            [(u, v) for u in range(8, 64, 8) for v in range(8, 64, 8)], dtype=np.float64
        )
        for kp in kps:
            d = np.linalg.norm(crossings - np.asarray(kp.position), axis=1).min()
            assert d <= 2.0
        pos = np.array([kp.position for kp in kps])
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        assert dist.min() >= 4.0

    def test_sorted_by_score_and_capped(self, rng):
        kps = detect_corners(noise_image(rng), max_count=25, nms_radius=3)
        assert len(kps) <= 25
        scores = [kp.score for kp in kps]
        assert scores == sorted(scores, reverse=True)

    def test_small_image_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            detect_corners(np.zeros((8, 8), dtype=np.uint8))

    def test_deterministic(self, rng):
        img = noise_image(rng)
        a = detect_corners(img)
        b = detect_corners(img)
        assert a == b


class TestMatchPatches:
    def test_self_match_is_identity(self, rng):
        img = noise_image(rng)
        kps = detect_corners(img, max_count=50, nms_radius=6)
        matches = match_patches(img, kps, img, kps, patch=9, min_ncc=0.9)
        assert len(matches) > 0
        assert np.array_equal(matches.pts1, matches.pts2)

    def test_shifted_image_matches_displaced(self, rng):
        img = noise_image(rng, 96, 128)
        shifted = np.zeros_like(img)
        shifted[:, 3:] = img[:, :-3]
        kps_a = detect_corners(img, max_count=80, nms_radius=6)
        kps_b = detect_corners(shifted, max_count=80, nms_radius=6)
        matches = match_patches(img, kps_a, shifted, kps_b, patch=11, min_ncc=0.8)
        assert len(matches) >= 10
        disp = matches.pts2 - matches.pts1
        good = (np.abs(disp - [3.0, 0.0]) <= 0.5).all(axis=1)
        assert good.mean() >= 0.8

    def test_unrelated_noise_rejected(self, rng):
        a = noise_image(rng)
        b = noise_image(rng)
        kps_a = detect_corners(a, max_count=60, nms_radius=6)
        kps_b = detect_corners(b, max_count=60, nms_radius=6)
        matches = match_patches(a, kps_a, b, kps_b, patch=11, min_ncc=0.9)
        assert len(matches) <= 2

    def test_symmetry(self, rng):
        img = noise_image(rng, 96, 128)
        shifted = np.zeros_like(img)
        shifted[:, 5:] = img[:, :-5]
        kps_a = detect_corners(img, max_count=60, nms_radius=6)
        kps_b = detect_corners(shifted, max_count=60, nms_radius=6)
        ab = match_patches(img, kps_a, shifted, kps_b, patch=9, min_ncc=0.8)
        ba = match_patches(shifted, kps_b, img, kps_a, patch=9, min_ncc=0.8)
        set_ab = {tuple(map(tuple, p)) for p in ab.pairs}
        set_ba = {tuple(map(tuple, p[::-1])) for p in ba.pairs}
        assert set_ab == set_ba

    def test_even_patch_rejected(self, rng):
        with pytest.raises(ValueError):
            match_patches(noise_image(rng), [], noise_image(rng), [], patch=8)


def planted_homography():
    return np.array(
        [
            [1.02, 0.03, 14.0],
            [-0.04, 0.98, -7.5],
            [1.5e-4, -9e-5, 1.0],
        ]
    )


def exact_matches(rng, h, n=100, box=500.0):
    pts1 = rng.uniform(20, box, size=(n, 2))
    pts2 = apply_homography(h, pts1)
    return MatchSet(np.stack([pts1, pts2], axis=1))


class TestDlt:
    def test_recovers_planted_homography(self, rng):
        h_true = planted_homography()
        matches = exact_matches(rng, h_true, n=4)
        h = estimate_homography_dlt(matches)
        err = symmetric_transfer_error(h, matches.pts1, matches.pts2)
        assert err.max() < 1e-6
        assert np.abs(h.H - h_true / h_true[2, 2]).max() < 1e-6

    def test_overdetermined_noiseless(self, rng):
        h_true = planted_homography()
        matches = exact_matches(rng, h_true, n=40)
        h = estimate_homography_dlt(matches)
        assert symmetric_transfer_error(h, matches.pts1, matches.pts2).max() < 1e-6

    def test_identity_correspondences(self, rng):
        pts = rng.uniform(0, 100, size=(8, 2))
        h = estimate_homography_dlt(MatchSet(np.stack([pts, pts], axis=1)))
        assert np.abs(h.H - np.eye(3)).max() < 1e-9

    def test_three_collinear_degenerate(self):
        pts1 = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [5.0, 5.0]])
        with pytest.raises(DegenerateConfiguration):
            estimate_homography_dlt(MatchSet(np.stack([pts1, pts1 + 1.0], axis=1)))

    def test_too_few_pairs(self, rng):
        pts = rng.uniform(0, 10, size=(3, 2))
        with pytest.raises(RegistrationFailure):
            estimate_homography_dlt(MatchSet(np.stack([pts, pts], axis=1)))


class TestRansac:
    def test_no_outliers_all_inliers(self, rng):
        h_true = planted_homography()
        matches = exact_matches(rng, h_true, n=100)
        h, flags = ransac_homography(matches, threshold=2.0, max_iters=200, seed=1)
        assert flags.all()
        assert symmetric_transfer_error(h, matches.pts1, matches.pts2).max() < 1e-6

    def test_half_outliers_rejected(self, rng):
        h_true = planted_homography()
        matches = exact_matches(rng, h_true, n=100)
        pairs = matches.pairs.copy()
        corrupt = rng.choice(100, size=50, replace=False)
        pairs[corrupt, 1, :] = rng.uniform(0, 500, size=(50, 2)) + 25.0
        # Ensure every corrupted pair really violates the model by >> threshold.
        clean = apply_homography(h_true, pairs[corrupt, 0, :])
        push = np.abs(pairs[corrupt, 1, :] - clean).max(axis=1) < 10
        pairs[corrupt[push], 1, :] += 50.0
        contaminated = MatchSet(pairs)
        h, flags = ransac_homography(contaminated, threshold=2.0, max_iters=500, seed=7)
        assert not flags[corrupt].any()
        clean_idx = np.setdiff1d(np.arange(100), corrupt)
        err = symmetric_transfer_error(h, pairs[clean_idx, 0, :], pairs[clean_idx, 1, :])
        assert err.max() < 0.5

    def test_deterministic_per_seed(self, rng):
        h_true = planted_homography()
        matches = exact_matches(rng, h_true, n=60)
        pairs = matches.pairs.copy()
        pairs[::4, 1, :] += 80.0
        ms = MatchSet(pairs)
        h1, f1 = ransac_homography(ms, threshold=2.0, max_iters=300, seed=5)
        h2, f2 = ransac_homography(ms, threshold=2.0, max_iters=300, seed=5)
        assert np.array_equal(h1.H, h2.H)
        assert np.array_equal(f1, f2)

    def test_inlier_count_monotone_in_threshold(self, rng):
        h_true = planted_homography()
        matches = exact_matches(rng, h_true, n=80)
        pairs = matches.pairs.copy()
        pairs[:, 1, :] += rng.normal(0, 1.5, size=(80, 2))
        ms = MatchSet(pairs)
        counts = []
        for threshold in (0.5, 1.0, 2.0, 4.0, 8.0):
            _, flags = ransac_homography(ms, threshold=threshold, max_iters=300, seed=11)
            counts.append(int(flags.sum()))
        assert counts == sorted(counts)

    def test_three_pairs_failure_signal(self, rng):
        pts = rng.uniform(0, 10, size=(3, 2))
        with pytest.raises(RegistrationFailure):
            ransac_homography(MatchSet(np.stack([pts, pts], axis=1)), 2.0, 100, 0)


class TestWarp:
    def test_identity_bit_exact(self, rng):
        img = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
        canvas = StitchCanvas((0, 0), 30, 20)
        warped, valid = warp_homography(img, Homography(np.eye(3)), canvas)
        assert valid.all()
        assert np.array_equal(warped, img)

    def test_pure_translation(self, rng):
        img = rng.integers(0, 256, size=(12, 16, 3), dtype=np.uint8)
        h = Homography(np.array([[1, 0, 5], [0, 1, 0], [0, 0, 1.0]]))
        canvas = StitchCanvas((0, 0), 16, 12)
        warped, valid = warp_homography(img, h, canvas)
        assert not valid[:, :5].any()
        assert valid[:, 5:].all()
        assert np.array_equal(warped[:, 5:], img[:, :11])

    def test_two_x_scaling_bilinear_probes(self):
        # value(u, v) = 40v + 10u is bilinear, so sampling at (u/2, v/2)
        # must give exactly 20v + 5u.
        v, u = np.indices((4, 4))
        img = (40 * v + 10 * u).astype(np.uint8)
        h = Homography(np.diag([2.0, 2.0, 1.0]))
        canvas = StitchCanvas((0, 0), 7, 7)
        warped, valid = warp_homography(img, h, canvas)
        for (uu, vv) in [(1, 1), (3, 1), (1, 3), (5, 3)]:
            assert valid[vv, uu]
            assert warped[vv, uu] == 20 * vv + 5 * uu

    def test_singular_homography_rejected(self):
        with pytest.raises(DegenerateConfiguration):
            Homography(np.array([[1, 0, 0], [0, 1, 0], [0, 0, 0.0]]))


class TestBaselineStitch:
    def test_self_stitch_returns_reference(self, rng):
        img = noise_image(rng, 96, 128)
        result = baseline_stitch(img, img, seed=0)
        assert result.canvas.offset == (0, 0)
        assert np.array_equal(result.image[:96, :128], img)
        assert not result.hole_mask[:96, :128].any()

    def test_planar_scene_matches_reprojection(self):
        # A single plane is exactly homographic: the baseline warp must agree
        # with the geometric reprojection wherever both are covered.
        scene = SceneSpec(
            primitives=[
                Quad(axis=2, coord=4.0, lo=(-8, -6), hi=(8, 6),
                     texture=TextureSpec("noise", seed=3, scale=30.0)),
            ]
        )
        cam = make_camera(128, 96)
        item = generate_pair(scene, cam, "slight", seed=6)
        base = baseline_stitch(item.reference.image, item.target.image, seed=0)
        geo = stitch(
            [(item.reference.pointmap, item.reference.image), (item.target.pointmap, item.target.image)],
            [item.reference.camera, item.target.camera],
            reference=0,
        )
        # Align the two canvases through their offsets into reference pixel space.
        bu, bv = base.canvas.offset
        gu, gv = geo.canvas.offset
        x0 = max(-bu, -gu)
        y0 = max(-bv, -gv)
        x1 = min(base.canvas.width - bu, geo.canvas.width - gu)
        y1 = min(base.canvas.height - bv, geo.canvas.height - gv)
        assert x1 - x0 > 40 and y1 - y0 > 40
        b_img = base.image[y0 + bv : y1 + bv, x0 + bu : x1 + bu]
        g_img = geo.image[y0 + gv : y1 + gv, x0 + gu : x1 + gu]
        b_cov = ~base.hole_mask[y0 + bv : y1 + bv, x0 + bu : x1 + bu]
        g_cov = ~geo.hole_mask[y0 + gv : y1 + gv, x0 + gu : x1 + gu]
        both = b_cov & g_cov
        assert both.sum() > 1000
        assert psnr(b_img, g_img, both) > 30.0

    def test_registration_failure_raises(self, rng):
        a = noise_image(rng)
        b = noise_image(rng)
        with pytest.raises(RegistrationFailure):
            baseline_stitch(a, b, seed=0)
