"""Evaluation metrics: PSNR, SSIM, the padded/registered protocol, RSR,
fundamental matrices, and Sampson epipolar error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import CameraModel, GeometryError, relative_pose
from .registration import (
    Homography,
    MatchSet,
    RegistrationFailure,
    StitchCanvas,
    detect_corners,
    match_patches,
    ransac_homography,
    symmetric_transfer_error,
    to_gray,
    warp_homography,
)

PSNR_CAP_DB = 99.0


class MetricError(ValueError):
    """Raised for metric contract violations (dimensions, empty masks)."""


@dataclass
class MetricReport:
    psnr: float | None
    ssim: float | None
    valid_pixel_count: int
    registration_ok: bool

    def to_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "valid_pixel_count": self.valid_pixel_count,
            "registration_ok": self.registration_ok,
        }


@dataclass(frozen=True)
class FundamentalMatrix:
    """Rank-2 epipolar matrix, normalized to unit Frobenius norm."""

    F: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.F, dtype=np.float64)
        if f.shape != (3, 3):
            raise MetricError(f"fundamental matrix must be 3x3, got {f.shape}")
        norm = np.linalg.norm(f)
        if norm < 1e-15:
            raise MetricError("fundamental matrix is numerically zero")
        f = f / norm
        s = np.linalg.svd(f, compute_uv=False)
        if s[2] / s[0] > 1e-8:
            raise MetricError(f"matrix is not rank 2 (sigma3/sigma1 = {s[2] / s[0]:.3e})")
        object.__setattr__(self, "F", f)


def psnr(a, b, mask=None) -> float:
    """Peak signal-to-noise ratio in dB over masked pixels (MAX = 255)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.ones(a.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MetricError("PSNR mask is empty")
    diff = a[mask] - b[mask]
    mse = float(np.mean(diff**2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(255.0**2 / mse), PSNR_CAP_DB)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a, b, mask=None, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM on luma with a Gaussian window.

    Only windows fully inside the image AND fully inside the mask
    contribute; this keeps hole pixels from polluting the statistics.
    """
    ga = to_gray(a)
    gb = to_gray(b)
    if ga.shape != gb.shape:
        raise MetricError(f"image shapes differ: {ga.shape} vs {gb.shape}")
    h, w = ga.shape
    if h < window or w < window:
        raise MetricError(f"image {w}x{h} smaller than the {window}px SSIM window")
    half = window // 2
    kernel = _gaussian_kernel(window, sigma)

    mu_a = ndimage.correlate(ga, kernel, mode="constant")
    mu_b = ndimage.correlate(gb, kernel, mode="constant")
    mu_aa = ndimage.correlate(ga * ga, kernel, mode="constant")
    mu_bb = ndimage.correlate(gb * gb, kernel, mode="constant")
    mu_ab = ndimage.correlate(ga * gb, kernel, mode="constant")
    var_a = mu_aa - mu_a**2
    var_b = mu_bb - mu_b**2
    cov = mu_ab - mu_a * mu_b

    c1 = (k1 * 255.0) ** 2
    c2 = (k2 * 255.0) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )

    interior = np.zeros((h, w), dtype=bool)
    interior[half : h - half, half : w - half] = True
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        eroded = ndimage.binary_erosion(mask, structure=np.ones((window, window)), border_value=0)
        interior &= eroded
    if not interior.any():
        raise MetricError("no SSIM window fits inside the mask")
    return float(ssim_map[interior].mean())


def center_pad(image, target_h: int, target_w: int, fill=0):
    """Pad an image to (target_h, target_w), centered; returns (padded, region mask)."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    if target_h < h or target_w < w:
        raise MetricError(f"cannot pad {w}x{h} down to {target_w}x{target_h}")
    top = (target_h - h) // 2
    left = (target_w - w) // 2
    shape = (target_h, target_w) + img.shape[2:]
    out = np.full(shape, fill, dtype=img.dtype)
    out[top : top + h, left : left + w] = img
    region = np.zeros((target_h, target_w), dtype=bool)
    region[top : top + h, left : left + w] = True
    return out, region


def evaluate_stitched(stitched, reference, gt, cfg, stitched_holes=None) -> MetricReport:
    """Three-step protocol: pad the reference to GT size, register the
    stitched image onto it, then score the valid overlap against GT.

    `cfg` carries the registration/RANSAC/metric parameters (see
    config.RunConfig). Registration failure yields registration_ok=False
    with absent metrics.
    """
    gt = np.asarray(gt, dtype=np.uint8)
    reference = np.asarray(reference, dtype=np.uint8)
    stitched = np.asarray(stitched, dtype=np.uint8)
    gh, gw = gt.shape[:2]
    padded_ref, _ = center_pad(reference, gh, gw)

    failed = MetricReport(psnr=None, ssim=None, valid_pixel_count=0, registration_ok=False)
    try:
        kps_s = detect_corners(stitched, max_count=cfg.registration.max_corners, nms_radius=cfg.registration.nms_radius)
        kps_r = detect_corners(padded_ref, max_count=cfg.registration.max_corners, nms_radius=cfg.registration.nms_radius)
        matches = match_patches(
            stitched, kps_s, padded_ref, kps_r,
            patch=cfg.registration.patch, min_ncc=cfg.registration.min_ncc,
            ratio=cfg.registration.match_ratio,
        )
        h, inliers = ransac_homography(
            matches, threshold=cfg.ransac.threshold, max_iters=cfg.ransac.max_iters, seed=cfg.ransac.seed,
        )
    except (RegistrationFailure, ValueError):
        return failed
    if int(inliers.sum()) < cfg.registration.min_inliers:
        return failed
    refit_err = float(symmetric_transfer_error(h, matches.pts1[inliers], matches.pts2[inliers]).mean())
    if refit_err > cfg.registration.max_refit_error:
        return failed

    canvas = StitchCanvas(offset=(0, 0), width=gw, height=gh, max_dim=max(gw, gh))
    warped, valid = warp_homography(stitched, h, canvas)
    if stitched_holes is not None:
        holes = np.asarray(stitched_holes, dtype=bool).astype(np.float64)
        warped_holes, _ = warp_homography(holes * 255.0, h, canvas)
        valid &= warped_holes < 128
    count = int(valid.sum())
    if count == 0:
        return failed
    score_psnr = psnr(warped, gt, valid)
    try:
        score_ssim = ssim(
            warped, gt, valid,
            window=cfg.metrics.ssim_window, sigma=cfg.metrics.ssim_sigma,
            k1=cfg.metrics.k1, k2=cfg.metrics.k2,
        )
    except MetricError:
        score_ssim = None
    return MetricReport(psnr=score_psnr, ssim=score_ssim, valid_pixel_count=count, registration_ok=True)


def rsr(n: int, r_f: int) -> float:
    """Registration success rate, percent to one decimal: (1 - r_f/n) * 100."""
    if n < 1:
        raise MetricError(f"need at least one pair, got n={n}")
    if not (0 <= r_f <= n):
        raise MetricError(f"failed count {r_f} outside [0, {n}]")
    return round((1.0 - r_f / n) * 100.0, 1)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]], dtype=np.float64
    )


def fundamental_from_cameras(cam1: CameraModel, cam2: CameraModel) -> FundamentalMatrix:
    """F = K2^-T [t_rel]x R_rel K1^-1 for exact camera parameters."""
    rel = relative_pose(cam1.extrinsics, cam2.extrinsics)
    if np.linalg.norm(rel.t) < 1e-9:
        raise GeometryError("epipolar geometry undefined for pure rotation (zero baseline)")
    e = _skew(rel.t) @ rel.R
    f = cam2.intrinsics.inverse().T @ e @ cam1.intrinsics.inverse()
    return FundamentalMatrix(f)


@dataclass
class SampsonResult:
    errors: np.ndarray  # per-pair squared Sampson distances, pixels^2
    mean: float
    skipped: int


def sampson_error(F: FundamentalMatrix, matches: MatchSet) -> SampsonResult:
    """First-order epipolar error per correspondence (pixels squared).

    d^2 = (x2' F x1)^2 / ((Fx1)_1^2 + (Fx1)_2^2 + (F'x2)_1^2 + (F'x2)_2^2)

    Pairs whose four denominator terms all vanish are skipped and counted.
    The mean is taken over inlier-flagged pairs.
    """
    f = F.F if isinstance(F, FundamentalMatrix) else np.asarray(F, dtype=np.float64)
    x1 = np.column_stack([matches.pts1, np.ones(len(matches))])
    x2 = np.column_stack([matches.pts2, np.ones(len(matches))])
    fx1 = x1 @ f.T  # rows: F @ x1
    ftx2 = x2 @ f  # rows: F^T @ x2
    num = np.einsum("ij,ij->i", x2, fx1) ** 2
    terms = np.column_stack([fx1[:, 0], fx1[:, 1], ftx2[:, 0], ftx2[:, 1]]) ** 2
    denom = terms.sum(axis=1)
    degenerate = (terms < 1e-15).all(axis=1)
    errors = np.full(len(matches), np.nan)
    ok = ~degenerate
    errors[ok] = num[ok] / denom[ok]
    use = matches.inlier & ok
    mean = float(errors[use].mean()) if use.any() else float("nan")
    return SampsonResult(errors=errors, mean=mean, skipped=int(degenerate.sum()))
