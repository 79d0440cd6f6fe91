"""Dataset-level evaluation: the padded/registered metric protocol per item,
registration success accounting, and epipolar scoring of stitched pairs.

Aggregation mirrors the dual reporting convention: "all pairs" scores every
item (failed registrations fall back to the known canvas-to-GT translation,
i.e. an unregistered score) while "wo_failed" recomputes means over the
registration-success subset only.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import formats
from .config import RunConfig
from .geometry import CameraIntrinsics, CameraModel, GeometryError
from .metrics import (
    MetricError,
    MetricReport,
    SampsonResult,
    center_pad,
    evaluate_stitched,
    fundamental_from_cameras,
    psnr,
    rsr,
    sampson_error,
    ssim,
)
from .registration import detect_corners, match_patches


class EvaluationError(RuntimeError):
    """Raised when required evaluation inputs are missing."""


@dataclass
class PairOutcome:
    item_id: str
    mode: str
    report: MetricReport
    fallback_psnr: float | None = None
    fallback_ssim: float | None = None
    sampson_mean: float | None = None
    sampson_matches: int = 0

    def row(self) -> dict:
        return {
            "item": self.item_id,
            "mode": self.mode,
            "registration_ok": self.report.registration_ok,
            "psnr": self.report.psnr,
            "ssim": self.report.ssim,
            "valid_pixel_count": self.report.valid_pixel_count,
            "fallback_psnr": self.fallback_psnr,
            "fallback_ssim": self.fallback_ssim,
            "sampson_mean": self.sampson_mean,
            "sampson_matches": self.sampson_matches,
            "lpips": "n/a",
        }


def offset_camera(camera: CameraModel, offset, width: int, height: int) -> CameraModel:
    """Camera whose pixel frame is the stitched canvas (principal point shifted)."""
    du, dv = offset
    intr = camera.intrinsics
    shifted = CameraIntrinsics(
        fx=intr.fx, fy=intr.fy, cx=intr.cx + du, cy=intr.cy + dv, skew=intr.skew
    )
    return CameraModel(shifted, camera.extrinsics, width, height)


def _keypoints_clear_of_holes(kps, holes: np.ndarray, margin: int):
    if not holes.any():
        return kps
    grown = ndimage.binary_dilation(holes, structure=np.ones((2 * margin + 1, 2 * margin + 1)))
    keep = []
    for kp in kps:
        u, v = int(round(kp.position[0])), int(round(kp.position[1]))
        if 0 <= v < grown.shape[0] and 0 <= u < grown.shape[1] and not grown[v, u]:
            keep.append(kp)
    return keep


def filter_coherent_matches(
    matches, k_neighbors: int = 8, support_tol: float = 10.0, min_support: int = 2
):
    """Keep matches whose displacement is supported by nearby matches.

    Appearance-only matching over procedural textures produces occasional
    random correspondences. True matches come in spatially coherent
    groups (their displacements agree with neighbors on the same
    surface), so a match with no similarly-moving neighbor among its
    nearest matched peers is a mismatch. Purely photometric + spatial;
    no epipolar information involved, so the filter cannot bias the
    epipolar scores it feeds.
    """
    n = len(matches)
    if n < min_support + 2:
        return matches
    p0 = matches.pts1
    disp = matches.pts2 - matches.pts1
    k = min(k_neighbors, n - 1)
    d2 = ((p0[:, None, :] - p0[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        neighbors = np.argsort(d2[i])[:k]
        agree = np.linalg.norm(disp[neighbors] - disp[i], axis=1) <= support_tol
        if int(agree.sum()) < min_support:
            keep[i] = False
    from .registration import MatchSet

    return MatchSet(matches.pairs[keep], matches.inlier[keep])


def sampson_between_stitched(
    image0, holes0, offset0, cam0,
    image1, holes1, offset1, cam1,
    cfg: RunConfig,
):
    """Sampson error of features matched between a stitched output pair.

    Each stitched canvas claims its source camera's geometry up to an
    integer translation, so the epipolar matrix comes from the
    offset-adjusted cameras. Keypoints near holes are discarded before
    matching, and incoherent (isolated-displacement) matches dropped.
    Returns (SampsonResult, match count); (None, 0) when matching finds
    nothing.
    """
    c0 = offset_camera(cam0, offset0, image0.shape[1], image0.shape[0])
    c1 = offset_camera(cam1, offset1, image1.shape[1], image1.shape[0])
    fmat = fundamental_from_cameras(c0, c1)
    margin = cfg.registration.patch // 2 + 1
    kps0 = detect_corners(image0, max_count=cfg.registration.max_corners, nms_radius=cfg.registration.nms_radius)
    kps1 = detect_corners(image1, max_count=cfg.registration.max_corners, nms_radius=cfg.registration.nms_radius)
    kps0 = _keypoints_clear_of_holes(kps0, np.asarray(holes0, dtype=bool), margin)
    kps1 = _keypoints_clear_of_holes(kps1, np.asarray(holes1, dtype=bool), margin)
    matches = match_patches(
        image0, kps0, image1, kps1, patch=cfg.registration.patch,
        min_ncc=cfg.registration.sampson_min_ncc, ratio=cfg.registration.match_ratio,
    )
    matches = filter_coherent_matches(matches)
    if len(matches) == 0:
        return None, 0
    return sampson_error(fmat, matches), len(matches)


def fallback_alignment_scores(stitched, holes, canvas_offset, reference, gt, cfg: RunConfig):
    """Score a stitched canvas against GT using the construction translation only.

    stitched pixel (u, v) maps to reference pixel (u - du, v - dv) and the
    reference sits center-padded inside GT; no registration is involved.
    Used for the all-pairs aggregate when registration fails.
    """
    gt = np.asarray(gt, dtype=np.uint8)
    gh, gw = gt.shape[:2]
    rh, rw = np.asarray(reference).shape[:2]
    top, left = (gh - rh) // 2, (gw - rw) // 2
    du, dv = canvas_offset
    sh, sw = stitched.shape[:2]
    placed = np.zeros_like(gt)
    valid = np.zeros((gh, gw), dtype=bool)
    # Stitched canvas origin lands at GT pixel (left - du, top - dv).
    x0, y0 = left - du, top - dv
    sx0, sy0 = max(0, -x0), max(0, -y0)
    gx0, gy0 = max(0, x0), max(0, y0)
    w = min(sw - sx0, gw - gx0)
    h = min(sh - sy0, gh - gy0)
    if w <= 0 or h <= 0:
        return None, None
    placed[gy0 : gy0 + h, gx0 : gx0 + w] = stitched[sy0 : sy0 + h, sx0 : sx0 + w]
    cover = ~np.asarray(holes, dtype=bool)[sy0 : sy0 + h, sx0 : sx0 + w]
    valid[gy0 : gy0 + h, gx0 : gx0 + w] = cover
    if not valid.any():
        return None, None
    p = psnr(placed, gt, valid)
    try:
        s = ssim(placed, gt, valid, window=cfg.metrics.ssim_window, sigma=cfg.metrics.ssim_sigma,
                 k1=cfg.metrics.k1, k2=cfg.metrics.k2)
    except MetricError:
        s = None
    return p, s


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(vals)) if vals else None


def aggregate_outcomes(outcomes: list[PairOutcome]) -> dict:
    n = len(outcomes)
    failed = [o for o in outcomes if not o.report.registration_ok]
    ok = [o for o in outcomes if o.report.registration_ok]
    all_psnr = [o.report.psnr if o.report.registration_ok else o.fallback_psnr for o in outcomes]
    all_ssim = [o.report.ssim if o.report.registration_ok else o.fallback_ssim for o in outcomes]
    return {
        "total_pairs": n,
        "failed_pairs": len(failed),
        "rsr": rsr(n, len(failed)) if n else None,
        "psnr_mean": _mean(all_psnr),
        "ssim_mean": _mean(all_ssim),
        "sampson_mean": _mean([o.sampson_mean for o in outcomes]),
        "lpips": "n/a",
        "wo_failed": {
            "pairs": len(ok),
            "psnr_mean": _mean([o.report.psnr for o in ok]),
            "ssim_mean": _mean([o.report.ssim for o in ok]),
        },
    }


def _stitch_outputs_dir(stitched_root: Path, item: dict) -> Path:
    return Path(stitched_root) / item["dir"]


def evaluate_dataset(manifest: dict, dataset_root, stitched_root, cfg: RunConfig) -> dict:
    """Evaluate every manifest item against its stitched outputs.

    Expects <stitched_root>/<scene>/<item>/{stitched.png, holes.png,
    stitch_report.json}, with an optional alt/ subdirectory holding the
    swapped-reference outputs for epipolar scoring.
    """
    items = manifest.get("items", [])
    if not items:
        raise EvaluationError("manifest holds no items")
    dataset_root = Path(dataset_root)
    missing = []
    for item in items:
        out_dir = _stitch_outputs_dir(stitched_root, item)
        for name in ("stitched.png", "holes.png", "stitch_report.json"):
            if not (out_dir / name).exists():
                missing.append(str(out_dir / name))
    if missing:
        raise EvaluationError("missing stitched outputs: " + ", ".join(missing))

    def evaluate_item(item: dict) -> PairOutcome:
        out_dir = _stitch_outputs_dir(stitched_root, item)
        ref = formats.load_image(dataset_root / item["files"]["ref"])
        gt = formats.load_image(dataset_root / item["files"]["gt"])
        stitched = formats.load_image(out_dir / "stitched.png")
        holes = formats.load_mask(out_dir / "holes.png")
        report = evaluate_stitched(stitched, ref, gt, cfg, stitched_holes=holes)
        stitch_meta = json.loads((out_dir / "stitch_report.json").read_text(encoding="utf-8"))
        offset = tuple(stitch_meta.get("offset", (0, 0)))
        fb_psnr, fb_ssim = fallback_alignment_scores(stitched, holes, offset, ref, gt, cfg)
        outcome = PairOutcome(
            item_id=f"{item['scene']}/{item['item']}",
            mode=item.get("mode", "?"),
            report=report,
            fallback_psnr=fb_psnr,
            fallback_ssim=fb_ssim,
        )

        alt_dir = out_dir / "alt"
        if (alt_dir / "stitched.png").exists() and (alt_dir / "stitch_report.json").exists():
            cams = formats.load_cameras(dataset_root / item["files"]["cameras"])
            alt_meta = json.loads((alt_dir / "stitch_report.json").read_text(encoding="utf-8"))
            try:
                result, count = sampson_between_stitched(
                    stitched, holes, offset, cams[stitch_meta.get("reference_view", 0)].camera,
                    formats.load_image(alt_dir / "stitched.png"),
                    formats.load_mask(alt_dir / "holes.png"),
                    tuple(alt_meta.get("offset", (0, 0))),
                    cams[alt_meta.get("reference_view", 1)].camera,
                    cfg,
                )
            except (GeometryError, MetricError):
                result, count = None, 0
            if result is not None:
                outcome.sampson_mean = result.mean
                outcome.sampson_matches = count
        return outcome

    # Items are independent; pool.map preserves manifest order, so the
    # report is identical at any job count.
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(evaluate_item, items))
    else:
        outcomes = [evaluate_item(item) for item in items]

    return {
        "pairs": [o.row() for o in outcomes],
        "aggregate": aggregate_outcomes(outcomes),
        "config_echo": cfg.to_dict(),
    }
