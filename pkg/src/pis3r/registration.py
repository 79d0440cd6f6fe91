"""Feature-based homography registration.

Detector: Shi-Tomasi style minimum-eigenvalue corner response over fixed
3x3 Sobel gradients. Descriptor: raw zero-normalized patches matched by
mutual-best cross correlation. Estimator: normalized DLT inside RANSAC
with a deterministic (inlier count, error, iteration) model order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .stitcher import StitchCanvas, StitchResult

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class RegistrationFailure(RuntimeError):
    """Robust estimation could not produce a usable model."""


class DegenerateConfiguration(ValueError):
    """Point configuration does not determine a homography."""


def to_gray(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    return arr[..., :3] @ LUMA_WEIGHTS


@dataclass(frozen=True)
class Keypoint:
    position: tuple[float, float]  # (u, v) pixels
    score: float


@dataclass
class MatchSet:
    """Paired 2D correspondences; pairs[i] = ((u1, v1), (u2, v2))."""

    pairs: np.ndarray  # (N, 2, 2) float64
    inlier: np.ndarray = None  # (N,) bool

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 2, 2)
        if self.inlier is None:
            self.inlier = np.ones(len(self.pairs), dtype=bool)
        self.inlier = np.asarray(self.inlier, dtype=bool).reshape(-1)
        if len(self.inlier) != len(self.pairs):
            raise ValueError("inlier flags must match pair count")
        if not np.isfinite(self.pairs).all():
            raise ValueError("correspondence coordinates must be finite")

    @property
    def pts1(self) -> np.ndarray:
        return self.pairs[:, 0, :]

    @property
    def pts2(self) -> np.ndarray:
        return self.pairs[:, 1, :]

    def __len__(self) -> int:
        return len(self.pairs)

    def transposed(self) -> "MatchSet":
        return MatchSet(self.pairs[:, ::-1, :].copy(), self.inlier.copy())


@dataclass(frozen=True)
class Homography:
    H: np.ndarray  # 3x3, h33 normalized to 1 when |h33| > 1e-12

    def __post_init__(self):
        h = np.asarray(self.H, dtype=np.float64)
        if h.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {h.shape}")
        if abs(h[2, 2]) > 1e-12:
            h = h / h[2, 2]
        if abs(np.linalg.det(h)) < 1e-12:
            raise DegenerateConfiguration("homography is singular")
        object.__setattr__(self, "H", h)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.H))


def apply_homography(H, points) -> np.ndarray:
    """Apply a 3x3 projective transform to (N, 2) points."""
    h = H.H if isinstance(H, Homography) else np.asarray(H, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ h.T
    w = hom[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = hom[:, :2] / w[:, None]
    out[np.abs(w) < 1e-12] = np.inf
    return out


def detect_corners(image, max_count: int = 500, nms_radius: int = 5) -> list[Keypoint]:
    """Minimum-eigenvalue corners, non-maximum suppressed, strongest first."""
    gray = to_gray(image)
    h, w = gray.shape
    if h < 16 or w < 16:
        raise ValueError(f"image too small for corner detection: {w}x{h} (need >= 16x16)")
    ix = ndimage.convolve(gray, SOBEL_X, mode="reflect")
    iy = ndimage.convolve(gray, SOBEL_Y, mode="reflect")
    box = np.ones((3, 3))
    ixx = ndimage.convolve(ix * ix, box, mode="reflect")
    iyy = ndimage.convolve(iy * iy, box, mode="reflect")
    ixy = ndimage.convolve(ix * iy, box, mode="reflect")
    half_tr = 0.5 * (ixx + iyy)
    response = half_tr - np.sqrt((0.5 * (ixx - iyy)) ** 2 + ixy**2)
    response[:2, :] = response[-2:, :] = 0.0
    response[:, :2] = response[:, -2:] = 0.0

    peak = response.max()
    if peak <= 0:
        return []
    threshold = max(0.01 * peak, 1e-9)
    local_max = response == ndimage.maximum_filter(response, size=2 * nms_radius + 1, mode="constant")
    vs, us = np.nonzero(local_max & (response >= threshold))
    scores = response[vs, us]
    # Strongest first; (v, u) breaks score ties deterministically.
    order = np.lexsort((us, vs, -scores))
    vs, us, scores = vs[order], us[order], scores[order]

    kept_u: list[int] = []
    kept_v: list[int] = []
    kept_s: list[float] = []
    r2 = float(nms_radius) ** 2
    for u, v, s in zip(us, vs, scores):
        if kept_u:
            du = np.asarray(kept_u) - u
            dv = np.asarray(kept_v) - v
            if (du * du + dv * dv < r2).any():
                continue
        kept_u.append(int(u))
        kept_v.append(int(v))
        kept_s.append(float(s))
        if len(kept_u) >= max_count:
            break
    return [Keypoint((u, v), s) for u, v, s in zip(kept_u, kept_v, kept_s)]


def _extract_patches(gray: np.ndarray, kps, patch: int):
    """Zero-normalized flat patches; keypoints whose patch exits the image are skipped."""
    half = patch // 2
    h, w = gray.shape
    rows, valid = [], []
    for i, kp in enumerate(kps):
        u, v = int(round(kp.position[0])), int(round(kp.position[1]))
        if u - half < 0 or v - half < 0 or u + half >= w or v + half >= h:
            continue
        p = gray[v - half : v + half + 1, u - half : u + half + 1].reshape(-1)
        p = p - p.mean()
        norm = np.linalg.norm(p)
        rows.append(p / norm if norm > 1e-12 else np.zeros_like(p))
        valid.append(i)
    if not rows:
        return np.zeros((0, patch * patch)), np.asarray(valid, dtype=int)
    return np.vstack(rows), np.asarray(valid, dtype=int)


def match_patches(
    img_a, kps_a, img_b, kps_b, patch: int = 11, min_ncc: float = 0.7,
    ratio: float | None = 0.85,
) -> MatchSet:
    """Mutual-best zero-normalized cross-correlation matches.

    `ratio` applies a distinctiveness test on the equivalent descriptor
    distance sqrt(2 * (1 - ncc)): the best match must beat the runner-up
    by that factor. None disables it.
    """
    if patch < 5 or patch % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 5, got {patch}")
    pa, ia = _extract_patches(to_gray(img_a), kps_a, patch)
    pb, ib = _extract_patches(to_gray(img_b), kps_b, patch)
    if len(ia) == 0 or len(ib) == 0:
        return MatchSet(np.zeros((0, 2, 2)))
    ncc = pa @ pb.T
    best_b = ncc.argmax(axis=1)
    best_a = ncc.argmax(axis=0)
    ai = np.arange(len(ia))
    mutual = best_a[best_b] == ai
    strong = ncc[ai, best_b] >= min_ncc
    if ratio is not None and ncc.shape[1] >= 2:
        part = np.partition(ncc, -2, axis=1)
        d_best = np.sqrt(np.maximum(2.0 * (1.0 - part[:, -1]), 0.0))
        d_second = np.sqrt(np.maximum(2.0 * (1.0 - part[:, -2]), 0.0))
        strong &= d_best <= ratio * d_second
    sel = np.flatnonzero(mutual & strong)
    pairs = np.empty((len(sel), 2, 2))
    for row, i in enumerate(sel):
        pairs[row, 0] = kps_a[ia[i]].position
        pairs[row, 1] = kps_b[ib[best_b[i]]].position
    return MatchSet(pairs)


def _normalize_points(pts: np.ndarray):
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1).mean()
    if dist < 1e-12:
        raise DegenerateConfiguration("coincident points")
    s = np.sqrt(2.0) / dist
    T = np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1]])
    return (pts - centroid) * s, T


def _dlt(pts1: np.ndarray, pts2: np.ndarray) -> Homography:
    n = len(pts1)
    p1, t1 = _normalize_points(pts1)
    p2, t2 = _normalize_points(pts2)
    a = np.zeros((2 * n, 9))
    x, y = p1[:, 0], p1[:, 1]
    xp, yp = p2[:, 0], p2[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1
    a[0::2, 6] = -x * xp
    a[0::2, 7] = -y * xp
    a[0::2, 8] = -xp
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1
    a[1::2, 6] = -x * yp
    a[1::2, 7] = -y * yp
    a[1::2, 8] = -yp
    _, s, vt = np.linalg.svd(a)
    # A unique solution (up to scale) needs rank 8 in the 9 parameters.
    if s[0] < 1e-12 or int((s > s[0] * 1e-10).sum()) < 8:
        raise DegenerateConfiguration("point configuration does not determine a homography")
    h_norm = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(t2) @ h_norm @ t1)


def estimate_homography_dlt(matches: MatchSet) -> Homography:
    """Least-squares DLT over all pairs, with Hartley normalization."""
    if len(matches) < 4:
        raise RegistrationFailure(f"need >= 4 correspondences, got {len(matches)}")
    return _dlt(matches.pts1, matches.pts2)


def symmetric_transfer_error(H: Homography, pts1, pts2) -> np.ndarray:
    """Per-pair max of forward and backward transfer distances, in pixels."""
    fwd = np.linalg.norm(apply_homography(H, pts1) - pts2, axis=1)
    bwd = np.linalg.norm(apply_homography(H.inverse(), pts2) - pts1, axis=1)
    return np.maximum(fwd, bwd)


def ransac_homography(matches: MatchSet, threshold: float, max_iters: int, seed: int):
    """RANSAC over 4-point samples; returns (refit homography, inlier flags).

    Deterministic for a fixed seed: models are compared by
    (inlier count desc, mean inlier error asc, iteration asc).
    """
    n = len(matches)
    if n < 4:
        raise RegistrationFailure(f"need >= 4 correspondences for RANSAC, got {n}")
    pts1, pts2 = matches.pts1, matches.pts2
    rng = np.random.default_rng(seed)
    best = None  # (count, mean_err, iteration, inlier_mask)
    for it in range(max_iters):
        idx = rng.choice(n, size=4, replace=False)
        try:
            h = _dlt(pts1[idx], pts2[idx])
            err = symmetric_transfer_error(h, pts1, pts2)
        except DegenerateConfiguration:
            continue
        inliers = err <= threshold
        count = int(inliers.sum())
        if count < 4:
            continue
        mean_err = float(err[inliers].mean())
        key = (-count, mean_err, it)
        if best is None or key < best[0]:
            best = (key, inliers)
    if best is None:
        raise RegistrationFailure("no RANSAC model reached 4 inliers")
    inliers = best[1]
    try:
        refit = _dlt(pts1[inliers], pts2[inliers])
    except DegenerateConfiguration as exc:
        raise RegistrationFailure(f"inlier refit degenerate: {exc}") from exc
    return refit, inliers


def warp_homography(image, H: Homography, canvas: StitchCanvas):
    """Inverse-mapped bilinear warp of `image` into canvas space.

    H maps source-image coordinates to the canvas' underlying frame; the
    canvas offset is applied on top. Returns (warped, valid) where invalid
    pixels have no preimage inside the source.
    """
    img = np.asarray(image, dtype=np.float64)
    single = img.ndim == 2
    if single:
        img = img[:, :, None]
    src_h, src_w = img.shape[:2]
    du, dv = canvas.offset
    us, vs = np.meshgrid(np.arange(canvas.width), np.arange(canvas.height))
    target = np.column_stack([(us - du).reshape(-1), (vs - dv).reshape(-1)])
    src = apply_homography(H.inverse(), target)
    sx, sy = src[:, 0], src[:, 1]
    valid = (sx >= 0) & (sx <= src_w - 1) & (sy >= 0) & (sy <= src_h - 1)
    valid &= np.isfinite(sx) & np.isfinite(sy)

    out = np.zeros((canvas.height * canvas.width, img.shape[2]), dtype=np.float64)
    if valid.any():
        x0 = np.floor(sx[valid]).astype(int)
        y0 = np.floor(sy[valid]).astype(int)
        x1 = np.minimum(x0 + 1, src_w - 1)
        y1 = np.minimum(y0 + 1, src_h - 1)
        wx = sx[valid] - x0
        wy = sy[valid] - y0
        flat = img.reshape(-1, img.shape[2])
        top = flat[y0 * src_w + x0] * (1 - wx)[:, None] + flat[y0 * src_w + x1] * wx[:, None]
        bot = flat[y1 * src_w + x0] * (1 - wx)[:, None] + flat[y1 * src_w + x1] * wx[:, None]
        out[valid] = top * (1 - wy)[:, None] + bot * wy[:, None]
    warped = np.clip(np.rint(out), 0, 255).astype(np.uint8).reshape(canvas.height, canvas.width, -1)
    if single:
        warped = warped[:, :, 0]
    return warped, valid.reshape(canvas.height, canvas.width)


def baseline_stitch(
    reference,
    target,
    threshold: float = 2.0,
    max_iters: int = 1000,
    seed: int = 0,
    max_corners: int = 800,
    nms_radius: int = 6,
    patch: int = 11,
    min_ncc: float = 0.7,
    match_ratio: float | None = 0.85,
    min_inliers: int = 12,
    max_refit_error: float = 5.0,
    max_dim: int = 8192,
) -> StitchResult:
    """Global-homography stitcher: warp target into the reference frame.

    Overlap is resolved reference-wins. The depth buffer carries no scene
    geometry here; covered pixels get depth 1.0 so the hole invariant
    (hole <=> infinite depth) still holds.
    """
    ref = np.asarray(reference, dtype=np.uint8)
    tgt = np.asarray(target, dtype=np.uint8)
    kps_ref = detect_corners(ref, max_count=max_corners, nms_radius=nms_radius)
    kps_tgt = detect_corners(tgt, max_count=max_corners, nms_radius=nms_radius)
    matches = match_patches(tgt, kps_tgt, ref, kps_ref, patch=patch, min_ncc=min_ncc, ratio=match_ratio)
    h, inliers = ransac_homography(matches, threshold=threshold, max_iters=max_iters, seed=seed)
    if int(inliers.sum()) < min_inliers:
        raise RegistrationFailure(f"only {int(inliers.sum())} inliers (< {min_inliers})")
    refit_err = float(
        symmetric_transfer_error(h, matches.pts1[inliers], matches.pts2[inliers]).mean()
    )
    if refit_err > max_refit_error:
        raise RegistrationFailure(f"refit transfer error {refit_err:.2f}px (> {max_refit_error})")

    th, tw = tgt.shape[:2]
    rh, rw = ref.shape[:2]
    corners = np.array([[0, 0], [tw - 1, 0], [0, th - 1], [tw - 1, th - 1]], dtype=np.float64)
    mapped = apply_homography(h, corners)
    # Snap numerical noise so a near-identity warp keeps the reference frame.
    all_u = np.round(np.concatenate([mapped[:, 0], [0, rw - 1]]), 6)
    all_v = np.round(np.concatenate([mapped[:, 1], [0, rh - 1]]), 6)
    du = int(-np.floor(all_u.min())) if all_u.min() < 0 else 0
    dv = int(-np.floor(all_v.min())) if all_v.min() < 0 else 0
    width = min(int(np.ceil(all_u.max() + du)) + 1, max_dim)
    height = min(int(np.ceil(all_v.max() + dv)) + 1, max_dim)
    canvas = StitchCanvas(offset=(du, dv), width=width, height=height, max_dim=max_dim)

    warped, valid = warp_homography(tgt, h, canvas)
    image = np.zeros((height, width, 3), dtype=np.uint8)
    image[valid] = warped[valid]
    covered = valid.copy()
    y1, x1 = min(dv + rh, height), min(du + rw, width)
    image[dv:y1, du:x1] = ref[: y1 - dv, : x1 - du]  # reference wins in overlap
    covered[dv:y1, du:x1] = True
    depth = np.where(covered, 1.0, np.inf)
    return StitchResult(
        image=image,
        hole_mask=~covered,
        depth_buffer=depth,
        canvas=canvas,
        reference_view=0,
    )
