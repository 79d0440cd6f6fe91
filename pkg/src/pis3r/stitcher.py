"""Reprojection stitching: fuse point maps, reproject, normalize, z-buffer splat.

The splatting contract is a total order: per canvas pixel the sample with
the strictly smallest depth wins, ties broken by smallest (view, pixel)
provenance. That order makes the result independent of sample ordering and
of any internal parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    EPS_Z,
    CameraModel,
    ColoredCloud,
    GeometryError,
    PointMap,
    project_pinhole,
    world_to_camera,
)

DEFAULT_MAX_DIM = 8192
DEFAULT_HOLE_COLOR = (0, 0, 0)


class StitchError(RuntimeError):
    """Raised when the reprojection pipeline cannot produce a canvas."""


@dataclass
class ProjectedSamples:
    """Point cloud projected into one camera's pixel space."""

    coords: np.ndarray  # (N, 2) float64 (u, v)
    depths: np.ndarray  # (N,) float64, all > EPS_Z
    colors: np.ndarray  # (N, 3) uint8
    source: np.ndarray  # (N, 2) int64 provenance (view, pixel)
    behind_count: int = 0

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        self.depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        self.source = np.asarray(self.source, dtype=np.int64).reshape(-1, 2)
        n = len(self.coords)
        if not (len(self.depths) == len(self.colors) == len(self.source) == n):
            raise StitchError("projected sample arrays must have equal length")
        if n and not (self.depths > EPS_Z).all():
            raise StitchError("projected samples must all lie in front of the camera")

    def __len__(self) -> int:
        return len(self.coords)


@dataclass
class StitchCanvas:
    """Integer translation + size normalizing projections to a non-negative grid."""

    offset: tuple[int, int]  # (du, dv) added to (u, v)
    width: int
    height: int
    max_dim: int = DEFAULT_MAX_DIM


@dataclass
class StitchResult:
    image: np.ndarray  # (H, W, 3) uint8
    hole_mask: np.ndarray  # (H, W) bool, True where no sample landed
    depth_buffer: np.ndarray  # (H, W) float64, +inf at holes
    canvas: StitchCanvas
    reference_view: int
    behind_count: int = 0
    dropped_samples: int = 0

    @property
    def hole_fraction(self) -> float:
        return float(self.hole_mask.mean())


def fuse_pointclouds(views) -> ColoredCloud:
    """Concatenate per-view point maps into one colored world cloud.

    `views` is a sequence of (PointMap, image) pairs; image is (H, W, 3)
    uint8 aligned to the point grid. Invalid (NaN) pixels are skipped.
    Provenance is (view index, row-major pixel index).
    """
    if not views:
        raise StitchError("at least one view is required")
    positions, colors, source = [], [], []
    for idx, (pmap, image) in enumerate(views):
        if not isinstance(pmap, PointMap):
            pmap = PointMap(np.asarray(pmap))
        img = np.asarray(image)
        if img.shape[:2] != (pmap.height, pmap.width):
            raise StitchError(
                f"view {idx}: point map is {pmap.width}x{pmap.height} but image is "
                f"{img.shape[1]}x{img.shape[0]}"
            )
        valid = pmap.validity
        flat = np.flatnonzero(valid.reshape(-1))
        positions.append(pmap.points[valid])
        colors.append(img.reshape(-1, 3)[flat])
        source.append(np.column_stack([np.full(len(flat), idx, dtype=np.int64), flat]))
    return ColoredCloud(
        np.concatenate(positions), np.concatenate(colors), np.concatenate(source)
    )


def reproject_cloud(cloud: ColoredCloud, camera: CameraModel) -> ProjectedSamples:
    """Project a world cloud into a camera; behind-camera points are dropped and counted."""
    if len(cloud) == 0:
        raise StitchError("cannot reproject an empty cloud")
    cam_pts, _ = world_to_camera(cloud.positions, camera.extrinsics)
    uvz, kept, behind = project_pinhole(cam_pts, camera.intrinsics)
    if len(kept) == 0:
        raise StitchError(f"empty projection: all {behind} points behind the camera")
    return ProjectedSamples(
        coords=uvz[:, :2],
        depths=uvz[:, 2],
        colors=cloud.colors[kept],
        source=cloud.source[kept],
        behind_count=behind,
    )


def normalize_canvas(samples: ProjectedSamples, max_dim: int = DEFAULT_MAX_DIM) -> StitchCanvas:
    """Translate projected coordinates into non-negative canvas space.

    offset = (-floor(min_u) if min_u < 0 else 0, same for v); the canvas
    spans ceil(max + offset) + 1 pixels per axis, clamped to max_dim.
    Samples falling beyond a clamped edge are dropped (and counted) at
    splat time.
    """
    if len(samples) == 0:
        raise StitchError("cannot build a canvas from zero samples")
    u, v = samples.coords[:, 0], samples.coords[:, 1]
    min_u, max_u = u.min(), u.max()
    min_v, max_v = v.min(), v.max()
    du = int(-np.floor(min_u)) if min_u < 0 else 0
    dv = int(-np.floor(min_v)) if min_v < 0 else 0
    width = min(int(np.ceil(max_u + du)) + 1, max_dim)
    height = min(int(np.ceil(max_v + dv)) + 1, max_dim)
    return StitchCanvas(offset=(du, dv), width=width, height=height, max_dim=max_dim)


def splat_zbuffer(
    samples: ProjectedSamples,
    canvas: StitchCanvas,
    hole_color=DEFAULT_HOLE_COLOR,
    reference_view: int = 0,
) -> StitchResult:
    """Nearest-depth splat with nearest-pixel rounding.

    Each sample lands on pixel (round(u + du), round(v + dv)) with
    round(x) = floor(x + 0.5). The per-pixel winner is the minimum of the
    (depth, view, pixel) lexicographic order.
    """
    du, dv = canvas.offset
    w, h = canvas.width, canvas.height
    px = np.floor(samples.coords[:, 0] + du + 0.5).astype(np.int64)
    py = np.floor(samples.coords[:, 1] + dv + 0.5).astype(np.int64)
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    dropped = int((~inside).sum())

    image = np.empty((h, w, 3), dtype=np.uint8)
    image[:] = np.asarray(hole_color, dtype=np.uint8)
    depth = np.full((h, w), np.inf, dtype=np.float64)

    if inside.any():
        pix = py[inside] * w + px[inside]
        depths = samples.depths[inside]
        view_src = samples.source[inside, 0]
        pixel_src = samples.source[inside, 1]
        colors = samples.colors[inside]
        # Primary key last: sort by pixel, then depth, then provenance.
        order = np.lexsort((pixel_src, view_src, depths, pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        winners = order[first]
        image.reshape(-1, 3)[pix[winners]] = colors[winners]
        depth.reshape(-1)[pix[winners]] = depths[winners]

    hole = ~np.isfinite(depth)
    return StitchResult(
        image=image,
        hole_mask=hole,
        depth_buffer=depth,
        canvas=canvas,
        reference_view=reference_view,
        behind_count=samples.behind_count,
        dropped_samples=dropped,
    )


def dilate_fill_holes(result: StitchResult, hole_color=DEFAULT_HOLE_COLOR) -> StitchResult:
    """One 3x3 pass filling hole pixels from their nearest-depth covered neighbor."""
    h, w = result.depth_buffer.shape
    best_depth = np.full((h, w), np.inf)
    best_color = np.zeros((h, w, 3), dtype=np.uint8)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            shifted_depth = np.full((h, w), np.inf)
            shifted_color = np.zeros((h, w, 3), dtype=np.uint8)
            ys = slice(max(dy, 0), h + min(dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            yd = slice(max(-dy, 0), h + min(-dy, 0))
            xd = slice(max(-dx, 0), w + min(-dx, 0))
            shifted_depth[yd, xd] = result.depth_buffer[ys, xs]
            shifted_color[yd, xd] = result.image[ys, xs]
            take = shifted_depth < best_depth
            best_depth[take] = shifted_depth[take]
            best_color[take] = shifted_color[take]
    fill = result.hole_mask & np.isfinite(best_depth)
    image = result.image.copy()
    depth = result.depth_buffer.copy()
    image[fill] = best_color[fill]
    depth[fill] = best_depth[fill]
    return StitchResult(
        image=image,
        hole_mask=result.hole_mask & ~fill,
        depth_buffer=depth,
        canvas=result.canvas,
        reference_view=result.reference_view,
        behind_count=result.behind_count,
        dropped_samples=result.dropped_samples,
    )


def stitch(
    views,
    cameras,
    reference: int,
    max_dim: int = DEFAULT_MAX_DIM,
    hole_color=DEFAULT_HOLE_COLOR,
    dilate_holes: bool = False,
) -> StitchResult:
    """Full pipeline: fuse -> reproject onto the reference camera -> normalize -> splat."""
    views = list(views)
    cameras = list(cameras)
    if len(views) != len(cameras):
        raise StitchError(f"{len(views)} views but {len(cameras)} cameras")
    if not (0 <= reference < len(cameras)):
        raise StitchError(f"reference view {reference} out of range [0, {len(cameras)})")
    cloud = fuse_pointclouds(views)
    try:
        samples = reproject_cloud(cloud, cameras[reference])
    except (StitchError, GeometryError) as exc:
        raise StitchError(f"reference view {reference}: {exc}") from exc
    canvas = normalize_canvas(samples, max_dim=max_dim)
    result = splat_zbuffer(samples, canvas, hole_color=hole_color, reference_view=reference)
    if dilate_holes:
        result = dilate_fill_holes(result, hole_color=hole_color)
    return result
