"""Synthetic scene oracle: analytic ray casting over textured quads and boxes.

Scenes are deterministic functions of their seeds, intersections are
closed-form, and every rendered pixel carries its exact world-space hit
point, so the renderer doubles as ground truth for the reprojection
pipeline. Dataset generation mirrors the evaluation layout: a reference
view, a target view at a controlled parallax level, and a wide GT view
sharing the reference extrinsics whose center crop equals the reference
image bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    CameraModel,
    PointMap,
    project_pinhole,
    world_to_camera,
)

_RAY_EPS = 1e-9

PARALLAX_MODES = ("pure-rotation", "slight", "very-large")


class SynthError(RuntimeError):
    """Raised when a valid pair cannot be constructed."""


# --- procedural textures ---------------------------------------------------


@dataclass(frozen=True)
class TextureSpec:
    kind: str  # checker | gradient | noise
    seed: int = 0
    scale: float = 8.0
    color_a: tuple[int, int, int] = (230, 230, 230)
    color_b: tuple[int, int, int] = (30, 30, 30)


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic lattice hash -> [0, 1)."""
    x = ix.astype(np.int64).astype(np.uint64)
    y = iy.astype(np.int64).astype(np.uint64)
    seed_mix = np.uint64((((seed & 0xFFFFFFFF) + 1) * 0xD6E8FEB86659FD93) & 0xFFFFFFFFFFFFFFFF)
    h = x * np.uint64(0x9E3779B97F4A7C15) + y * np.uint64(0xC2B2AE3D27D4EB4F) + seed_mix
    h ^= h >> np.uint64(29)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(32)
    return (h >> np.uint64(40)).astype(np.float64) / float(1 << 24)


def _value_noise(u: np.ndarray, v: np.ndarray, seed: int) -> np.ndarray:
    x0 = np.floor(u)
    y0 = np.floor(v)
    fu = u - x0
    fv = v - y0
    su = fu * fu * (3.0 - 2.0 * fu)
    sv = fv * fv * (3.0 - 2.0 * fv)
    n00 = _hash01(x0, y0, seed)
    n10 = _hash01(x0 + 1, y0, seed)
    n01 = _hash01(x0, y0 + 1, seed)
    n11 = _hash01(x0 + 1, y0 + 1, seed)
    return (n00 * (1 - su) + n10 * su) * (1 - sv) + (n01 * (1 - su) + n11 * su) * sv


def texture_rgb(spec: TextureSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Evaluate a texture at local surface coordinates in [0, 1]; returns (N, 3) uint8."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    a = np.asarray(spec.color_a, dtype=np.float64)
    b = np.asarray(spec.color_b, dtype=np.float64)
    if spec.kind == "checker":
        idx = (np.floor(u * spec.scale) + np.floor(v * spec.scale)) % 2
        t = idx
    elif spec.kind == "gradient":
        t = 0.5 * (u + v)
    elif spec.kind == "noise":
        coarse = _value_noise(u * spec.scale, v * spec.scale, spec.seed)
        fine = _value_noise(u * spec.scale * 3.7 + 11.0, v * spec.scale * 3.7 + 7.0, spec.seed + 101)
        t = 0.62 * coarse + 0.38 * fine
    else:
        raise SynthError(f"unknown texture kind {spec.kind!r}")
    rgb = a[None, :] * (1 - t)[:, None] + b[None, :] * t[:, None]
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


# --- primitives ------------------------------------------------------------


_IN_PLANE = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


@dataclass(frozen=True)
class Quad:
    """Axis-aligned rectangle on the plane {x[axis] == coord}."""

    axis: int
    coord: float
    lo: tuple[float, float]  # extents along the two in-plane axes, ascending axis order
    hi: tuple[float, float]
    texture: TextureSpec

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        a1, a2 = _IN_PLANE[self.axis]
        denom = dirs[:, self.axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (self.coord - origin[self.axis]) / denom
            s = np.where(np.abs(denom) > 1e-12, s, np.inf)
            s = np.where(s > _RAY_EPS, s, np.inf)
            p1 = origin[a1] + s * dirs[:, a1]
            p2 = origin[a2] + s * dirs[:, a2]
            inside = (p1 >= self.lo[0]) & (p1 <= self.hi[0]) & (p2 >= self.lo[1]) & (p2 <= self.hi[1])
            s = np.where(inside, s, np.inf)
            uu = (p1 - self.lo[0]) / (self.hi[0] - self.lo[0])
            vv = (p2 - self.lo[1]) / (self.hi[1] - self.lo[1])
        return s, uu, vv


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi]; the nearest entry face is shaded."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    texture: TextureSpec

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t_lo = (lo[None, :] - origin[None, :]) * inv
            t_hi = (hi[None, :] - origin[None, :]) * inv
            # Origin exactly on a slab plane with parallel direction -> 0 * inf.
            t_lo = np.nan_to_num(t_lo, nan=-np.inf)
            t_hi = np.nan_to_num(t_hi, nan=np.inf)
            t_min = np.minimum(t_lo, t_hi)
            t_max = np.maximum(t_lo, t_hi)
            t_near = t_min.max(axis=1)
            t_far = t_max.min(axis=1)
            hit = (t_far >= t_near) & (t_near > _RAY_EPS)
            s = np.where(hit, t_near, np.inf)
            entry_axis = t_min.argmax(axis=1)
            a1 = np.where(entry_axis == 0, 1, 0)
            a2 = np.where(entry_axis == 2, 1, 2)
            rows = np.arange(len(dirs))
            p1 = origin[a1] + s * dirs[rows, a1]
            p2 = origin[a2] + s * dirs[rows, a2]
            uu = (p1 - lo[a1]) / (hi[a1] - lo[a1])
            vv = (p2 - lo[a2]) / (hi[a2] - lo[a2])
        return s, uu, vv


@dataclass
class SceneSpec:
    primitives: list
    background: tuple[int, int, int] = (12, 12, 16)

    def __post_init__(self):
        if not self.primitives:
            raise SynthError("a scene needs at least one primitive")

    def surface_points(self) -> np.ndarray:
        """Coarse world-point samples of every primitive (for aiming/centroids)."""
        pts = []
        for prim in self.primitives:
            if isinstance(prim, Quad):
                a1, a2 = _IN_PLANE[prim.axis]
                g1, g2 = np.meshgrid(
                    np.linspace(prim.lo[0], prim.hi[0], 5), np.linspace(prim.lo[1], prim.hi[1], 5)
                )
                p = np.zeros((g1.size, 3))
                p[:, prim.axis] = prim.coord
                p[:, a1] = g1.ravel()
                p[:, a2] = g2.ravel()
            else:
                corners = np.array(np.meshgrid(*zip(prim.lo, prim.hi))).reshape(3, -1).T
                p = corners
            pts.append(p)
        return np.concatenate(pts)


# --- rendering -------------------------------------------------------------


def render_view(scene: SceneSpec, camera: CameraModel):
    """Ray-cast one view; returns (image, PointMap, depth).

    depth is the camera-frame Z per pixel (NaN where no primitive is hit);
    the point map stores exact world-space hit points.
    """
    w, h = camera.width, camera.height
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    pix = np.column_stack([us.ravel(), vs.ravel(), np.ones(w * h)])
    dirs_cam = pix @ camera.intrinsics.inverse().T  # z component is exactly 1
    dirs = dirs_cam @ camera.extrinsics.R  # R^T @ d, per row
    origin = camera.extrinsics.center()

    best_s = np.full(w * h, np.inf)
    color = np.tile(np.asarray(scene.background, dtype=np.uint8), (w * h, 1))
    for prim in scene.primitives:
        s, uu, vv = prim.intersect(origin, dirs)
        closer = s < best_s
        if closer.any():
            color[closer] = texture_rgb(prim.texture, uu[closer], vv[closer])
            best_s[closer] = s[closer]

    hit = np.isfinite(best_s)
    points = np.full((w * h, 3), np.nan)
    points[hit] = origin[None, :] + best_s[hit, None] * dirs[hit]
    depth = np.where(hit, best_s, np.nan)
    return (
        color.reshape(h, w, 3),
        PointMap(points.reshape(h, w, 3)),
        depth.reshape(h, w),
    )


# --- cameras and poses -----------------------------------------------------


def make_camera(
    width: int,
    height: int,
    extrinsics: CameraExtrinsics | None = None,
    focal_scale: float = 0.9,
) -> CameraModel:
    intr = CameraIntrinsics(
        fx=focal_scale * width,
        fy=focal_scale * width,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
    )
    return CameraModel(intr, extrinsics or CameraExtrinsics.identity(), width, height)


def wide_gt_camera(reference: CameraModel) -> CameraModel:
    """Double the linear field of view around the reference view.

    The intrinsics shift by exactly the center-crop offset, so the
    reference image is the bit-exact center crop of the GT rendering.
    """
    w, h = reference.width, reference.height
    intr = reference.intrinsics
    gt_intr = CameraIntrinsics(
        fx=intr.fx, fy=intr.fy, cx=intr.cx + w // 2, cy=intr.cy + h // 2, skew=intr.skew
    )
    return CameraModel(gt_intr, reference.extrinsics, 2 * w, 2 * h)


def rotation_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]], dtype=np.float64
    )
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def look_at(center: np.ndarray, target: np.ndarray, down) -> CameraExtrinsics:
    """World-to-camera pose with +z toward `target` and +y roughly along `down`."""
    z = target - center
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise SynthError("look_at target coincides with the camera center")
    z = z / nz
    x = np.cross(np.asarray(down, dtype=np.float64), z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise SynthError("look_at down direction is parallel to the view direction")
    x = x / nx
    y = np.cross(z, x)
    r = np.vstack([x, y, z])
    return CameraExtrinsics(r, -r @ center)


# --- dataset construction --------------------------------------------------


@dataclass
class ViewData:
    image: np.ndarray
    camera: CameraModel
    pointmap: PointMap
    depth: np.ndarray


@dataclass
class DatasetItem:
    reference: ViewData
    target: ViewData
    gt_image: np.ndarray
    gt_camera: CameraModel
    mode: str
    baseline: float
    median_depth: float


def _visible_fraction(points_w: np.ndarray, camera: CameraModel) -> float:
    if len(points_w) == 0:
        return 0.0
    cam_pts, _ = world_to_camera(points_w, camera.extrinsics)
    uvz, kept, _ = project_pinhole(cam_pts, camera.intrinsics)
    if len(kept) == 0:
        return 0.0
    inside = (
        (uvz[:, 0] >= 0)
        & (uvz[:, 0] <= camera.width - 1)
        & (uvz[:, 1] >= 0)
        & (uvz[:, 1] <= camera.height - 1)
    )
    return float(inside.sum()) / float(len(points_w))

# Slight-parallax baselines sit inside the classifier's slight band with
# margin on both sides; very-large starts past the 0.25 boundary.
_SLIGHT_RATIO = (0.05, 0.18)
_VERY_LARGE_RATIO = (0.30, 0.45)
_MIN_VISIBLE = 0.30


def _target_extrinsics(mode, rng, reference: CameraModel, median_depth, scene_centroid,
                       very_large_ratio=None):
    ext = reference.extrinsics
    center = ext.center()
    down = ext.R[1]
    if mode == "pure-rotation":
        angle = np.deg2rad(rng.uniform(4.0, 15.0))
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        r = rotation_axis_angle(axis, angle) @ ext.R
        return CameraExtrinsics(r, -r @ center), 0.0
    if mode == "slight":
        ratio = rng.uniform(*_SLIGHT_RATIO)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        new_center = center + ratio * median_depth * direction
        return CameraExtrinsics(ext.R, -ext.R @ new_center), ratio * median_depth
    if mode == "very-large":
        ratio = rng.uniform(*(very_large_ratio or _VERY_LARGE_RATIO))
        # Lateral orbit: translate in the camera's image plane, then re-aim.
        phi = rng.uniform(0, 2 * np.pi)
        lateral = np.cos(phi) * ext.R[0] + 0.35 * np.sin(phi) * ext.R[1]
        lateral /= np.linalg.norm(lateral)
        new_center = center + ratio * median_depth * lateral
        return look_at(new_center, scene_centroid, down), ratio * median_depth
    raise SynthError(f"unknown parallax mode {mode!r} (expected one of {PARALLAX_MODES})")


def generate_pair(
    scene: SceneSpec,
    base_camera: CameraModel,
    mode: str,
    seed: int,
    max_retries: int = 20,
    very_large_ratio: tuple[float, float] | None = None,
) -> DatasetItem:
    """Render a reference/target/GT triple at the requested parallax level."""
    ref_img, ref_pmap, ref_depth = render_view(scene, base_camera)
    valid_depth = ref_depth[np.isfinite(ref_depth)]
    if valid_depth.size == 0:
        raise SynthError("scene is not visible from the base camera")
    median_depth = float(np.median(valid_depth))
    ref_points = ref_pmap.valid_points()
    centroid = ref_points.mean(axis=0)

    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        target_ext, baseline = _target_extrinsics(
            mode, rng, base_camera, median_depth, centroid, very_large_ratio=very_large_ratio
        )
        target_cam = CameraModel(
            base_camera.intrinsics, target_ext, base_camera.width, base_camera.height
        )
        if _visible_fraction(ref_points, target_cam) >= _MIN_VISIBLE:
            break
    else:
        raise SynthError(f"no {mode} target camera saw >= {_MIN_VISIBLE:.0%} of the scene")

    tgt_img, tgt_pmap, tgt_depth = render_view(scene, target_cam)
    gt_cam = wide_gt_camera(base_camera)
    gt_img, _, _ = render_view(scene, gt_cam)
    return DatasetItem(
        reference=ViewData(ref_img, base_camera, ref_pmap, ref_depth),
        target=ViewData(tgt_img, target_cam, tgt_pmap, tgt_depth),
        gt_image=gt_img,
        gt_camera=gt_cam,
        mode=mode,
        baseline=baseline,
        median_depth=median_depth,
    )


def make_scene(seed: int, textures=("noise", "checker", "gradient")) -> SceneSpec:
    """Procedural scene: a far textured wall plus a handful of nearer blocks."""
    rng = np.random.default_rng(seed)
    prims = []
    wall_z = rng.uniform(7.5, 9.0)
    prims.append(
        Quad(
            axis=2,
            coord=wall_z,
            lo=(-0.95 * wall_z, -0.75 * wall_z),
            hi=(0.95 * wall_z, 0.75 * wall_z),
            texture=TextureSpec("noise", seed=int(rng.integers(1 << 30)), scale=26.0),
        )
    )
    for i in range(int(rng.integers(3, 6))):
        z0 = rng.uniform(2.6, 5.5)
        cx = rng.uniform(-0.45, 0.45) * z0
        cy = rng.uniform(-0.3, 0.3) * z0
        half = rng.uniform(0.25, 0.7)
        depth_extent = rng.uniform(0.3, 0.9)
        kind = textures[int(rng.integers(len(textures)))]
        spec = TextureSpec(
            kind,
            seed=int(rng.integers(1 << 30)),
            scale=float(rng.uniform(6.0, 14.0)),
            color_a=tuple(int(c) for c in rng.integers(140, 256, size=3)),
            color_b=tuple(int(c) for c in rng.integers(0, 110, size=3)),
        )
        prims.append(
            Box(
                lo=(cx - half, cy - half * 0.8, z0),
                hi=(cx + half, cy + half * 0.8, z0 + depth_extent),
                texture=spec,
            )
        )
    return SceneSpec(primitives=prims)


def make_cluttered_scene(seed: int, n_boxes: tuple[int, int] = (9, 13)) -> SceneSpec:
    """Depth-spread scene with no dominant plane.

    Many small textured boxes at staggered depths: no single surface can
    carry a global homography, which is the regime where plane-based
    stitching visibly breaks epipolar geometry.
    """
    rng = np.random.default_rng(seed)
    prims = []
    count = int(rng.integers(n_boxes[0], n_boxes[1]))
    for i in range(count):
        z0 = rng.uniform(6.0, 7.2)
        cx = rng.uniform(-0.5, 0.5) * z0
        cy = rng.uniform(-0.35, 0.35) * z0
        half = rng.uniform(0.5, 0.95)
        spec = TextureSpec(
            "noise",
            seed=int(rng.integers(1 << 30)),
            scale=float(rng.uniform(7.0, 12.0)),
            color_a=tuple(int(c) for c in rng.integers(150, 256, size=3)),
            color_b=tuple(int(c) for c in rng.integers(0, 100, size=3)),
        )
        prims.append(
            Box(
                lo=(cx - half, cy - half * 0.85, z0),
                hi=(cx + half, cy + half * 0.85, z0 + rng.uniform(0.4, 1.0)),
                texture=spec,
            )
        )
    return SceneSpec(primitives=prims, background=(8, 8, 10))


def _item_seed(seed: int, scene_idx: int, item_idx: int) -> int:
    return (seed * 1_000_003 + scene_idx * 10_007 + item_idx * 101 + 17) % (1 << 32)


def generate_dataset(
    out_dir,
    n_scenes: int = 2,
    per_scene: int = 3,
    mix=("very-large",),
    seed: int = 0,
    width: int = 256,
    height: int = 192,
    scene_textures=("noise", "checker", "gradient"),
) -> dict:
    """Write a dataset tree and return its manifest.

    Layout: <out>/<scene>/<item>/{ref.png, tgt.png, gt.png, ref.pmap,
    tgt.pmap, cameras.json}; the manifest is also written to
    <out>/manifest.json. Deterministic per seed.
    """
    if per_scene < 1 or n_scenes < 1:
        raise SynthError("need at least one scene and one pair per scene")
    mix = list(mix)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = []
    for s in range(n_scenes):
        scene = make_scene(_item_seed(seed, s, 0) ^ 0x5EED, textures=scene_textures)
        base = make_camera(width, height)
        for i in range(per_scene):
            mode = mix[i % len(mix)]
            item = generate_pair(scene, base, mode, seed=_item_seed(seed, s, i + 1))
            rel = Path(f"scene{s:02d}") / f"item{i:02d}"
            item_dir = out / rel
            item_dir.mkdir(parents=True, exist_ok=True)
            formats.save_image(item_dir / "ref.png", item.reference.image)
            formats.save_image(item_dir / "tgt.png", item.target.image)
            formats.save_image(item_dir / "gt.png", item.gt_image)
            formats.write_pmap(item_dir / "ref.pmap", item.reference.pointmap.points)
            formats.write_pmap(item_dir / "tgt.pmap", item.target.pointmap.points)
            formats.save_cameras(
                item_dir / "cameras.json",
                [
                    formats.CameraRecord("ref.png", item.reference.camera),
                    formats.CameraRecord("tgt.png", item.target.camera),
                    formats.CameraRecord("gt.png", item.gt_camera),
                ],
            )
            items.append(
                {
                    "scene": f"scene{s:02d}",
                    "item": f"item{i:02d}",
                    "dir": str(rel),
                    "mode": item.mode,
                    "files": {
                        "ref": str(rel / "ref.png"),
                        "tgt": str(rel / "tgt.png"),
                        "gt": str(rel / "gt.png"),
                        "ref_pmap": str(rel / "ref.pmap"),
                        "tgt_pmap": str(rel / "tgt.pmap"),
                        "cameras": str(rel / "cameras.json"),
                    },
                    "parallax_meta": {
                        "baseline": item.baseline,
                        "median_depth": item.median_depth,
                    },
                }
            )
    manifest = {
        "seed": seed,
        "width": width,
        "height": height,
        "n_scenes": n_scenes,
        "per_scene": per_scene,
        "mix": mix,
        "items": items,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest
