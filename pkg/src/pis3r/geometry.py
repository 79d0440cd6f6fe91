"""Camera geometry primitives: intrinsics, extrinsics, point maps, projection.

Conventions used throughout the engine:

- Extrinsics (R, t) map WORLD coordinates into the CAMERA frame:
      p_cam = R @ p_world + t
  The camera center in world coordinates is therefore C = -R.T @ t.
- Camera frame: x right, y down, z forward (points with z > 0 are in
  front of the camera).
- Pixel coordinates (u, v) = (column, row), origin at the CENTER of the
  top-left pixel. Projection:
      u = (fx * X + skew * Y) / Z + cx
      v = (fy * Y) / Z + cy
- Points with Z <= EPS_Z are "behind the camera" and never projected.
- Invalid point-map entries are encoded as NaN triples; validity is a
  property of the data, not a sidecar mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Behind-camera depth cutoff, scene units. Avoids division blow-up near Z = 0.
EPS_Z = 1e-6

_ROTATION_TOL = 1e-8


class GeometryError(ValueError):
    """Raised for invalid camera parameters or degenerate geometry."""


def _as_matrix3(value, name: str) -> np.ndarray:
    m = np.asarray(value, dtype=np.float64)
    if m.shape != (3, 3):
        raise GeometryError(f"{name} must be 3x3, got shape {m.shape}")
    return m


def _as_vector3(value, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise GeometryError(f"{name} must be a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.fx, self.skew, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )

    def inverse(self) -> np.ndarray:
        # Closed-form inverse of the upper-triangular K.
        fx, fy, cx, cy, s = self.fx, self.fy, self.cx, self.cy, self.skew
        return np.array(
            [
                [1.0 / fx, -s / (fx * fy), (s * cy - cx * fy) / (fx * fy)],
                [0.0, 1.0 / fy, -cy / fy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera rigid transform: p_cam = R @ p_world + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _as_matrix3(self.R, "R"))
        object.__setattr__(self, "t", _as_vector3(self.t, "t"))
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        if err > _ROTATION_TOL:
            raise GeometryError(f"R is not orthonormal (|R^T R - I| = {err:.3e})")
        det = np.linalg.det(self.R)
        if abs(det - 1.0) > _ROTATION_TOL:
            raise GeometryError(f"R is not a proper rotation (det = {det:.12f})")

    @staticmethod
    def identity() -> "CameraExtrinsics":
        return CameraExtrinsics(np.eye(3), np.zeros(3))

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t


@dataclass(frozen=True)
class CameraModel:
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"image dimensions must be >= 1, got {self.width}x{self.height}")


@dataclass
class PointMap:
    """Per-pixel world-space 3D coordinates aligned to an image grid.

    Any pixel with a non-finite component is normalized to a NaN triple on
    construction, so validity is always "all three components finite".
    """

    points: np.ndarray  # (H, W, 3) float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise GeometryError(f"point map must have shape (H, W, 3), got {pts.shape}")
        bad = ~np.isfinite(pts).all(axis=2)
        if bad.any():
            pts = pts.copy()
            pts[bad] = np.nan
        self.points = pts

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def validity(self) -> np.ndarray:
        """(H, W) bool mask of pixels carrying a finite 3D point."""
        return np.isfinite(self.points).all(axis=2)

    def valid_points(self) -> np.ndarray:
        """(N, 3) array of valid world points, row-major pixel order."""
        return self.points[self.validity]


@dataclass
class ColoredCloud:
    """Flat world-space point cloud with per-point color and provenance."""

    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8
    source: np.ndarray  # (N, 2) int64: (view index, row-major pixel index)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        self.source = np.asarray(self.source, dtype=np.int64).reshape(-1, 2)
        n = len(self.positions)
        if len(self.colors) != n or len(self.source) != n:
            raise GeometryError(
                f"cloud arrays disagree: {n} positions, {len(self.colors)} colors, "
                f"{len(self.source)} source entries"
            )
        if not np.isfinite(self.positions).all():
            raise GeometryError("cloud positions must be finite")

    def __len__(self) -> int:
        return len(self.positions)


def world_to_camera(points, extrinsics: CameraExtrinsics):
    """Map world points into the camera frame: p_cam = R @ p + t.

    Returns (camera_points, rejected): camera_points has the same length as
    the input with NaN rows where the input was non-finite; rejected is the
    index array of those rows.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    finite = np.isfinite(pts).all(axis=1)
    rejected = np.flatnonzero(~finite)
    out = np.full_like(pts, np.nan)
    if finite.any():
        out[finite] = pts[finite] @ extrinsics.R.T + extrinsics.t
    return out, rejected


def camera_to_world(points_cam, extrinsics: CameraExtrinsics) -> np.ndarray:
    """Inverse of world_to_camera for finite points."""
    pts = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    return (pts - extrinsics.t) @ extrinsics.R


def project_pinhole(points_cam, intrinsics: CameraIntrinsics, eps_z: float = EPS_Z):
    """Project camera-frame points to (u, v, Z).

    Points with Z <= eps_z (or non-finite coordinates) are excluded.
    Returns (uvz, kept, excluded_count) where uvz is (M, 3), kept is the
    index array of surviving input rows.
    """
    pts = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    with np.errstate(invalid="ignore"):
        front = np.isfinite(pts).all(axis=1) & (pts[:, 2] > eps_z)
    kept = np.flatnonzero(front)
    x, y, z = pts[kept, 0], pts[kept, 1], pts[kept, 2]
    u = (intrinsics.fx * x + intrinsics.skew * y) / z + intrinsics.cx
    v = intrinsics.fy * y / z + intrinsics.cy
    uvz = np.column_stack([u, v, z])
    return uvz, kept, len(pts) - len(kept)


def backproject_pinhole(uvz, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Lift (u, v, Z) pixel samples back to camera-frame 3D points."""
    arr = np.asarray(uvz, dtype=np.float64).reshape(-1, 3)
    rays = np.column_stack([arr[:, 0], arr[:, 1], np.ones(len(arr))]) @ intrinsics.inverse().T
    return rays * arr[:, 2:3]


def relative_pose(a: CameraExtrinsics, b: CameraExtrinsics) -> CameraExtrinsics:
    """Pose of b relative to a: maps a-frame points into the b frame.

    world_to_camera(., b) == apply(relative_pose(a, b), world_to_camera(., a))
    """
    r_rel = b.R @ a.R.T
    t_rel = b.t - r_rel @ a.t
    return CameraExtrinsics(r_rel, t_rel)
