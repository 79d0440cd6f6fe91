"""Reprojection-based image stitching engine, oracle, and evaluation harness."""

from .config import RunConfig
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    CameraModel,
    ColoredCloud,
    PointMap,
    project_pinhole,
    relative_pose,
    world_to_camera,
)
from .metrics import fundamental_from_cameras, psnr, rsr, sampson_error, ssim
from .parallax import assess_parallax
from .registration import baseline_stitch, ransac_homography
from .stitcher import StitchResult, stitch

__all__ = [
    "CameraExtrinsics",
    "CameraIntrinsics",
    "CameraModel",
    "ColoredCloud",
    "PointMap",
    "RunConfig",
    "StitchResult",
    "assess_parallax",
    "baseline_stitch",
    "fundamental_from_cameras",
    "project_pinhole",
    "psnr",
    "ransac_homography",
    "relative_pose",
    "rsr",
    "sampson_error",
    "ssim",
    "stitch",
    "world_to_camera",
]

__version__ = "0.1.0"
