"""Parallax-level estimation from camera poses and a reference point map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, PointMap, relative_pose, world_to_camera

DEFAULT_TAU1 = 0.02
DEFAULT_TAU2 = 0.25

PURE_ROTATION = "pure-rotation"
SLIGHT = "slight"
VERY_LARGE = "very-large"


class ParallaxError(ValueError):
    """Raised when parallax cannot be assessed (no valid depth)."""


@dataclass
class ParallaxAssessment:
    p_level: float
    parallax_class: str
    baseline: float
    median_depth: float

    def to_dict(self) -> dict:
        return {
            "p_level": self.p_level,
            "class": self.parallax_class,
            "baseline": self.baseline,
            "median_depth": self.median_depth,
        }


def assess_parallax(
    cam1: CameraModel,
    cam2: CameraModel,
    pointmap1: PointMap,
    tau1: float = DEFAULT_TAU1,
    tau2: float = DEFAULT_TAU2,
) -> ParallaxAssessment:
    """Baseline-to-median-depth ratio, classified by the (tau1, tau2) thresholds.

    The baseline is the relative-pose translation norm; depth is the median
    camera-frame Z of the first view's valid points, so the ratio is
    invariant to global scene scaling.
    """
    valid = pointmap1.valid_points()
    if len(valid) == 0:
        raise ParallaxError("point map holds no valid points")
    cam_pts, _ = world_to_camera(valid, cam1.extrinsics)
    median_depth = float(np.median(cam_pts[:, 2]))
    if median_depth <= 0:
        raise ParallaxError(f"median scene depth is not positive ({median_depth:.3g})")
    baseline = float(np.linalg.norm(relative_pose(cam1.extrinsics, cam2.extrinsics).t))
    p_level = baseline / median_depth
    if p_level < tau1:
        cls = PURE_ROTATION
    elif p_level < tau2:
        cls = SLIGHT
    else:
        cls = VERY_LARGE
    return ParallaxAssessment(
        p_level=p_level, parallax_class=cls, baseline=baseline, median_depth=median_depth
    )
