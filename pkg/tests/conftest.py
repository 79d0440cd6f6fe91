"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from pis3r.geometry import CameraExtrinsics, CameraIntrinsics, CameraModel
from pis3r.synth import rotation_axis_angle


def random_rotation(rng) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rotation_axis_angle(axis, rng.uniform(0, np.pi))


def random_extrinsics(rng, t_scale: float = 2.0) -> CameraExtrinsics:
    return CameraExtrinsics(random_rotation(rng), rng.uniform(-t_scale, t_scale, size=3))


def simple_camera(width=64, height=48, fx=60.0, extrinsics=None) -> CameraModel:
    intr = CameraIntrinsics(fx=fx, fy=fx, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)
    return CameraModel(intr, extrinsics or CameraExtrinsics.identity(), width, height)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
