"""File formats shared across the pipeline: PMAP grids, cameras.json, PNG.

PMAP layout (little-endian throughout):
    bytes 0..3   magic "PMAP"
    u32          version (= 1)
    u32          width
    u32          height
    u32          channels
    f32 * (width * height * channels)   row-major, channel-interleaved

channels = 3 for point maps (X, Y, Z), 1 for depth buffers. NaN marks
invalid entries.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraExtrinsics, CameraIntrinsics, CameraModel

PMAP_MAGIC = b"PMAP"
PMAP_VERSION = 1


class FormatError(ValueError):
    """Raised for malformed engine files."""


def write_pmap(path, array) -> None:
    """Write a (H, W) or (H, W, C) float grid as a PMAP file."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"PMAP payload must be (H, W) or (H, W, C), got shape {arr.shape}")
    h, w, c = arr.shape
    header = PMAP_MAGIC + struct.pack("<4I", PMAP_VERSION, w, h, c)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def read_pmap(path) -> np.ndarray:
    """Read a PMAP file; returns a (H, W, C) float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < 20:
        raise FormatError(f"{path}: truncated PMAP header ({len(raw)} bytes)")
    if raw[:4] != PMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, w, h, c = struct.unpack("<4I", raw[4:20])
    if version != PMAP_VERSION:
        raise FormatError(f"{path}: unsupported PMAP version {version}")
    expected = 20 + 4 * w * h * c
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {w}x{h}x{c}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=20)
    return data.reshape(h, w, c).copy()


@dataclass
class CameraRecord:
    """One view entry of a cameras.json file."""

    image: str
    camera: CameraModel


def _camera_to_dict(record: CameraRecord) -> dict:
    cam = record.camera
    return {
        "image": record.image,
        "width": cam.width,
        "height": cam.height,
        "intrinsics": {
            "fx": cam.intrinsics.fx,
            "fy": cam.intrinsics.fy,
            "cx": cam.intrinsics.cx,
            "cy": cam.intrinsics.cy,
            "skew": cam.intrinsics.skew,
        },
        "extrinsics": {
            "R": [float(x) for x in cam.extrinsics.R.reshape(-1)],
            "t": [float(x) for x in cam.extrinsics.t],
        },
    }


def _camera_from_dict(entry: dict, source: str) -> CameraRecord:
    try:
        intr = entry["intrinsics"]
        extr = entry["extrinsics"]
        intrinsics = CameraIntrinsics(
            fx=float(intr["fx"]),
            fy=float(intr["fy"]),
            cx=float(intr["cx"]),
            cy=float(intr["cy"]),
            skew=float(intr.get("skew", 0.0)),
        )
        r = np.asarray(extr["R"], dtype=np.float64)
        if r.size != 9:
            raise FormatError(f"{source}: extrinsics R must hold 9 values, got {r.size}")
        extrinsics = CameraExtrinsics(r.reshape(3, 3), np.asarray(extr["t"], dtype=np.float64))
        camera = CameraModel(intrinsics, extrinsics, int(entry["width"]), int(entry["height"]))
        return CameraRecord(image=str(entry["image"]), camera=camera)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{source}: invalid camera record ({exc})") from exc


def save_cameras(path, records) -> None:
    payload = [_camera_to_dict(r) for r in records]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_cameras(path) -> list[CameraRecord]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(payload, list):
        raise FormatError(f"{path}: cameras.json must hold an array of view records")
    return [_camera_from_dict(entry, f"{path}[{i}]") for i, entry in enumerate(payload)]


def load_image(path) -> np.ndarray:
    """Load an image as (H, W, 3) uint8 RGB."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_image(path, array) -> None:
    arr = np.asarray(array, dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def save_mask(path, mask) -> None:
    """Write a boolean mask as 8-bit grayscale PNG, 255 = set."""
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) >= 128
