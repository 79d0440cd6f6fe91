/**
 * cameras.json writer/reader in the engine schema:
 * [{"image", "width", "height",
 *   "intrinsics": {"fx","fy","cx","cy","skew"},
 *   "extrinsics": {"R": [9 row-major], "t": [3]}}]
 */

import { readFileSync } from 'node:fs';

import { CameraView, Mat3, Vec3, rotationIsValid } from './geometry.js';
import { writeFileAtomic } from './pmap.js';

export function camerasToJson(views: CameraView[]): string {
  const records = views.map(v => ({
    extrinsics: { R: v.extrinsics.R.map(Number), t: v.extrinsics.t.map(Number) },
    height: v.height,
    image: v.image,
    intrinsics: {
      cx: v.intrinsics.cx,
      cy: v.intrinsics.cy,
      fx: v.intrinsics.fx,
      fy: v.intrinsics.fy,
      skew: v.intrinsics.skew,
    },
    width: v.width,
  }));
  return JSON.stringify(records, null, 2) + '\n';
}

export function writeCameras(path: string, views: CameraView[]): void {
  for (const v of views) {
    if (!(v.intrinsics.fx > 0) || !(v.intrinsics.fy > 0)) {
      throw new Error(`${v.image}: focal lengths must be positive`);
    }
    if (!rotationIsValid(v.extrinsics.R)) {
      throw new Error(`${v.image}: extrinsics R is not a rotation matrix`);
    }
  }
  writeFileAtomic(path, camerasToJson(views));
}

export function readCameras(path: string): CameraView[] {
  const parsed = JSON.parse(readFileSync(path, 'utf-8'));
  if (!Array.isArray(parsed)) {
    throw new Error(`${path}: cameras.json must hold an array`);
  }
  return parsed.map((rec, i) => {
    const intr = rec.intrinsics ?? {};
    const extr = rec.extrinsics ?? {};
    if (!Array.isArray(extr.R) || extr.R.length !== 9 || !Array.isArray(extr.t) || extr.t.length !== 3) {
      throw new Error(`${path}[${i}]: malformed extrinsics`);
    }
    return {
      image: String(rec.image),
      width: Number(rec.width),
      height: Number(rec.height),
      intrinsics: {
        fx: Number(intr.fx),
        fy: Number(intr.fy),
        cx: Number(intr.cx),
        cy: Number(intr.cy),
        skew: Number(intr.skew ?? 0),
      },
      extrinsics: { R: extr.R.map(Number) as Mat3, t: extr.t.map(Number) as Vec3 },
    };
  });
}
