/**
 * Minimal camera math shared by the exporters.
 *
 * Conventions match the engine: extrinsics (R, t) map world coordinates
 * into the camera frame (p_cam = R p + t); pixel (u, v) = (column, row)
 * with the origin at the CENTER of the top-left pixel.
 */

export type Vec3 = [number, number, number];
export type Mat3 = [number, number, number, number, number, number, number, number, number];

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  skew: number;
}

export interface Extrinsics {
  R: Mat3; // row-major
  t: Vec3;
}

export interface CameraView {
  image: string;
  width: number;
  height: number;
  intrinsics: Intrinsics;
  extrinsics: Extrinsics;
}

/** Rotation matrix from a unit quaternion in (w, x, y, z) order. */
export function quaternionToRotation(q: [number, number, number, number]): Mat3 {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (n < 1e-12) {
    throw new Error('zero-norm quaternion');
  }
  const [w, x, y, z] = q.map(v => v / n) as [number, number, number, number];
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ];
}

export function applyExtrinsics(e: Extrinsics, p: Vec3): Vec3 {
  const { R, t } = e;
  return [
    R[0] * p[0] + R[1] * p[1] + R[2] * p[2] + t[0],
    R[3] * p[0] + R[4] * p[1] + R[5] * p[2] + t[1],
    R[6] * p[0] + R[7] * p[1] + R[8] * p[2] + t[2],
  ];
}

/** Project a camera-frame point; returns null when at or behind the camera. */
export function projectPinhole(k: Intrinsics, pCam: Vec3): [number, number, number] | null {
  const [x, y, z] = pCam;
  if (!(z > 1e-6)) {
    return null;
  }
  return [(k.fx * x + k.skew * y) / z + k.cx, (k.fy * y) / z + k.cy, z];
}

export function rotationIsValid(R: Mat3, tol = 1e-6): boolean {
  // R R^T == I and det == +1.
  const dot = (a: number[], b: number[]) => a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  const rows = [R.slice(0, 3), R.slice(3, 6), R.slice(6, 9)];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      const expected = i === j ? 1 : 0;
      if (Math.abs(dot(rows[i], rows[j]) - expected) > tol) {
        return false;
      }
    }
  }
  const det =
    R[0] * (R[4] * R[8] - R[5] * R[7]) -
    R[1] * (R[3] * R[8] - R[5] * R[6]) +
    R[2] * (R[3] * R[7] - R[4] * R[6]);
  return Math.abs(det - 1) <= tol;
}
