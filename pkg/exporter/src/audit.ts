/**
 * Convention audit: before any export is accepted, every valid point-map
 * entry is projected through its own camera and must land near its own
 * pixel. This pins the backend's world/camera conventions against the
 * engine's (a wrong w2c/c2w or pixel-origin choice fails immediately).
 */

import { CameraView, applyExtrinsics, projectPinhole } from './geometry.js';
import { PmapGrid } from './pmap.js';

export interface AuditResult {
  valid: number;
  within: number;
  fraction: number;
  maxError: number;
  pass: boolean;
}

export function auditSelfReprojection(
  grid: PmapGrid,
  view: CameraView,
  tolerancePx = 2.0,
  minFraction = 0.9,
): AuditResult {
  if (grid.channels !== 3) {
    throw new Error(`audit needs a 3-channel point map, got ${grid.channels}`);
  }
  let valid = 0;
  let within = 0;
  let maxError = 0;
  for (let v = 0; v < grid.height; v++) {
    for (let u = 0; u < grid.width; u++) {
      const base = (v * grid.width + u) * 3;
      const x = grid.data[base];
      const y = grid.data[base + 1];
      const z = grid.data[base + 2];
      if (!Number.isFinite(x) || !Number.isFinite(y) || !Number.isFinite(z)) {
        continue;
      }
      valid++;
      const proj = projectPinhole(view.intrinsics, applyExtrinsics(view.extrinsics, [x, y, z]));
      if (proj === null) {
        maxError = Infinity;
        continue;
      }
      const err = Math.hypot(proj[0] - u, proj[1] - v);
      maxError = Math.max(maxError, err);
      if (err <= tolerancePx) {
        within++;
      }
    }
  }
  const fraction = valid === 0 ? 0 : within / valid;
  return { valid, within, fraction, maxError, pass: valid > 0 && fraction >= minFraction };
}
