/**
 * COLMAP sparse-model reader (text and binary) and engine-format exporter.
 *
 * Convention translation owned here:
 * - COLMAP poses (qvec wxyz, tvec) are already world-to-camera, matching
 *   the engine.
 * - COLMAP measures pixels with the center of the top-left pixel at
 *   (0.5, 0.5); the engine puts it at (0, 0), so principal points and 2D
 *   observations shift by -0.5.
 * - Point maps are synthesized by rasterizing the sparse cloud: most
 *   entries stay NaN; collisions keep the nearest depth.
 */

import { copyFileSync, existsSync, mkdirSync, readFileSync } from 'node:fs';
import { basename, join } from 'node:path';

import { AuditResult, auditSelfReprojection } from './audit.js';
import { writeCameras } from './cameras.js';
import { CameraView, Vec3, applyExtrinsics, quaternionToRotation } from './geometry.js';
import { PmapGrid, writePmap } from './pmap.js';

const MODEL_NAMES: Record<number, string> = {
  0: 'SIMPLE_PINHOLE',
  1: 'PINHOLE',
  2: 'SIMPLE_RADIAL',
  3: 'RADIAL',
  4: 'OPENCV',
  5: 'OPENCV_FISHEYE',
  6: 'FULL_OPENCV',
  7: 'FOV',
  8: 'SIMPLE_RADIAL_FISHEYE',
  9: 'RADIAL_FISHEYE',
  10: 'THIN_PRISM_FISHEYE',
};
const MODEL_PARAM_COUNT: Record<number, number> = {
  0: 3, 1: 4, 2: 4, 3: 5, 4: 8, 5: 8, 6: 12, 7: 5, 8: 4, 9: 5, 10: 12,
};
const MODEL_IDS: Record<string, number> = Object.fromEntries(
  Object.entries(MODEL_NAMES).map(([id, name]) => [name, Number(id)]),
);

export interface ColmapCamera {
  cameraId: number;
  model: string;
  width: number;
  height: number;
  params: number[];
}

export interface ColmapImage {
  imageId: number;
  qvec: [number, number, number, number];
  tvec: Vec3;
  cameraId: number;
  name: string;
  /** (x, y, point3dId) per observation; point3dId = -1 when untracked */
  points2d: Array<[number, number, number]>;
}

export interface ColmapModel {
  cameras: Map<number, ColmapCamera>;
  images: ColmapImage[];
  points3d: Map<number, Vec3>;
}

// --- text parsing -----------------------------------------------------------

function dataLines(path: string): string[] {
  return readFileSync(path, 'utf-8')
    .split(/\r?\n/)
    .map(l => l.trim())
    .filter(l => l.length > 0 && !l.startsWith('#'));
}

function parseCamerasText(path: string): Map<number, ColmapCamera> {
  const cameras = new Map<number, ColmapCamera>();
  for (const line of dataLines(path)) {
    const tok = line.split(/\s+/);
    const cameraId = Number(tok[0]);
    cameras.set(cameraId, {
      cameraId,
      model: tok[1],
      width: Number(tok[2]),
      height: Number(tok[3]),
      params: tok.slice(4).map(Number),
    });
  }
  return cameras;
}

function parseImagesText(path: string): ColmapImage[] {
  // Keep empty lines: an image without observations still owns a (blank)
  // second line, and dropping it would shift every following record.
  const lines = readFileSync(path, 'utf-8')
    .split(/\r?\n/)
    .map(l => l.trim())
    .filter(l => !l.startsWith('#'));
  while (lines.length && lines[lines.length - 1] === '') {
    lines.pop();
  }
  if (lines.length % 2 !== 0) {
    throw new Error(`${path}: expected image records in line pairs`);
  }
  const images: ColmapImage[] = [];
  for (let i = 0; i < lines.length; i += 2) {
    const tok = lines[i].split(/\s+/);
    const obsTok = lines[i + 1].split(/\s+/).filter(t => t.length);
    const points2d: Array<[number, number, number]> = [];
    for (let j = 0; j + 2 < obsTok.length + 1; j += 3) {
      points2d.push([Number(obsTok[j]), Number(obsTok[j + 1]), Number(obsTok[j + 2])]);
    }
    images.push({
      imageId: Number(tok[0]),
      qvec: [Number(tok[1]), Number(tok[2]), Number(tok[3]), Number(tok[4])],
      tvec: [Number(tok[5]), Number(tok[6]), Number(tok[7])],
      cameraId: Number(tok[8]),
      name: tok.slice(9).join(' '),
      points2d,
    });
  }
  return images;
}

function parsePoints3dText(path: string): Map<number, Vec3> {
  const points = new Map<number, Vec3>();
  for (const line of dataLines(path)) {
    const tok = line.split(/\s+/);
    points.set(Number(tok[0]), [Number(tok[1]), Number(tok[2]), Number(tok[3])]);
  }
  return points;
}

// --- binary parsing ----------------------------------------------------------

class Reader {
  private off = 0;
  constructor(private buf: Buffer) {}
  u8(): number { return this.buf.readUInt8(this.off++); }
  u32(): number { const v = this.buf.readUInt32LE(this.off); this.off += 4; return v; }
  i32(): number { const v = this.buf.readInt32LE(this.off); this.off += 4; return v; }
  u64(): number { const v = Number(this.buf.readBigUInt64LE(this.off)); this.off += 8; return v; }
  i64(): number { const v = Number(this.buf.readBigInt64LE(this.off)); this.off += 8; return v; }
  f64(): number { const v = this.buf.readDoubleLE(this.off); this.off += 8; return v; }
  cstr(): string {
    const start = this.off;
    while (this.buf[this.off] !== 0) this.off++;
    const s = this.buf.subarray(start, this.off).toString('utf-8');
    this.off++;
    return s;
  }
}

function parseCamerasBinary(path: string): Map<number, ColmapCamera> {
  const r = new Reader(readFileSync(path));
  const cameras = new Map<number, ColmapCamera>();
  const count = r.u64();
  for (let i = 0; i < count; i++) {
    const cameraId = r.u32();
    const modelId = r.i32();
    const width = r.u64();
    const height = r.u64();
    const n = MODEL_PARAM_COUNT[modelId];
    if (n === undefined) {
      throw new Error(`${path}: unknown camera model id ${modelId}`);
    }
    const params: number[] = [];
    for (let j = 0; j < n; j++) params.push(r.f64());
    cameras.set(cameraId, {
      cameraId, model: MODEL_NAMES[modelId], width, height, params,
    });
  }
  return cameras;
}

function parseImagesBinary(path: string): ColmapImage[] {
  const r = new Reader(readFileSync(path));
  const images: ColmapImage[] = [];
  const count = r.u64();
  for (let i = 0; i < count; i++) {
    const imageId = r.u32();
    const qvec: [number, number, number, number] = [r.f64(), r.f64(), r.f64(), r.f64()];
    const tvec: Vec3 = [r.f64(), r.f64(), r.f64()];
    const cameraId = r.u32();
    const name = r.cstr();
    const nObs = r.u64();
    const points2d: Array<[number, number, number]> = [];
    for (let j = 0; j < nObs; j++) {
      points2d.push([r.f64(), r.f64(), r.i64()]);
    }
    images.push({ imageId, qvec, tvec, cameraId, name, points2d });
  }
  return images;
}

function parsePoints3dBinary(path: string): Map<number, Vec3> {
  const r = new Reader(readFileSync(path));
  const points = new Map<number, Vec3>();
  const count = r.u64();
  for (let i = 0; i < count; i++) {
    const id = r.u64();
    const xyz: Vec3 = [r.f64(), r.f64(), r.f64()];
    r.u8(); r.u8(); r.u8(); // rgb
    r.f64(); // reprojection error
    const trackLen = r.u64();
    for (let j = 0; j < trackLen; j++) { r.u32(); r.u32(); }
    points.set(id, xyz);
  }
  return points;
}

export function readColmapModel(modelDir: string): ColmapModel {
  if (existsSync(join(modelDir, 'cameras.txt'))) {
    return {
      cameras: parseCamerasText(join(modelDir, 'cameras.txt')),
      images: parseImagesText(join(modelDir, 'images.txt')),
      points3d: parsePoints3dText(join(modelDir, 'points3D.txt')),
    };
  }
  if (existsSync(join(modelDir, 'cameras.bin'))) {
    return {
      cameras: parseCamerasBinary(join(modelDir, 'cameras.bin')),
      images: parseImagesBinary(join(modelDir, 'images.bin')),
      points3d: parsePoints3dBinary(join(modelDir, 'points3D.bin')),
    };
  }
  throw new Error(`${modelDir}: no cameras.txt or cameras.bin found`);
}

// --- conversion ---------------------------------------------------------------

/** COLMAP pixel centers sit at half-integers; the engine's at integers. */
const PIXEL_SHIFT = 0.5;

export function colmapCameraToView(cam: ColmapCamera, image: ColmapImage): CameraView {
  let fx: number, fy: number, cx: number, cy: number;
  if (cam.model === 'PINHOLE') {
    [fx, fy, cx, cy] = cam.params;
  } else if (cam.model === 'SIMPLE_PINHOLE') {
    [fx, cx, cy] = cam.params;
    fy = fx;
  } else {
    throw new Error(
      `unsupported camera model ${cam.model} (camera ${cam.cameraId}); only PINHOLE and SIMPLE_PINHOLE convert exactly`,
    );
  }
  return {
    image: image.name,
    width: cam.width,
    height: cam.height,
    intrinsics: { fx, fy, cx: cx - PIXEL_SHIFT, cy: cy - PIXEL_SHIFT, skew: 0 },
    extrinsics: { R: quaternionToRotation(image.qvec), t: image.tvec },
  };
}

export function rasterizeSparsePmap(
  model: ColmapModel,
  image: ColmapImage,
  view: CameraView,
): PmapGrid {
  const { width, height } = view;
  const data = new Float32Array(width * height * 3).fill(NaN);
  const depth = new Float64Array(width * height).fill(Infinity);
  for (const [x, y, pointId] of image.points2d) {
    if (pointId < 0) continue;
    const xyz = model.points3d.get(pointId);
    if (!xyz) continue;
    const u = x - PIXEL_SHIFT;
    const v = y - PIXEL_SHIFT;
    const px = Math.floor(u + 0.5);
    const py = Math.floor(v + 0.5);
    if (px < 0 || px >= width || py < 0 || py >= height) continue;
    const z = applyExtrinsics(view.extrinsics, xyz)[2];
    if (!(z > 1e-6)) continue;
    const cell = py * width + px;
    if (z < depth[cell]) {
      depth[cell] = z;
      data[3 * cell] = xyz[0];
      data[3 * cell + 1] = xyz[1];
      data[3 * cell + 2] = xyz[2];
    }
  }
  return { width, height, channels: 3, data };
}

export interface ColmapExportResult {
  files: string[];
  audits: AuditResult[];
}

function pmapName(index: number): string {
  return index === 0 ? 'ref.pmap' : index === 1 ? 'tgt.pmap' : `view${index}.pmap`;
}

export function exportFromColmap(
  modelDir: string,
  imagesDir: string | null,
  outDir: string,
  auditTolerancePx = 2.0,
  auditMinFraction = 0.9,
): ColmapExportResult {
  const model = readColmapModel(modelDir);
  const images = [...model.images].sort((a, b) => a.imageId - b.imageId);
  if (images.length === 0) {
    throw new Error(`${modelDir}: model holds no images`);
  }
  const views: CameraView[] = [];
  const grids: PmapGrid[] = [];
  const audits: AuditResult[] = [];
  for (const image of images) {
    const cam = model.cameras.get(image.cameraId);
    if (!cam) {
      throw new Error(`image ${image.name} references missing camera ${image.cameraId}`);
    }
    const view = colmapCameraToView(cam, image);
    const grid = rasterizeSparsePmap(model, image, view);
    const audit = auditSelfReprojection(grid, view, auditTolerancePx, auditMinFraction);
    if (!audit.pass) {
      throw new Error(
        `convention audit failed for ${image.name}: ` +
        `${(100 * audit.fraction).toFixed(1)}% of ${audit.valid} points within tolerance; no files emitted`,
      );
    }
    views.push(view);
    grids.push(grid);
    audits.push(audit);
  }
  mkdirSync(outDir, { recursive: true });
  const files: string[] = [];
  grids.forEach((grid, i) => {
    const path = join(outDir, pmapName(i));
    writePmap(path, grid);
    files.push(path);
  });
  const camerasPath = join(outDir, 'cameras.json');
  writeCameras(camerasPath, views);
  files.push(camerasPath);
  if (imagesDir) {
    for (const view of views) {
      const src = join(imagesDir, view.image);
      if (existsSync(src)) {
        const dst = join(outDir, basename(view.image));
        copyFileSync(src, dst);
        files.push(dst);
      }
    }
  }
  return { files, audits };
}
