/**
 * Feed-forward reconstruction backend adapter.
 *
 * The backend is a pluggable command invoked as
 *   <command> --images <img0> <img1> ... --device <device> --out <rawDir>
 * and must leave a raw-prediction dump in <rawDir>:
 *
 *   predictions.json  { "views": [ { "image", "width", "height",
 *                       "camera_encoding": [9 numbers],
 *                       "pointmap": "<file>.grid",
 *                       "confidence": "<file>.conf" | null } ] }
 *   *.grid            headerless float32 LE, H*W*3 row-major world XYZ
 *   *.conf            headerless float32 LE, H*W per-point confidence
 *
 * Camera encoding (9 numbers): [qw, qx, qy, qz, tx, ty, tz, thx, thy]
 * where (qw..qz) is the world-to-camera rotation quaternion, (tx..tz) the
 * world-to-camera translation, and thx/thy the tangent half-FOVs, i.e.
 * fx = width / (2*thx), fy = height / (2*thy), principal point at the
 * image center ((W-1)/2, (H-1)/2), zero skew.
 *
 * No confidence threshold is applied by default (every predicted point is
 * kept); pass minConfidence to experiment. A self-reprojection audit must
 * pass before any engine file is emitted.
 */

import { spawnSync } from 'node:child_process';
import { existsSync, mkdirSync, mkdtempSync, readFileSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { basename, join, resolve } from 'node:path';

import { AuditResult, auditSelfReprojection } from './audit.js';
import { writeCameras } from './cameras.js';
import { CameraView, quaternionToRotation } from './geometry.js';
import { PmapGrid, writePmap } from './pmap.js';

export interface RawView {
  image: string;
  width: number;
  height: number;
  encoding: number[];
  grid: Float32Array;
  confidence: Float32Array | null;
}

export interface ModelExportOptions {
  backendCommand: string;
  device?: string;
  minConfidence?: number | null;
  auditTolerancePx?: number;
  auditMinFraction?: number;
}

export interface ModelExportResult {
  files: string[];
  audits: AuditResult[];
}

export function decodeCameraEncoding(
  encoding: number[],
  image: string,
  width: number,
  height: number,
): CameraView {
  if (encoding.length !== 9) {
    throw new Error(`${image}: camera encoding must hold 9 numbers, got ${encoding.length}`);
  }
  const [qw, qx, qy, qz, tx, ty, tz, thx, thy] = encoding;
  if (!(thx > 0) || !(thy > 0)) {
    throw new Error(`${image}: tangent half-FOVs must be positive (got ${thx}, ${thy})`);
  }
  return {
    image,
    width,
    height,
    intrinsics: {
      fx: width / (2 * thx),
      fy: height / (2 * thy),
      cx: (width - 1) / 2,
      cy: (height - 1) / 2,
      skew: 0,
    },
    extrinsics: { R: quaternionToRotation([qw, qx, qy, qz]), t: [tx, ty, tz] },
  };
}

function readRawFloat32(path: string, expected: number): Float32Array {
  const buf = readFileSync(path);
  if (buf.length !== expected * 4) {
    throw new Error(`${path}: expected ${expected * 4} bytes, got ${buf.length}`);
  }
  const out = new Float32Array(expected);
  new Uint8Array(out.buffer).set(buf);
  return out;
}

export function loadRawDump(rawDir: string): RawView[] {
  const manifestPath = join(rawDir, 'predictions.json');
  if (!existsSync(manifestPath)) {
    throw new Error(`backend produced no predictions.json in ${rawDir}`);
  }
  const manifest = JSON.parse(readFileSync(manifestPath, 'utf-8'));
  if (!Array.isArray(manifest.views) || manifest.views.length < 2) {
    throw new Error('predictions.json must list at least two views');
  }
  return manifest.views.map((v: any) => {
    const width = Number(v.width);
    const height = Number(v.height);
    const grid = readRawFloat32(join(rawDir, String(v.pointmap)), width * height * 3);
    const confidence = v.confidence
      ? readRawFloat32(join(rawDir, String(v.confidence)), width * height)
      : null;
    return { image: String(v.image), width, height, encoding: v.camera_encoding.map(Number), grid, confidence };
  });
}

export function applyConfidenceFilter(
  grid: Float32Array,
  confidence: Float32Array | null,
  minConfidence: number | null | undefined,
): Float32Array {
  if (minConfidence == null || confidence === null) {
    return grid; // keep every predicted point
  }
  const out = grid.slice();
  for (let i = 0; i < confidence.length; i++) {
    if (!(confidence[i] >= minConfidence)) {
      out[3 * i] = NaN;
      out[3 * i + 1] = NaN;
      out[3 * i + 2] = NaN;
    }
  }
  return out;
}

function pmapName(index: number): string {
  return index === 0 ? 'ref.pmap' : index === 1 ? 'tgt.pmap' : `view${index}.pmap`;
}

export function runBackend(command: string, images: string[], device: string, rawDir: string): void {
  const [cmd, ...baseArgs] = command.split(/\s+/).filter(Boolean);
  const args = [...baseArgs, '--images', ...images.map(p => resolve(p)), '--device', device, '--out', rawDir];
  const proc = spawnSync(cmd, args, { encoding: 'utf-8' });
  if (proc.error) {
    throw new Error(`backend failed to start: ${proc.error.message}`);
  }
  if (proc.status !== 0) {
    throw new Error(`backend exited with ${proc.status}: ${(proc.stderr || proc.stdout || '').trim()}`);
  }
}

export function exportFromModel(
  images: string[],
  outDir: string,
  opts: ModelExportOptions,
): ModelExportResult {
  if (images.length < 2) {
    throw new Error(`need at least two images, got ${images.length}`);
  }
  const rawDir = mkdtempSync(join(tmpdir(), 'backend-raw-'));
  try {
    runBackend(opts.backendCommand, images, opts.device ?? 'cpu', rawDir);
    const raws = loadRawDump(rawDir);
    const views: CameraView[] = [];
    const grids: PmapGrid[] = [];
    const audits: AuditResult[] = [];
    for (const raw of raws) {
      const view = decodeCameraEncoding(raw.encoding, basename(raw.image), raw.width, raw.height);
      const data = applyConfidenceFilter(raw.grid, raw.confidence, opts.minConfidence);
      const grid: PmapGrid = { width: raw.width, height: raw.height, channels: 3, data };
      const audit = auditSelfReprojection(
        grid, view, opts.auditTolerancePx ?? 2.0, opts.auditMinFraction ?? 0.9,
      );
      if (!audit.pass) {
        throw new Error(
          `convention audit failed for ${view.image}: ` +
          `${(100 * audit.fraction).toFixed(1)}% of ${audit.valid} points within tolerance ` +
          `(max error ${audit.maxError.toFixed(2)} px); no files emitted`,
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
    return { files, audits };
  } finally {
    rmSync(rawDir, { recursive: true, force: true });
  }
}
