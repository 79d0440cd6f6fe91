/**
 * Toy COLMAP model with hand-computed expectations.
 *
 * Camera: PINHOLE 64x48, fx=fy=100, COLMAP principal point (32.5, 24.5),
 * which is the exact image center in COLMAP's half-integer convention and
 * becomes (32, 24) in the engine's pixel-center convention.
 *
 * View 1 at the origin, view 2 translated by t=(-1,0,0) (world-to-camera).
 * Points and their engine-convention projections:
 *   P1 (0, 0, 5):        view1 (32, 24),    view2 (12, 24)
 *   P2 (1, 0.5, 4):      view1 (57, 36.5),  view2 (32, 36.5)
 *   P3 (-0.5, -0.25, 2): view1 (7, 11.5),   view2 u=-43 (outside)
 * COLMAP observation coordinates are those plus 0.5 on each axis.
 */

import assert from 'node:assert/strict';
import { test } from 'node:test';
import { mkdirSync, mkdtempSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { exportFromColmap, readColmapModel } from '../src/colmap.js';
import { readCameras } from '../src/cameras.js';
import { applyExtrinsics, projectPinhole } from '../src/geometry.js';
import { readPmap } from '../src/pmap.js';

const CAMERAS_TXT = '# cameras\n1 PINHOLE 64 48 100 100 32.5 24.5\n';
const IMAGES_TXT = [
  '# images',
  '1 1 0 0 0 0 0 0 1 view_a.png',
  '32.5 24.5 1 57.5 37 2 7.5 12 3',
  '2 1 0 0 0 -1 0 0 1 view_b.png',
  '12.5 24.5 1 32.5 37 2 5 5 -1',
  '',
].join('\n');
const POINTS_TXT = [
  '# points',
  '1 0 0 5 255 0 0 0.0 1 0 2 0',
  '2 1 0.5 4 0 255 0 0.0 1 1 2 1',
  '3 -0.5 -0.25 2 0 0 255 0.0 1 2',
  '',
].join('\n');

function writeToyTextModel(): string {
  const dir = mkdtempSync(join(tmpdir(), 'colmap-txt-'));
  writeFileSync(join(dir, 'cameras.txt'), CAMERAS_TXT);
  writeFileSync(join(dir, 'images.txt'), IMAGES_TXT);
  writeFileSync(join(dir, 'points3D.txt'), POINTS_TXT);
  return dir;
}

function writeToyBinaryModel(): string {
  const dir = mkdtempSync(join(tmpdir(), 'colmap-bin-'));

  // cameras.bin: one PINHOLE camera.
  const cam = Buffer.alloc(8 + 4 + 4 + 8 + 8 + 4 * 8);
  let off = 0;
  cam.writeBigUInt64LE(1n, off); off += 8;
  cam.writeUInt32LE(1, off); off += 4; // camera id
  cam.writeInt32LE(1, off); off += 4; // PINHOLE
  cam.writeBigUInt64LE(64n, off); off += 8;
  cam.writeBigUInt64LE(48n, off); off += 8;
  for (const p of [100, 100, 32.5, 24.5]) {
    cam.writeDoubleLE(p, off); off += 8;
  }
  writeFileSync(join(dir, 'cameras.bin'), cam);

  const imageRecord = (
    id: number, q: number[], t: number[], name: string,
    obs: Array<[number, number, number]>,
  ): Buffer => {
    const head = Buffer.alloc(4 + 7 * 8 + 4);
    let o = 0;
    head.writeUInt32LE(id, o); o += 4;
    for (const v of [...q, ...t]) {
      head.writeDoubleLE(v, o); o += 8;
    }
    head.writeUInt32LE(1, o); // camera id
    const nameBuf = Buffer.from(name + '\0', 'utf-8');
    const obsBuf = Buffer.alloc(8 + obs.length * (8 + 8 + 8));
    obsBuf.writeBigUInt64LE(BigInt(obs.length), 0);
    let p = 8;
    for (const [x, y, pid] of obs) {
      obsBuf.writeDoubleLE(x, p); p += 8;
      obsBuf.writeDoubleLE(y, p); p += 8;
      obsBuf.writeBigInt64LE(BigInt(pid), p); p += 8;
    }
    return Buffer.concat([head, nameBuf, obsBuf]);
  };
  const imgCount = Buffer.alloc(8);
  imgCount.writeBigUInt64LE(2n);
  writeFileSync(join(dir, 'images.bin'), Buffer.concat([
    imgCount,
    imageRecord(1, [1, 0, 0, 0], [0, 0, 0], 'view_a.png',
      [[32.5, 24.5, 1], [57.5, 37, 2], [7.5, 12, 3]]),
    imageRecord(2, [1, 0, 0, 0], [-1, 0, 0], 'view_b.png',
      [[12.5, 24.5, 1], [32.5, 37, 2], [5, 5, -1]]),
  ]));

  const pointRecord = (id: number, xyz: number[], track: Array<[number, number]>): Buffer => {
    const buf = Buffer.alloc(8 + 3 * 8 + 3 + 8 + 8 + track.length * 8);
    let o = 0;
    buf.writeBigUInt64LE(BigInt(id), o); o += 8;
    for (const v of xyz) {
      buf.writeDoubleLE(v, o); o += 8;
    }
    buf.writeUInt8(128, o++); buf.writeUInt8(128, o++); buf.writeUInt8(128, o++);
    buf.writeDoubleLE(0.0, o); o += 8;
    buf.writeBigUInt64LE(BigInt(track.length), o); o += 8;
    for (const [img, idx] of track) {
      buf.writeUInt32LE(img, o); o += 4;
      buf.writeUInt32LE(idx, o); o += 4;
    }
    return buf;
  };
  const ptCount = Buffer.alloc(8);
  ptCount.writeBigUInt64LE(3n);
  writeFileSync(join(dir, 'points3D.bin'), Buffer.concat([
    ptCount,
    pointRecord(1, [0, 0, 5], [[1, 0], [2, 0]]),
    pointRecord(2, [1, 0.5, 4], [[1, 1], [2, 1]]),
    pointRecord(3, [-0.5, -0.25, 2], [[1, 2]]),
  ]));
  return dir;
}

function cell(grid: ReturnType<typeof readPmap>, row: number, col: number): number[] {
  const base = (row * grid.width + col) * 3;
  return [grid.data[base], grid.data[base + 1], grid.data[base + 2]];
}

test('toy text model converts with exact intrinsics and pose', () => {
  const out = mkdtempSync(join(tmpdir(), 'colmap-out-'));
  exportFromColmap(writeToyTextModel(), null, out);
  const cams = readCameras(join(out, 'cameras.json'));
  assert.equal(cams.length, 2);
  assert.equal(cams[0].intrinsics.fx, 100);
  assert.equal(cams[0].intrinsics.cx, 32.0); // half-pixel shift applied
  assert.equal(cams[0].intrinsics.cy, 24.0);
  assert.deepEqual(cams[0].extrinsics.t, [0, 0, 0]);
  assert.deepEqual(cams[1].extrinsics.t, [-1, 0, 0]);
  assert.deepEqual(cams[0].extrinsics.R, [1, 0, 0, 0, 1, 0, 0, 0, 1]);
});

test('sparse pmaps hold points exactly at observed pixels', () => {
  const out = mkdtempSync(join(tmpdir(), 'colmap-out-'));
  exportFromColmap(writeToyTextModel(), null, out);
  const ref = readPmap(join(out, 'ref.pmap'));
  const validRef = [...ref.data].filter((v, i) => i % 3 === 0 && Number.isFinite(v)).length;
  assert.equal(validRef, 3);
  assert.deepEqual(cell(ref, 24, 32).map(Number), [0, 0, 5]);
  assert.deepEqual(cell(ref, 37, 57).map(Number), [1, 0.5, 4]);
  assert.deepEqual(cell(ref, 12, 7).map(Number), [-0.5, -0.25, 2]);

  const tgt = readPmap(join(out, 'tgt.pmap'));
  const validTgt = [...tgt.data].filter((v, i) => i % 3 === 0 && Number.isFinite(v)).length;
  assert.equal(validTgt, 2); // P3 projects outside; the -1 observation is dropped
  assert.deepEqual(cell(tgt, 24, 12).map(Number), [0, 0, 5]);
  assert.deepEqual(cell(tgt, 37, 32).map(Number), [1, 0.5, 4]);
});

test('stored points reproject onto hand-computed pixels within 1e-6', () => {
  const out = mkdtempSync(join(tmpdir(), 'colmap-out-'));
  exportFromColmap(writeToyTextModel(), null, out);
  const cams = readCameras(join(out, 'cameras.json'));
  const expected: Array<[number[], number, [number, number]]> = [
    [[0, 0, 5], 0, [32, 24]],
    [[1, 0.5, 4], 0, [57, 36.5]],
    [[-0.5, -0.25, 2], 0, [7, 11.5]],
    [[0, 0, 5], 1, [12, 24]],
    [[1, 0.5, 4], 1, [32, 36.5]],
  ];
  for (const [xyz, viewIdx, [u, v]] of expected) {
    const cam = cams[viewIdx];
    const proj = projectPinhole(cam.intrinsics, applyExtrinsics(cam.extrinsics, xyz as [number, number, number]));
    assert.ok(proj, 'point must be in front of the camera');
    assert.ok(Math.abs(proj![0] - u) < 1e-6, `u ${proj![0]} vs ${u}`);
    assert.ok(Math.abs(proj![1] - v) < 1e-6, `v ${proj![1]} vs ${v}`);
  }
});

test('binary model parses identically to the text model', () => {
  const text = readColmapModel(writeToyTextModel());
  const bin = readColmapModel(writeToyBinaryModel());
  assert.deepEqual(bin.cameras.get(1), text.cameras.get(1));
  assert.deepEqual(bin.points3d, text.points3d);
  assert.equal(bin.images.length, text.images.length);
  for (let i = 0; i < bin.images.length; i++) {
    assert.deepEqual(bin.images[i], text.images[i]);
  }
});

test('unsupported camera model errors by name', () => {
  const dir = mkdtempSync(join(tmpdir(), 'colmap-bad-'));
  writeFileSync(join(dir, 'cameras.txt'), '1 RADIAL 64 48 100 32.5 24.5 0.01 0.001\n');
  writeFileSync(join(dir, 'images.txt'), '1 1 0 0 0 0 0 0 1 a.png\n32.5 24.5 1\n');
  writeFileSync(join(dir, 'points3D.txt'), '1 0 0 5 0 0 0 0.0 1 0\n');
  assert.throws(
    () => exportFromColmap(dir, null, mkdtempSync(join(tmpdir(), 'colmap-out-'))),
    /RADIAL/,
  );
});

test('image without observations parses (blank second line)', () => {
  const dir = mkdtempSync(join(tmpdir(), 'colmap-empty-'));
  writeFileSync(join(dir, 'cameras.txt'), CAMERAS_TXT);
  writeFileSync(join(dir, 'images.txt'), '1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 0 0 -1 0 0 1 b.png\n12.5 24.5 1\n');
  writeFileSync(join(dir, 'points3D.txt'), '1 0 0 5 0 0 0 0.0 2 0\n');
  const model = readColmapModel(dir);
  assert.equal(model.images.length, 2);
  assert.equal(model.images[0].points2d.length, 0);
  assert.equal(model.images[1].points2d.length, 1);
});
