/**
 * Engine PMAP grid format (little-endian):
 *   "PMAP" | u32 version=1 | u32 width | u32 height | u32 channels |
 *   f32 * width*height*channels, row-major, channel-interleaved.
 * NaN marks invalid entries. Payload bytes round-trip bit-exact.
 */

import { readFileSync, renameSync, writeFileSync } from 'node:fs';
import { randomBytes } from 'node:crypto';

const MAGIC = Buffer.from('PMAP', 'ascii');
const VERSION = 1;
const HEADER_BYTES = 20;

export interface PmapGrid {
  width: number;
  height: number;
  channels: number;
  /** length = width * height * channels, row-major, channel-interleaved */
  data: Float32Array;
}

export function encodePmap(grid: PmapGrid): Buffer {
  const { width, height, channels, data } = grid;
  if (data.length !== width * height * channels) {
    throw new Error(
      `PMAP payload length ${data.length} != ${width}x${height}x${channels}`,
    );
  }
  const header = Buffer.alloc(HEADER_BYTES);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(width, 8);
  header.writeUInt32LE(height, 12);
  header.writeUInt32LE(channels, 16);
  // Copy via the byte view so NaN payload bits survive untouched.
  const body = Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  return Buffer.concat([header, body]);
}

export function decodePmap(buf: Buffer, source = 'pmap'): PmapGrid {
  if (buf.length < HEADER_BYTES) {
    throw new Error(`${source}: truncated header (${buf.length} bytes)`);
  }
  if (!buf.subarray(0, 4).equals(MAGIC)) {
    throw new Error(`${source}: bad magic ${buf.subarray(0, 4).toString('hex')}`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== VERSION) {
    throw new Error(`${source}: unsupported PMAP version ${version}`);
  }
  const width = buf.readUInt32LE(8);
  const height = buf.readUInt32LE(12);
  const channels = buf.readUInt32LE(16);
  const expected = HEADER_BYTES + 4 * width * height * channels;
  if (buf.length !== expected) {
    throw new Error(`${source}: expected ${expected} bytes for ${width}x${height}x${channels}, got ${buf.length}`);
  }
  const body = buf.subarray(HEADER_BYTES);
  const data = new Float32Array(width * height * channels);
  new Uint8Array(data.buffer).set(body);
  return { width, height, channels, data };
}

export function readPmap(path: string): PmapGrid {
  return decodePmap(readFileSync(path), path);
}

/** Write via a temp file + rename so consumers never see partial output. */
export function writeFileAtomic(path: string, payload: Buffer | string): void {
  const tmp = `${path}.tmp-${randomBytes(4).toString('hex')}`;
  writeFileSync(tmp, payload);
  renameSync(tmp, path);
}

export function writePmap(path: string, grid: PmapGrid): void {
  writeFileAtomic(path, encodePmap(grid));
}
