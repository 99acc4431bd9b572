/**
 * Binary tensor file codec (`.chpt`), byte-compatible with the Python side.
 *
 * Layout, all little-endian:
 *   magic   4 bytes  "CHPT"
 *   version u32      1
 *   H, W, D u32 each
 *   payload H*W*D IEEE-754 binary32, row-major (H, then W, then D)
 */

import { readFileSync, writeFileSync } from "node:fs";

export const TENSOR_MAGIC = "CHPT";
export const TENSOR_VERSION = 1;
const HEADER_BYTES = 20;

export interface Tensor3 {
  h: number;
  w: number;
  d: number;
  /** row-major (h, w, d) values */
  values: Float32Array;
}

export function encodeTensor(t: Tensor3): Buffer {
  if (t.h < 1 || t.w < 1 || t.d < 1) {
    throw new Error(`tensor dims must all be >= 1, got ${t.h}x${t.w}x${t.d}`);
  }
  if (t.values.length !== t.h * t.w * t.d) {
    throw new Error(
      `payload length ${t.values.length} != ${t.h}*${t.w}*${t.d}`,
    );
  }
  for (const v of t.values) {
    if (!Number.isFinite(v)) throw new Error("payload contains non-finite values");
  }
  const buf = Buffer.alloc(HEADER_BYTES + 4 * t.values.length);
  buf.write(TENSOR_MAGIC, 0, "ascii");
  buf.writeUInt32LE(TENSOR_VERSION, 4);
  buf.writeUInt32LE(t.h, 8);
  buf.writeUInt32LE(t.w, 12);
  buf.writeUInt32LE(t.d, 16);
  for (let i = 0; i < t.values.length; i++) {
    buf.writeFloatLE(t.values[i], HEADER_BYTES + 4 * i);
  }
  return buf;
}

export function writeTensorFile(t: Tensor3, path: string): void {
  writeFileSync(path, encodeTensor(t));
}

export function readTensorFile(path: string): Tensor3 {
  const buf = readFileSync(path);
  if (buf.length < HEADER_BYTES) throw new Error(`${path}: shorter than the header`);
  if (buf.toString("ascii", 0, 4) !== TENSOR_MAGIC) {
    throw new Error(`${path}: bad magic`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== TENSOR_VERSION) throw new Error(`${path}: unsupported version ${version}`);
  const h = buf.readUInt32LE(8);
  const w = buf.readUInt32LE(12);
  const d = buf.readUInt32LE(16);
  const expected = HEADER_BYTES + 4 * h * w * d;
  if (buf.length !== expected) {
    throw new Error(`${path}: size ${buf.length}, header promises ${expected}`);
  }
  const values = new Float32Array(h * w * d);
  for (let i = 0; i < values.length; i++) {
    values[i] = buf.readFloatLE(HEADER_BYTES + 4 * i);
  }
  return { h, w, d, values };
}
