/**
 * Minimal safetensors reader: u64 little-endian header length, UTF-8 JSON
 * header mapping tensor names to {dtype, shape, data_offsets}, then the raw
 * data region. Only the dtypes a float32 toolkit can absorb are accepted.
 */

import { readFileSync } from 'node:fs';

export interface SourceTensor {
  name: string;
  dtype: string; // safetensors dtype tag, e.g. F32, F64
  shape: number[];
  /** values cast to float32 (nearest representable) */
  values: Float32Array;
}

const SUPPORTED = new Set(['F32', 'F64']);

export class SafetensorsError extends Error {}

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

function product(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function parseSafetensors(path: string): SourceTensor[] {
  const raw = readFileSync(path);
  if (raw.length < 8) {
    throw new SafetensorsError(`${path}: file too short for a header length`);
  }
  const headerLen = Number(raw.readBigUInt64LE(0));
  if (8 + headerLen > raw.length) {
    throw new SafetensorsError(`${path}: header length ${headerLen} exceeds file size`);
  }
  let header: Record<string, HeaderEntry>;
  try {
    header = JSON.parse(raw.subarray(8, 8 + headerLen).toString('utf-8'));
  } catch (e) {
    throw new SafetensorsError(`${path}: header is not valid JSON: ${e}`);
  }
  const data = raw.subarray(8 + headerLen);
  const tensors: SourceTensor[] = [];
  for (const [name, entry] of Object.entries(header)) {
    if (name === '__metadata__') continue;
    const { dtype, shape, data_offsets: offsets } = entry;
    if (!SUPPORTED.has(dtype)) {
      throw new SafetensorsError(
        `${path}: tensor ${name} has unsupported dtype ${dtype} (supported: F32, F64)`,
      );
    }
    const count = product(shape);
    const [begin, end] = offsets;
    const bytesPer = dtype === 'F64' ? 8 : 4;
    if (end - begin !== count * bytesPer) {
      throw new SafetensorsError(
        `${path}: tensor ${name} claims ${end - begin} bytes for shape [${shape}]`,
      );
    }
    if (end > data.length) {
      throw new SafetensorsError(`${path}: tensor ${name} extends past end of file`);
    }
    const slice = data.subarray(begin, end);
    let values: Float32Array;
    if (dtype === 'F32') {
      values = new Float32Array(count);
      for (let i = 0; i < count; i++) values[i] = slice.readFloatLE(i * 4);
    } else {
      values = new Float32Array(count);
      for (let i = 0; i < count; i++) {
        // Math.fround rounds to the nearest representable float32
        values[i] = Math.fround(slice.readDoubleLE(i * 8));
      }
    }
    tensors.push({ name, dtype, shape, values });
  }
  return tensors;
}
