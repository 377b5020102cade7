/**
 * Conversion pipeline: parse the source checkpoint, rename tensors through
 * the declarative map, cast everything to f32, emit the archive and a
 * manifest with per-tensor sha256 checksums over the f32 little-endian
 * bytes actually written.
 */

import { createHash } from 'node:crypto';
import { writeFileSync } from 'node:fs';

import { ArchiveTensor, codePointCompare, encodeArchive } from './archive.js';
import { NameMap, applyNameMap } from './namemap.js';
import { SourceTensor, parseSafetensors } from './safetensors.js';

export interface ManifestEntry {
  source_name: string;
  target_name: string;
  source_dtype: string;
  dtype: 'f32';
  shape: number[];
  checksum: string;
}

export interface Manifest {
  source: string;
  output: string;
  skipped: string[];
  tensors: ManifestEntry[];
}

export class ModelSpecError extends Error {}

function f32Bytes(values: Float32Array): Buffer {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) buf.writeFloatLE(values[i], i * 4);
  return buf;
}

export function checksumOf(values: Float32Array): string {
  return 'sha256:' + createHash('sha256').update(f32Bytes(values)).digest('hex');
}

/** Validate target names/shapes against the encoder naming convention. */
export function checkModelSpec(tensors: ArchiveTensor[], blocks: number[], inChannels = 3) {
  const byName = new Map(tensors.map((t) => [t.name, t]));
  let cin = inChannels;
  blocks.forEach((cout, i) => {
    const prefix = `block${i}.`;
    const conv = byName.get(`${prefix}conv.weight`);
    if (!conv) throw new ModelSpecError(`missing ${prefix}conv.weight for the supplied spec`);
    const expect = [cout, cin, 3, 3];
    if (conv.shape.join(',') !== expect.join(',')) {
      throw new ModelSpecError(
        `${prefix}conv.weight has shape [${conv.shape}], spec expects [${expect}]`,
      );
    }
    for (const part of ['gamma', 'beta', 'running_mean', 'running_var']) {
      const t = byName.get(`${prefix}bn.${part}`);
      if (!t) throw new ModelSpecError(`missing ${prefix}bn.${part} for the supplied spec`);
      if (t.shape.join(',') !== String(cout)) {
        throw new ModelSpecError(
          `${prefix}bn.${part} has shape [${t.shape}], spec expects [${cout}]`,
        );
      }
    }
    cin = cout;
  });
}

export interface ConvertOptions {
  sourcePath: string;
  outPath: string;
  map: NameMap;
  manifestPath?: string;
  expectBlocks?: number[];
}

export function convert(options: ConvertOptions): Manifest {
  const source: SourceTensor[] = parseSafetensors(options.sourcePath);
  const byName = new Map(source.map((t) => [t.name, t]));
  const { mappings, skipped } = applyNameMap(
    options.map,
    source.map((t) => t.name).sort(codePointCompare),
  );

  const tensors: ArchiveTensor[] = [];
  const entries: ManifestEntry[] = [];
  for (const { source: srcName, target } of mappings) {
    const t = byName.get(srcName)!;
    tensors.push({ name: target, shape: t.shape, values: t.values });
    entries.push({
      source_name: srcName,
      target_name: target,
      source_dtype: t.dtype,
      dtype: 'f32',
      shape: t.shape,
      checksum: checksumOf(t.values),
    });
  }
  if (options.expectBlocks) {
    checkModelSpec(tensors, options.expectBlocks);
  }
  writeFileSync(options.outPath, encodeArchive(tensors));
  entries.sort((a, b) => codePointCompare(a.target_name, b.target_name));
  const manifest: Manifest = {
    source: options.sourcePath,
    output: options.outPath,
    skipped,
    tensors: entries,
  };
  if (options.manifestPath) {
    writeFileSync(options.manifestPath, JSON.stringify(manifest, null, 2) + '\n');
  }
  return manifest;
}
