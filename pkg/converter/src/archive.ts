/**
 * Writer for the tensor-archive format consumed by the Python toolkit:
 * bytes 0-7 little-endian u64 header length, then a compact JSON object
 * mapping names to {dtype:"f32", shape, offsets:[begin,end]} with keys in
 * lexicographic order, then raw little-endian f32 data laid out in that
 * same order. Byte output is deterministic for identical inputs.
 */

export interface ArchiveTensor {
  name: string;
  shape: number[];
  values: Float32Array;
}

export class ArchiveWriteError extends Error {}

function product(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** Compare by Unicode code point, matching Python's str ordering. */
export function codePointCompare(a: string, b: string): number {
  const as = Array.from(a);
  const bs = Array.from(b);
  const n = Math.min(as.length, bs.length);
  for (let i = 0; i < n; i++) {
    const ca = as[i].codePointAt(0)!;
    const cb = bs[i].codePointAt(0)!;
    if (ca !== cb) return ca - cb;
  }
  return as.length - bs.length;
}

/** Serialize a JSON value with sorted keys and no whitespace, ASCII-escaped
 * beyond 0x7F, matching Python's json.dumps(sort_keys=True,
 * separators=(",", ":")) byte for byte. */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value === 'number' || typeof value === 'boolean') {
    return JSON.stringify(value);
  }
  if (typeof value === 'string') {
    let out = JSON.stringify(value);
    // escape non-ASCII the way Python's ensure_ascii does
    out = out.replace(/[-￿]/g, (ch) => {
      return '\\u' + ch.charCodeAt(0).toString(16).padStart(4, '0');
    });
    return out;
  }
  if (Array.isArray(value)) {
    return '[' + value.map(canonicalJson).join(',') + ']';
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort(codePointCompare);
  const body = keys.map((k) => `${canonicalJson(k)}:${canonicalJson(obj[k])}`);
  return '{' + body.join(',') + '}';
}

export function encodeArchive(tensors: ArchiveTensor[]): Buffer {
  if (tensors.length === 0) {
    throw new ArchiveWriteError('archives must be non-empty');
  }
  const seen = new Set<string>();
  for (const t of tensors) {
    if (!t.name) throw new ArchiveWriteError('tensor names must be non-empty');
    if (seen.has(t.name)) throw new ArchiveWriteError(`duplicate tensor name ${t.name}`);
    seen.add(t.name);
    if (t.shape.length === 0 || t.shape.some((d) => !Number.isInteger(d) || d <= 0)) {
      throw new ArchiveWriteError(`tensor ${t.name} has invalid shape [${t.shape}]`);
    }
    if (product(t.shape) !== t.values.length) {
      throw new ArchiveWriteError(
        `tensor ${t.name}: ${t.values.length} values for shape [${t.shape}]`,
      );
    }
  }

  const ordered = [...tensors].sort((a, b) => codePointCompare(a.name, b.name));
  const header: Record<string, unknown> = {};
  let offset = 0;
  for (const t of ordered) {
    const nbytes = 4 * t.values.length;
    header[t.name] = { dtype: 'f32', shape: t.shape, offsets: [offset, offset + nbytes] };
    offset += nbytes;
  }
  const headerBytes = Buffer.from(canonicalJson(header), 'utf-8');
  const out = Buffer.alloc(8 + headerBytes.length + offset);
  out.writeBigUInt64LE(BigInt(headerBytes.length), 0);
  headerBytes.copy(out, 8);
  let pos = 8 + headerBytes.length;
  for (const t of ordered) {
    for (let i = 0; i < t.values.length; i++) {
      out.writeFloatLE(t.values[i], pos);
      pos += 4;
    }
  }
  return out;
}
