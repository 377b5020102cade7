"""Bit-exact reader/writer for the named-tensor archive format.

Layout: bytes 0-7 hold a little-endian u64 header length L; the next L bytes
are a UTF-8 JSON object mapping each tensor name to
``{"dtype": "f32", "shape": [...], "offsets": [begin, end]}`` with offsets
relative to the data region; the rest of the file is raw little-endian f32
data, row-major. Tensors are laid out in lexicographic name order and the
header keys are serialized in that same order, so identical tensor maps
always produce identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

__all__ = [
    "ArchiveError",
    "TruncatedArchiveError",
    "HeaderLengthError",
    "MalformedHeaderError",
    "OverlappingOffsetsError",
    "ShapeMismatchError",
    "TensorEntry",
    "write_archive",
    "read_archive",
    "read_index",
]


class ArchiveError(Exception):
    """Base class for archive format violations."""


class TruncatedArchiveError(ArchiveError):
    """File ends before the declared content does."""


class HeaderLengthError(ArchiveError):
    """The u64 header length does not fit inside the file."""


class MalformedHeaderError(ArchiveError):
    """Header is not the JSON object the format requires."""


class OverlappingOffsetsError(ArchiveError):
    """Entries overlap, leave gaps, or are out of order."""


class ShapeMismatchError(ArchiveError):
    """Entry byte length disagrees with its shape."""


class TensorEntry:
    __slots__ = ("name", "shape", "begin", "end")

    def __init__(self, name, shape, begin, end):
        self.name = name
        self.shape = tuple(shape)
        self.begin = begin
        self.end = end

    def __repr__(self):
        return f"TensorEntry({self.name!r}, shape={self.shape}, bytes=[{self.begin},{self.end}))"


def _as_f32(name, value):
    data = value.data if hasattr(value, "data") else value
    arr = np.asarray(data)
    if arr.dtype != np.float32:
        raise ValueError(f"tensor {name!r} must be float32, got {arr.dtype}")
    if arr.ndim == 0:
        raise ValueError(f"tensor {name!r} must have at least one dimension")
    if any(d <= 0 for d in arr.shape):
        raise ValueError(f"tensor {name!r} has a non-positive dimension: {arr.shape}")
    return np.ascontiguousarray(arr)


def write_archive(tensors, path):
    """Write a name->tensor mapping; accepts numpy arrays or Tensor objects."""
    if not tensors:
        raise ValueError("archives must be non-empty")
    arrays = {}
    for name in tensors:
        if not isinstance(name, str) or not name:
            raise ValueError(f"invalid tensor name {name!r}")
        arrays[name] = _as_f32(name, tensors[name])

    header = {}
    offset = 0
    order = sorted(arrays)
    for name in order:
        arr = arrays[name]
        nbytes = 4 * arr.size
        header[name] = {
            "dtype": "f32",
            "shape": list(arr.shape),
            "offsets": [offset, offset + nbytes],
        }
        offset += nbytes
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in order:
            f.write(arrays[name].astype("<f4", copy=False).tobytes())


def _parse_header(blob):
    def reject_duplicates(pairs):
        d = {}
        for k, v in pairs:
            if k in d:
                raise MalformedHeaderError(f"duplicate tensor name {k!r}")
            d[k] = v
        return d

    try:
        header = json.loads(blob.decode("utf-8"), object_pairs_hook=reject_duplicates)
    except MalformedHeaderError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedHeaderError(f"header is not valid JSON: {e}") from None
    if not isinstance(header, dict) or not header:
        raise MalformedHeaderError("header must be a non-empty JSON object")

    entries = []
    for name, meta in header.items():
        if not isinstance(name, str) or not name:
            raise MalformedHeaderError(f"invalid tensor name {name!r}")
        if not isinstance(meta, dict) or set(meta) != {"dtype", "shape", "offsets"}:
            raise MalformedHeaderError(f"entry {name!r} must have dtype/shape/offsets")
        if meta["dtype"] != "f32":
            raise MalformedHeaderError(f"entry {name!r} has unsupported dtype {meta['dtype']!r}")
        shape = meta["shape"]
        if (
            not isinstance(shape, list)
            or not shape
            or not all(isinstance(d, int) and d > 0 for d in shape)
        ):
            raise MalformedHeaderError(f"entry {name!r} has invalid shape {shape!r}")
        offs = meta["offsets"]
        if (
            not isinstance(offs, list)
            or len(offs) != 2
            or not all(isinstance(o, int) and o >= 0 for o in offs)
            or offs[0] >= offs[1]
        ):
            raise MalformedHeaderError(f"entry {name!r} has invalid offsets {offs!r}")
        entries.append(TensorEntry(name, shape, offs[0], offs[1]))
    return entries


def _validate_layout(entries, data_size):
    entries = sorted(entries, key=lambda e: e.begin)
    pos = 0
    for e in entries:
        if e.begin < pos:
            raise OverlappingOffsetsError(
                f"entry {e.name!r} begins at {e.begin}, overlapping byte {pos}"
            )
        if e.begin > pos:
            raise OverlappingOffsetsError(
                f"gap before entry {e.name!r}: bytes {pos}..{e.begin} unclaimed"
            )
        expected = 4 * int(np.prod(e.shape))
        if e.end - e.begin != expected:
            raise ShapeMismatchError(
                f"entry {e.name!r}: {e.end - e.begin} bytes for shape {e.shape}"
                f" (expected {expected})"
            )
        pos = e.end
    if pos > data_size:
        raise TruncatedArchiveError(
            f"data region has {data_size} bytes but entries claim {pos}"
        )
    if pos < data_size:
        raise MalformedHeaderError(
            f"data region has {data_size - pos} trailing bytes beyond declared entries"
        )
    return entries


def read_index(path):
    """Parse and validate the header only; returns name -> TensorEntry."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise TruncatedArchiveError(f"file is {len(raw)} bytes; header length needs 8")
    (hlen,) = struct.unpack("<Q", raw[:8])
    if 8 + hlen > len(raw):
        raise HeaderLengthError(
            f"declared header length {hlen} exceeds file size {len(raw)}"
        )
    entries = _parse_header(raw[8 : 8 + hlen])
    _validate_layout(entries, len(raw) - 8 - hlen)
    return {e.name: e for e in entries}, raw[8 + hlen :]


def read_archive(path):
    """Read a full archive into a name -> float32 ndarray dict."""
    index, data = read_index(path)
    out = {}
    for name in sorted(index):
        e = index[name]
        arr = np.frombuffer(data[e.begin : e.end], dtype="<f4").reshape(e.shape)
        out[name] = arr.astype(np.float32)  # copy, native order, writable
    return out
