#!/usr/bin/env python3
# The tensor archive format: a u64 header length, a JSON index, then raw
# little-endian f32 data in lexicographic name order. Identical tensor maps
# always produce identical bytes, which is what makes checkpoints diffable.

import struct
import tempfile
from pathlib import Path

import numpy as np

from reprime.archive import read_archive, write_archive

workdir = Path(tempfile.mkdtemp())
path = workdir / "demo.rpa"

tensors = {
    "block0.conv.weight": np.arange(12, dtype=np.float32).reshape(3, 1, 2, 2),
    "block0.bn.gamma": np.ones(3, dtype=np.float32),
    "a": np.array([1.0, 2.0], dtype=np.float32),
}
write_archive(tensors, path)

raw = path.read_bytes()
(header_len,) = struct.unpack("<Q", raw[:8])
print(f"file size {len(raw)} bytes, header {header_len} bytes")
print("header JSON:", raw[8 : 8 + header_len].decode())

# the data region starts with tensor "a" (lexicographically first):
# 1.0f = 00 00 80 3f, 2.0f = 00 00 00 40
print("first 8 data bytes:", raw[8 + header_len : 16 + header_len].hex())

back = read_archive(path)
print("round-trip exact:", all(np.array_equal(back[k], tensors[k]) for k in tensors))

# writing the same map in any key order produces identical bytes
other = workdir / "reordered.rpa"
write_archive(dict(reversed(list(tensors.items()))), other)
print("byte-deterministic:", other.read_bytes() == raw)
