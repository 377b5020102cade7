import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reprime.archive import (
    ArchiveError,
    HeaderLengthError,
    MalformedHeaderError,
    OverlappingOffsetsError,
    ShapeMismatchError,
    TruncatedArchiveError,
    read_archive,
    read_index,
    write_archive,
)


def tensors_equal(a, b):
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


@pytest.fixture
def path(tmp_path):
    return tmp_path / "test.rpa"


def make_map(rng, n_tensors=4):
    out = {}
    for i in range(n_tensors):
        ndim = int(rng.integers(1, 4))
        shape = tuple(int(rng.integers(1, 5)) for _ in range(ndim))
        out[f"tensor_{i}"] = rng.normal(size=shape).astype(np.float32)
    return out


class TestWrite:
    def test_roundtrip(self, path, rng):
        tensors = make_map(rng)
        write_archive(tensors, path)
        assert tensors_equal(read_archive(path), tensors)

    def test_golden_two_float_bytes(self, path):
        write_archive({"a": np.array([1.0, 2.0], dtype=np.float32)}, path)
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<Q", raw[:8])
        data = raw[8 + hlen :]
        assert data == bytes.fromhex("0000803f00000040")
        header = json.loads(raw[8 : 8 + hlen])
        assert header == {"a": {"dtype": "f32", "shape": [2], "offsets": [0, 8]}}

    def test_empty_map_rejected(self, path):
        with pytest.raises(ValueError):
            write_archive({}, path)

    def test_non_f32_rejected(self, path):
        with pytest.raises(ValueError):
            write_archive({"a": np.zeros(3, dtype=np.float64)}, path)

    def test_bad_name_rejected(self, path):
        with pytest.raises(ValueError):
            write_archive({"": np.zeros(3, dtype=np.float32)}, path)

    def test_deterministic_bytes(self, path, tmp_path, rng):
        tensors = make_map(rng)
        other = tmp_path / "other.rpa"
        write_archive(tensors, path)
        write_archive(dict(reversed(list(tensors.items()))), other)
        assert path.read_bytes() == other.read_bytes()

    def test_lexicographic_layout(self, path):
        write_archive(
            {
                "b": np.ones(2, dtype=np.float32),
                "a": np.zeros(1, dtype=np.float32),
            },
            path,
        )
        index, _ = read_index(path)
        assert index["a"].begin == 0 and index["a"].end == 4
        assert index["b"].begin == 4 and index["b"].end == 12


class TestReadErrors:
    def test_under_8_bytes(self, path):
        path.write_bytes(b"\x01\x02\x03")
        with pytest.raises(TruncatedArchiveError):
            read_archive(path)

    def test_header_length_overflow(self, path):
        path.write_bytes(struct.pack("<Q", 10_000) + b"{}")
        with pytest.raises(HeaderLengthError):
            read_archive(path)

    def test_malformed_json(self, path):
        blob = b"this is not json"
        path.write_bytes(struct.pack("<Q", len(blob)) + blob)
        with pytest.raises(MalformedHeaderError):
            read_archive(path)

    def _write_custom(self, path, header, data):
        blob = json.dumps(header).encode()
        path.write_bytes(struct.pack("<Q", len(blob)) + blob + data)

    def test_overlapping_offsets(self, path):
        header = {
            "a": {"dtype": "f32", "shape": [2], "offsets": [0, 8]},
            "b": {"dtype": "f32", "shape": [2], "offsets": [4, 12]},
        }
        self._write_custom(path, header, b"\x00" * 12)
        with pytest.raises(OverlappingOffsetsError):
            read_archive(path)

    def test_gap_between_entries(self, path):
        header = {
            "a": {"dtype": "f32", "shape": [1], "offsets": [0, 4]},
            "b": {"dtype": "f32", "shape": [1], "offsets": [8, 12]},
        }
        self._write_custom(path, header, b"\x00" * 12)
        with pytest.raises(OverlappingOffsetsError):
            read_archive(path)

    def test_shape_length_mismatch(self, path):
        header = {"a": {"dtype": "f32", "shape": [3], "offsets": [0, 8]}}
        self._write_custom(path, header, b"\x00" * 8)
        with pytest.raises(ShapeMismatchError):
            read_archive(path)

    def test_truncated_data_region(self, path):
        header = {"a": {"dtype": "f32", "shape": [4], "offsets": [0, 16]}}
        self._write_custom(path, header, b"\x00" * 8)
        with pytest.raises(TruncatedArchiveError):
            read_archive(path)

    def test_trailing_bytes(self, path):
        header = {"a": {"dtype": "f32", "shape": [1], "offsets": [0, 4]}}
        self._write_custom(path, header, b"\x00" * 10)
        with pytest.raises(MalformedHeaderError):
            read_archive(path)

    def test_duplicate_names(self, path):
        blob = (
            b'{"a":{"dtype":"f32","shape":[1],"offsets":[0,4]},'
            b'"a":{"dtype":"f32","shape":[1],"offsets":[4,8]}}'
        )
        path.write_bytes(struct.pack("<Q", len(blob)) + blob + b"\x00" * 8)
        with pytest.raises(MalformedHeaderError):
            read_archive(path)

    def test_unknown_dtype(self, path):
        header = {"a": {"dtype": "f64", "shape": [1], "offsets": [0, 8]}}
        self._write_custom(path, header, b"\x00" * 8)
        with pytest.raises(MalformedHeaderError):
            read_archive(path)

    def test_all_error_kinds_are_archive_errors(self):
        for kind in (
            TruncatedArchiveError,
            HeaderLengthError,
            MalformedHeaderError,
            OverlappingOffsetsError,
            ShapeMismatchError,
        ):
            assert issubclass(kind, ArchiveError)


names = st.text(
    alphabet=st.characters(codec="utf-8", exclude_characters="\x00"),
    min_size=1,
    max_size=12,
)
shapes = st.lists(st.integers(1, 4), min_size=1, max_size=3)


@st.composite
def tensor_maps(draw):
    keys = draw(st.lists(names, min_size=1, max_size=5, unique=True))
    out = {}
    for i, k in enumerate(keys):
        shape = tuple(draw(shapes))
        seed = draw(st.integers(0, 2**31 - 1))
        out[k] = np.random.default_rng(seed).normal(size=shape).astype(np.float32)
    return out


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(tensor_maps())
    def test_roundtrip_bit_exact(self, tmp_path_factory, tensors):
        path = tmp_path_factory.mktemp("arch") / "prop.rpa"
        write_archive(tensors, path)
        back = read_archive(path)
        assert set(back) == set(tensors)
        for k in tensors:
            assert back[k].dtype == np.float32
            assert back[k].shape == tensors[k].shape
            assert np.array_equal(
                back[k].view(np.uint32), tensors[k].view(np.uint32)
            ), f"bit mismatch in {k!r}"
