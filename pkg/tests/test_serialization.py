import struct

import numpy as np
import pytest

from fdyconv import serialization
from fdyconv.errors import (
    BadMagicError,
    BadVersionError,
    ManifestError,
    TruncatedPayloadError,
)


def sample_arrays(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "conv.weight": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "conv.bias": rng.standard_normal(4).astype(np.float32),
        "bn.gamma": rng.standard_normal(8),
    }


class TestRoundTrip:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_bitwise_identity(self, tmp_path, dtype):
        path = tmp_path / "w.fdyw"
        arrays = {k: v.astype(dtype) for k, v in sample_arrays().items()}
        serialization.save_arrays(path, arrays)
        loaded = serialization.load_arrays(path)
        assert list(loaded) == list(arrays)
        for name in arrays:
            assert loaded[name].dtype == arrays[name].dtype
            assert np.array_equal(
                loaded[name].view(np.uint8), arrays[name].view(np.uint8)
            )

    def test_tensor_file_single_entry(self, tmp_path):
        path = tmp_path / "t.tf"
        arr = np.arange(12, dtype=np.float64).reshape(3, 4)
        serialization.save_tensor(path, arr)
        assert np.array_equal(serialization.load_tensor(path), arr)

    def test_tensor_file_rejects_multi_entry(self, tmp_path):
        path = tmp_path / "multi.fdyw"
        serialization.save_arrays(path, sample_arrays())
        with pytest.raises(ManifestError):
            serialization.load_tensor(path)


class TestErrors:
    def _save(self, tmp_path):
        path = tmp_path / "w.fdyw"
        serialization.save_arrays(path, sample_arrays())
        return path

    def test_bad_magic(self, tmp_path):
        path = self._save(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError):
            serialization.load_arrays(path)

    def test_bad_version(self, tmp_path):
        path = self._save(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(BadVersionError):
            serialization.load_arrays(path)

    def test_truncated_payload(self, tmp_path):
        path = self._save(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-1])
        with pytest.raises(TruncatedPayloadError):
            serialization.load_arrays(path)

    def test_edited_manifest_shape(self, tmp_path):
        path = self._save(tmp_path)
        blob = path.read_bytes()
        edited = blob.replace(b"conv.weight f32 4,3,3,3", b"conv.weight f32 4,3,3,9")
        assert edited != blob
        path.write_bytes(edited)
        with pytest.raises(TruncatedPayloadError):
            serialization.load_arrays(path)

    def test_unknown_dtype_in_manifest(self, tmp_path):
        path = self._save(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob.replace(b"bn.gamma f64", b"bn.gamma f99"))
        with pytest.raises(ManifestError):
            serialization.load_arrays(path)
