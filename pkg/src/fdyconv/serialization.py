"""Bit-exact binary container for parameters and tensors.

Layout: magic "FDYW", format version (u32 LE), manifest byte length
(u64 LE), manifest text, then raw little-endian array payloads
concatenated in manifest order. The manifest is one line per entry:

    <name> <dtype> <d0,d1,...>

A TensorFile is the same container holding exactly one entry.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from typing import Dict

import numpy as np

from .errors import BadMagicError, BadVersionError, ManifestError, TruncatedPayloadError

MAGIC = b"FDYW"
VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def save_arrays(path, arrays: Dict[str, np.ndarray]) -> None:
    if len(set(arrays)) != len(arrays):
        raise ManifestError("duplicate entry names")
    lines = []
    payload = bytearray()
    for name, arr in arrays.items():
        if " " in name or "\n" in name:
            raise ManifestError(f"invalid entry name {name!r}")
        dt = np.dtype(arr.dtype)
        if dt not in _DTYPE_NAMES:
            raise ManifestError(f"unsupported dtype {dt} for {name}")
        shape = ",".join(str(s) for s in arr.shape) or "1"
        lines.append(f"{name} {_DTYPE_NAMES[dt]} {shape}")
        payload += np.ascontiguousarray(arr, dtype=dt.newbyteorder("<")).tobytes()
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        f.write(payload)


def load_arrays(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}")
    if len(blob) < 16:
        raise TruncatedPayloadError("header truncated")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise BadVersionError(f"unsupported format version {version}")
    (mlen,) = struct.unpack_from("<Q", blob, 8)
    if len(blob) < 16 + mlen:
        raise TruncatedPayloadError("manifest truncated")
    manifest = blob[16 : 16 + mlen].decode("utf-8")
    offset = 16 + mlen
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for lineno, line in enumerate(manifest.splitlines()):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ManifestError(f"malformed manifest line {lineno}: {line!r}")
        name, dtype_name, shape_txt = parts
        if name in out:
            raise ManifestError(f"duplicate entry {name!r}")
        if dtype_name not in _DTYPES:
            raise ManifestError(f"unknown dtype {dtype_name!r} for {name}")
        try:
            shape = tuple(int(s) for s in shape_txt.split(","))
        except ValueError as exc:
            raise ManifestError(f"bad shape {shape_txt!r} for {name}") from exc
        dt = _DTYPES[dtype_name]
        nbytes = int(np.prod(shape)) * dt.itemsize
        if offset + nbytes > len(blob):
            raise TruncatedPayloadError(f"payload truncated at entry {name!r}")
        out[name] = np.frombuffer(blob[offset : offset + nbytes], dtype=dt).reshape(shape).copy()
        offset += nbytes
    return out


def save_tensor(path, arr: np.ndarray, name: str = "tensor") -> None:
    save_arrays(path, {name: arr})


def load_tensor(path) -> np.ndarray:
    arrays = load_arrays(path)
    if len(arrays) != 1:
        raise ManifestError(f"tensor file must hold exactly one entry, got {len(arrays)}")
    return next(iter(arrays.values()))
