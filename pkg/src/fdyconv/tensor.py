"""Minimal dense-tensor helpers.

Tensors are plain numpy ndarrays in row-major (C) order. The axis
convention for activations everywhere in this package is
[batch B, channel C, frequency F, time T]. These helpers add the shape
validation and approximate-equality semantics the rest of the package
relies on; all operations are pure.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError

real32 = np.float32
real64 = np.float64


def tensor_create(shape: Sequence[int], fill=None, data=None, dtype=real64) -> np.ndarray:
    """Build a tensor of `shape`, either constant-filled or from a flat array.

    Exactly one of `fill` / `data` must be given. `data` is consumed in
    row-major order.
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    if (fill is None) == (data is None):
        raise ShapeError("exactly one of fill/data must be provided")
    if fill is not None:
        return np.full(shape, fill, dtype=dtype)
    flat = np.asarray(data, dtype=dtype).reshape(-1)
    n = int(np.prod(shape))
    if flat.size != n:
        raise ShapeError(f"data length {flat.size} does not match shape {shape} ({n})")
    return flat.reshape(shape)


def reduce_mean(x: np.ndarray, axis: int) -> np.ndarray:
    """Arithmetic mean along one axis; the axis is dropped from the shape."""
    if not (-x.ndim <= axis < x.ndim):
        raise ShapeError(f"axis {axis} out of range for rank {x.ndim}")
    return x.mean(axis=axis)


def allclose(a: np.ndarray, b: np.ndarray, rtol: float = 1e-5, atol: float = 1e-8) -> bool:
    """True iff |a-b| <= atol + rtol*|b| elementwise. Shapes must match exactly."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return bool(np.all(np.abs(a - b) <= atol + rtol * np.abs(b)))
