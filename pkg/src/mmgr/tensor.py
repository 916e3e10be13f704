"""Dense tensor helpers.

Tensors are plain row-major ``numpy.ndarray`` objects. This module pins the
run-wide floating point precision and supplies the handful of whole-tensor
primitives the optimizer needs.
"""
from __future__ import annotations

import contextlib
from collections.abc import Iterator, Sequence

import numpy as np

from .errors import ShapeError

_DTYPES = {32: np.float32, 64: np.float64}
_dtype: type = np.float32


def set_precision(bits: int) -> None:
    """Select 32- or 64-bit floats for every tensor created afterwards."""
    global _dtype
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _dtype = _DTYPES[bits]


def get_dtype() -> type:
    return _dtype


@contextlib.contextmanager
def precision(bits: int) -> Iterator[None]:
    """Temporarily switch precision (used by the finite-difference checks)."""
    previous = _dtype
    set_precision(bits)
    try:
        yield
    finally:
        globals()["_dtype"] = previous


def create(shape: Sequence[int], fill=0.0) -> np.ndarray:
    """Build a tensor of ``shape`` from a scalar fill value or a flat buffer."""
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=_dtype)
    buf = np.asarray(fill, dtype=_dtype).ravel()
    size = int(np.prod(shape))
    if buf.size != size:
        raise ShapeError(f"buffer has {buf.size} elements, shape {shape} needs {size}")
    return buf.reshape(shape).copy()


def axpy(dst: np.ndarray, src: np.ndarray, alpha: float) -> np.ndarray:
    """In-place ``dst += alpha * src``; returns ``dst``."""
    if dst.shape != src.shape:
        raise ShapeError(f"axpy shape mismatch: {dst.shape} vs {src.shape}")
    if alpha != 0:
        dst += alpha * src
    return dst


def l2_norm(t: np.ndarray) -> float:
    # float64 accumulation, scaled by the largest entry against under/overflow
    flat = np.asarray(t, dtype=np.float64).ravel()
    peak = float(np.max(np.abs(flat))) if flat.size else 0.0
    if peak == 0.0 or not np.isfinite(peak):
        return peak
    flat = flat / peak
    return peak * float(np.sqrt(np.dot(flat, flat)))
