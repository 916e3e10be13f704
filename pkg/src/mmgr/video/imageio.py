"""Binary PPM/PGM (P6/P5, 8-bit) and ``FLO1`` flow-plane files."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

FLO_MAGIC = b"FLO1"
_FLO_HEADER = struct.Struct("<4sIII")  # magic, height, width, reserved


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i >= n:
            raise FormatError("truncated header")
        if data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def read_pnm(path: str | Path) -> np.ndarray:
    """Decode a P5/P6 file to ``[C, H, W]`` floats in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    try:
        (magic, w, h, maxval), offset = _header_tokens(data, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except (FormatError, ValueError) as exc:
        raise FormatError(f"{path.name}: bad PNM header ({exc})") from None
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path.name}: unsupported magic {magic!r}")
    if not 0 < maxval < 256 or width < 1 or height < 1:
        raise FormatError(f"{path.name}: unsupported geometry {width}x{height} maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    raster = data[offset:offset + size]
    if len(raster) != size:
        raise FormatError(f"{path.name}: expected {size} raster bytes, found {len(raster)}")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return img.transpose(2, 0, 1).astype(np.float64) / maxval


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pnm(path: str | Path, frame: np.ndarray) -> None:
    """Write ``[C, H, W]`` values in [0, 1] (C = 1 or 3) as 8-bit P5/P6."""
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = frame[None]
    c, h, w = frame.shape
    if c not in (1, 3):
        raise FormatError(f"PNM frames need 1 or 3 channels, got {c}")
    magic = b"P6" if c == 3 else b"P5"
    raster = to_uint8(frame).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + raster)


def write_flo(path: str | Path, flow: np.ndarray) -> None:
    """Write a ``[2, H, W]`` flow field as little-endian float32 u then v planes."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise FormatError(f"flow must be [2, H, W], got {flow.shape}")
    _, h, w = flow.shape
    header = _FLO_HEADER.pack(FLO_MAGIC, h, w, 0)
    Path(path).write_bytes(header + flow.astype("<f4").tobytes())


def read_flo(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _FLO_HEADER.size:
        raise FormatError(f"{path.name}: truncated flow header")
    magic, h, w, _ = _FLO_HEADER.unpack_from(data)
    if magic != FLO_MAGIC:
        raise FormatError(f"{path.name}: bad flow magic {magic!r}")
    need = 2 * h * w * 4
    body = data[_FLO_HEADER.size:]
    if len(body) != need:
        raise FormatError(f"{path.name}: expected {need} flow bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(2, h, w).astype(np.float64)
