"""Versioned binary checkpoints.

Layout (all little-endian)::

    b"MMGR"  u32 version=1  u32 tensor_count
    repeated: u16 name_len, name (utf-8), u8 ndim, u32 dims[ndim], f32 data[prod(dims)]
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"MMGR"
VERSION = 1


def save_tensors(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        raw = name.encode()
        arr = np.asarray(value)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path.name}: truncated at offset {pos} (needed {n} more bytes)")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise FormatError(f"{path.name}: bad magic")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{path.name}: unsupported version {version}")
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        try:
            name = take(n).decode()
        except UnicodeDecodeError:
            raise FormatError(f"{path.name}: undecodable tensor name before offset {pos}") from None
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims)) if ndim else 1
        out[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(data):
        raise FormatError(f"{path.name}: {len(data) - pos} trailing bytes at offset {pos}")
    return out


def save_checkpoint(path: str | Path, net, optimizer=None) -> None:
    """Write a network's parameters and buffers, plus optimizer state if given."""
    tensors = dict(net.state_dict())
    if optimizer is not None:
        tensors.update(optimizer.state_dict())
    save_tensors(path, tensors)


def load_checkpoint(path: str | Path, net, optimizer=None) -> dict[str, np.ndarray]:
    """Restore ``net`` (and ``optimizer``) in place; returns the raw tensors."""
    tensors = load_tensors(path)
    net.load_state_dict(tensors)
    if optimizer is not None:
        optimizer.load_state_dict(tensors)
    return tensors
