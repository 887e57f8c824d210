"""Binary framing shared by checkpoint and embedding-index files.

Layout: an 8-byte magic, a u64-length-prefixed UTF-8 JSON header, a u64
tensor count, then per tensor: u64 name length, name bytes, u64 rank, u64
dims, and the float32 little-endian row-major payload. All integers are
little-endian. Reads are strict; a short file raises instead of returning
partial state.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["FormatError", "write_file", "read_file"]


class FormatError(Exception):
    pass


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _write_u64(fh, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def _read_u64(fh) -> int:
    return struct.unpack("<Q", _read_exact(fh, 8))[0]


def write_file(path: str | Path, magic: bytes, header: dict, tensors: dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        _write_u64(fh, len(blob))
        fh.write(blob)
        _write_u64(fh, len(tensors))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            _write_u64(fh, len(encoded))
            fh.write(encoded)
            _write_u64(fh, data.ndim)
            for dim in data.shape:
                _write_u64(fh, dim)
            fh.write(data.tobytes())


def read_file(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        got = _read_exact(fh, 8)
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}")
        blob = _read_exact(fh, _read_u64(fh))
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"corrupt JSON header: {e}") from e
        count = _read_u64(fh)
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            name = _read_exact(fh, _read_u64(fh)).decode("utf-8")
            rank = _read_u64(fh)
            shape = tuple(_read_u64(fh) for _ in range(rank))
            n_items = 1
            for dim in shape:
                n_items *= dim
            raw = _read_exact(fh, 4 * n_items)
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise FormatError("trailing bytes after last tensor")
    return header, tensors
