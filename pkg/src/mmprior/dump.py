"""Flat parameter dump.

Layout (little-endian)::

    b"PSCP" | version u32 | record count u32 |
    per record: name length u32, name UTF-8, rank u32, dims u32 * rank, f64 payload
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PSCP"
VERSION = 1


class DumpFormatError(ValueError):
    pass


def write_dump(path, records) -> None:
    """``records``: iterable of (name, array) in the order to store them."""
    records = list(records)
    parts = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_dump(path) -> list[tuple[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise DumpFormatError(f"{path}: bad magic {buf[:4]!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise DumpFormatError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise DumpFormatError(f"{path}: unsupported version {version}")
    out = []
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(buf):
            raise DumpFormatError(f"{path}: truncated record name at byte {pos}")
        try:
            name = buf[pos:pos + n].decode("utf-8")
        except UnicodeDecodeError:
            raise DumpFormatError(f"{path}: record name at byte {pos} is not UTF-8") from None
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        if pos + 8 * size > len(buf):
            raise DumpFormatError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        out.append((name, arr))
    if pos != len(buf):
        raise DumpFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
