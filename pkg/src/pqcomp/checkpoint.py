"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PQCK"  u16 version  u16 layer_count
    per layer:
        u16 name_length, name bytes (UTF-8)
        u32 rank, rank * u32 extents
        prod(extents) * f32 values, row-major
        u8 has_mask; if 1: ceil(extents[0] / 8) bytes, one bit per output
        filter (LSB first), bit set = filter kept
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError

MAGIC = b"PQCK"
VERSION = 1

Entry = tuple  # (name, float32 array, keep-mask or None)


def dumps(entries) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<HH", VERSION, len(entries))
    for name, data, keep in entries:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(data, dtype="<f4")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
        if keep is None:
            out += b"\x00"
        else:
            keep = np.asarray(keep, dtype=bool)
            if keep.shape != (arr.shape[0],):
                raise FormatError(f"{name}: mask length {keep.shape} != filter count {arr.shape[0]}")
            out += b"\x01" + np.packbits(keep, bitorder="little").tobytes()
    return bytes(out)


def loads(blob: bytes) -> list:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("checkpoint is truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError("not a PQCK checkpoint (bad magic)")
    version, count = struct.unpack("<HH", take(4))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(bytes(take(4 * size)), dtype="<f4").reshape(shape).astype(np.float32)
        (has_mask,) = struct.unpack("<B", take(1))
        keep: Optional[np.ndarray] = None
        if has_mask == 1:
            nbytes = (shape[0] + 7) // 8
            bits = np.frombuffer(bytes(take(nbytes)), dtype=np.uint8)
            keep = np.unpackbits(bits, bitorder="little")[:shape[0]].astype(bool)
        elif has_mask != 0:
            raise FormatError(f"{name}: bad mask flag {has_mask}")
        entries.append((name, data, keep))
    if pos != len(view):
        raise FormatError("trailing bytes after last layer")
    return entries


def save(path, entries) -> None:
    Path(path).write_bytes(dumps(entries))


def load(path) -> list:
    return loads(Path(path).read_bytes())
