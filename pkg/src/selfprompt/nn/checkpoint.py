"""Named-array checkpoint files.

Layout (little-endian): magic ``SPCK``, u32 version, u64 entry count, then per
entry in ascending name order: u32 name length, UTF-8 name, u8 rank, rank x u64
dims, f64 payload in row-major order.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from selfprompt.errors import CorruptionError, FormatError, ValidationError

MAGIC = b"SPCK"
VERSION = 1


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"array {name!r} has non-finite values")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    try:
        version, count = struct.unpack_from("<IQ", data, 4)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 16
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4 : pos + 4 + nlen].decode("utf-8")
            pos += 4 + nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            dims = struct.unpack_from(f"<{rank}Q", data, pos + 1)
            pos += 1 + 8 * rank
            nbytes = 8 * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > len(data):
                raise CorruptionError(f"payload of {name!r} truncated")
            out[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=pos).reshape(dims).copy()
            pos += nbytes
    except struct.error as exc:
        raise CorruptionError(f"checkpoint truncated: {exc}") from exc
    if pos != len(data):
        raise CorruptionError(f"{len(data) - pos} trailing bytes after last entry")
    return out


def save_checkpoint(arrays: Mapping[str, np.ndarray], path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(arrays))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
