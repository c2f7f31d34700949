"""Versioned binary checkpoint container.

Layout: magic `ITTS1`, u32 record count, then per-record
u32 name length, UTF-8 name, u8 dtype tag, u8 rank, u32 dims, raw
little-endian payload. Dtype tags: 0 float64, 1 int64, 2 raw bytes
(rank-1 u8, used for embedded JSON metadata).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ITTS1"

_TAG_F64 = 0
_TAG_I64 = 1
_TAG_BYTES = 2


class CheckpointError(ValueError):
    pass


def write_container(path, records: dict[str, np.ndarray | bytes]) -> None:
    """Write named arrays (float64 / int64) and byte blobs to `path`."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", len(records))]
    for name in sorted(records):
        value = records[name]
        name_bytes = name.encode("utf-8")
        if isinstance(value, (bytes, bytearray)):
            tag, dims, payload = _TAG_BYTES, (len(value),), bytes(value)
        else:
            arr = np.asarray(value)
            if arr.dtype.kind == "f":
                tag = _TAG_F64
                payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            elif arr.dtype.kind in "iu":
                tag = _TAG_I64
                payload = np.ascontiguousarray(arr, dtype="<i8").tobytes()
            else:
                raise CheckpointError(f"unsupported dtype for {name}: {arr.dtype}")
            dims = arr.shape
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BB", tag, len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}I", *dims) if dims else b"")
        chunks.append(payload)
    path.write_bytes(b"".join(chunks))


def read_container(path) -> dict[str, np.ndarray | bytes]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an ITTS1 checkpoint")
    offset = 5
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    records: dict[str, np.ndarray | bytes] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        tag, rank = struct.unpack_from("<BB", blob, offset)
        offset += 2
        dims = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
        offset += 4 * rank
        n_items = int(np.prod(dims)) if dims else 1
        if tag == _TAG_BYTES:
            size = dims[0] if dims else 0
            records[name] = blob[offset:offset + size]
            offset += size
        elif tag == _TAG_F64:
            records[name] = np.frombuffer(
                blob, dtype="<f8", count=n_items, offset=offset).reshape(dims).copy()
            offset += 8 * n_items
        elif tag == _TAG_I64:
            records[name] = np.frombuffer(
                blob, dtype="<i8", count=n_items, offset=offset).reshape(dims).copy()
            offset += 8 * n_items
        else:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name}")
    return records
