"""PSCK checkpoint files.

Layout (little-endian)::

    b"PSCK" | u8 version | u32 header length | JSON header | float32 payloads

The header holds arbitrary metadata plus a ``tensors`` table mapping each
tensor name to its byte offset (from the start of the payload area) and
shape.  JSON is written with sorted keys so identical models produce
identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

PSCK_MAGIC = b"PSCK"
PSCK_VERSION = 1
_PREFIX = struct.Struct("<4sBI")


def save_checkpoint(path, tensors: dict, header: dict | None = None) -> Path:
    path = Path(path)
    table, payloads, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "offset": offset, "shape": list(np.shape(arr))})
        payloads.append(data)
        offset += len(data)
    meta = dict(header or {})
    meta["tensors"] = table
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(PSCK_MAGIC, PSCK_VERSION, len(blob)))
        fh.write(blob)
        for data in payloads:
            fh.write(data)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(header, tensors)``; tensors keep their saved order."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != PSCK_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != PSCK_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(raw[_PREFIX.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        lo = start + entry["offset"]
        if lo + 4 * count > len(raw):
            raise CheckpointError(f"{path}: payload for {entry['name']} truncated")
        tensors[entry["name"]] = np.frombuffer(raw, "<f4", count, lo).reshape(shape).astype(np.float32)
    return header, tensors
