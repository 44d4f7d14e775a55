"""Checkpoint container.

Layout (little-endian)::

    b"SNNCKPT\\0" | u32 version | u32 header_len | header (UTF-8 JSON)
    u32 n_blobs
    per blob: u16 name_len | name | u8 dtype (0 f32, 1 f64) | u8 ndim | u32 dims... | raw data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SNNCKPT\0"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


def state_dict(model) -> dict[str, np.ndarray]:
    out = {name: p.value for name, p in model.params().items()}
    out.update({f"buffer:{name}": b for name, b in model.buffers().items()})
    return out


def encode(blobs: dict[str, np.ndarray], header: dict) -> bytes:
    head = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head, struct.pack("<I", len(blobs))]
    for name, arr in blobs.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(buf[pos:pos + hlen].decode())
    pos += hlen
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    blobs = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + ln].decode()
        pos += ln
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dt = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(shape).copy()
        pos += count * dt.itemsize
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last blob")
    return header, blobs


def save(path, model, header: dict | None = None) -> None:
    Path(path).write_bytes(encode(state_dict(model), header or {}))


def load_into(model, blobs: dict[str, np.ndarray]) -> None:
    params, buffers = model.params(), model.buffers()
    expected = set(params) | {f"buffer:{k}" for k in buffers}
    if set(blobs) != expected:
        missing = sorted(expected - set(blobs))
        extra = sorted(set(blobs) - expected)
        raise CheckpointError(f"checkpoint does not match model (missing {missing[:5]}, unexpected {extra[:5]})")
    for name, p in params.items():
        if blobs[name].shape != p.value.shape:
            raise CheckpointError(f"shape mismatch for {name}")
        p.value[...] = blobs[name]
    for name, b in buffers.items():
        b[...] = blobs[f"buffer:{name}"]


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())
