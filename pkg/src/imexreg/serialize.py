"""Flat binary container for parameter and buffer snapshots.

Layout (all integers little-endian):

    magic        4 bytes  b"IXT1"
    precision    u8       8 = float64, 4 = float32
    tensor count u32
    config hash  32 bytes sha256 of the canonical config JSON (zeros if none)
    per tensor:
        name length  u16
        name         utf-8 bytes
        rank         u8
        extents      u32 x rank
        values       raw little-endian floats, row-major

Checkpoints append a JSON trailer after the container (u64 length + utf-8
payload) for non-tensor state; plain model/buffer snapshots are exactly the
container.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from typing import Dict, Optional, Tuple

import numpy as np

MAGIC = b"IXT1"
_PRECISION_TO_DTYPE = {8: np.dtype("<f8"), 4: np.dtype("<f4")}
_DTYPE_TO_PRECISION = {np.dtype(np.float64): 8, np.dtype(np.float32): 4}


def config_hash(config) -> bytes:
    """sha256 over the sorted-key JSON of a config dataclass or mapping."""
    if dataclasses.is_dataclass(config):
        config = dataclasses.asdict(config)
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).digest()


def pack_tensors(tensors: Dict[str, np.ndarray], cfg_hash: bytes = b"") -> bytes:
    arrays = {name: np.ascontiguousarray(a) for name, a in tensors.items()}
    dtypes = {a.dtype for a in arrays.values()}
    if len(dtypes) > 1:
        raise ValueError(f"container holds one precision, got {sorted(map(str, dtypes))}")
    dtype = dtypes.pop() if dtypes else np.dtype(np.float64)
    if dtype not in _DTYPE_TO_PRECISION:
        raise ValueError(f"unsupported dtype {dtype}")
    precision = _DTYPE_TO_PRECISION[dtype]
    digest = (cfg_hash or b"").ljust(32, b"\0")[:32]

    parts = [MAGIC, struct.pack("<BI", precision, len(arrays)), digest]
    for name, arr in arrays.items():
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(parts)


def unpack_tensors(blob: bytes, offset: int = 0) -> Tuple[Dict[str, np.ndarray], bytes, int]:
    """Returns (tensors, config hash, offset just past the container)."""
    if blob[offset:offset + 4] != MAGIC:
        raise ValueError("not a tensor container (bad magic)")
    offset += 4
    precision, count = struct.unpack_from("<BI", blob, offset)
    offset += 5
    if precision not in _PRECISION_TO_DTYPE:
        raise ValueError(f"unknown precision code {precision}")
    dtype = _PRECISION_TO_DTYPE[precision]
    digest = blob[offset:offset + 32]
    offset += 32
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode()
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(blob, dtype=dtype, count=n, offset=offset).reshape(shape)
        offset += n * dtype.itemsize
        tensors[name] = arr.astype(dtype.newbyteorder("="))
    return tensors, digest, offset


def save_tensors(path, tensors: Dict[str, np.ndarray], cfg_hash: bytes = b"") -> None:
    with open(path, "wb") as fh:
        fh.write(pack_tensors(tensors, cfg_hash))


def load_tensors(path) -> Tuple[Dict[str, np.ndarray], bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    tensors, digest, _ = unpack_tensors(blob)
    return tensors, digest


def pack_with_trailer(tensors: Dict[str, np.ndarray], meta: dict,
                      cfg_hash: bytes = b"") -> bytes:
    payload = json.dumps(meta, sort_keys=True).encode()
    return pack_tensors(tensors, cfg_hash) + struct.pack("<Q", len(payload)) + payload


def unpack_with_trailer(blob: bytes) -> Tuple[Dict[str, np.ndarray], bytes, dict]:
    tensors, digest, offset = unpack_tensors(blob)
    (length,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    meta = json.loads(blob[offset:offset + length].decode())
    return tensors, digest, meta
