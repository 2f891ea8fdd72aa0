"""Versioned binary checkpoints: header + named parameter table + raw floats.

Layout (little-endian): magic b"TBF1", format version u32, config digest
(64 ascii hex bytes), array count u32; then per array: name length u16,
name utf8, dtype code u8 (0 = float32, 1 = float64), ndim u8, extents u32
each, raw data. Loading rejects a digest mismatch.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["config_digest", "save_checkpoint", "load_checkpoint", "CheckpointError"]

MAGIC = b"TBF1"
FORMAT_VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(RuntimeError):
    pass


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def save_checkpoint(path, arrays: dict, config: dict) -> None:
    """arrays: name -> numpy array (float32/float64)."""
    digest = config_digest(config)
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(digest.encode("ascii"))
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _CODES:
                arr = arr.astype(np.float32)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype(_DTYPES[_CODES[arr.dtype]]).tobytes())


def load_checkpoint(path, config: dict) -> dict:
    """Read arrays back; raises CheckpointError on bad magic, version, or a
    config digest that does not match `config`."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = data[8:72].decode("ascii")
    if digest != config_digest(config):
        raise CheckpointError("config digest mismatch; checkpoint belongs to a different config")
    (count,) = struct.unpack_from("<I", data, 72)
    off = 76
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", data, off) if ndim else ()
        off += 4 * ndim
        dtype = np.dtype(_DTYPES[code])
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype=dtype, count=size, offset=off).reshape(shape).copy()
        off += size * dtype.itemsize
    return arrays
