"""Versioned binary checkpoint of named float64 tensors plus a config blob.

Layout (all integers little-endian)::

    b"USMC"                      magic
    u32   version
    u32   config byte length, then UTF-8 ``key = value`` lines (sorted keys)
    u32   tensor count
    per tensor, in sorted-name order:
        u32 name length, name bytes (UTF-8)
        u32 rank, rank x u64 dims
        prod(dims) x f64 payload
    u32   CRC-32 of every preceding byte
"""
from __future__ import annotations

import math
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"USMC"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


def encode(tensors: dict[str, np.ndarray], config_text: str, version: int = VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<I", version)]
    blob = config_text.encode("utf-8")
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], str]:
    # The table is parsed before the CRC is checked so that a short file is
    # reported as truncated rather than as a checksum mismatch.
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic)")
    if len(buf) < 8:
        raise TruncatedError("checkpoint truncated in header")
    version = struct.unpack("<I", buf[4:8])[0]
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} unsupported (expected {VERSION})")
    r = _Reader(buf)
    r.take(8)
    config_blob = r.take(r.u32())
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32())
        shape = tuple(r.u64() for _ in range(r.u32()))
        count = math.prod(shape)
        tensors[name] = (shape, r.take(8 * count))
    end = r.pos
    crc = r.u32()
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checksum")
    if zlib.crc32(buf[:end]) != crc:
        raise ChecksumError("checkpoint CRC mismatch; file is corrupted")
    try:
        config_text = config_blob.decode("utf-8")
        out = {name.decode("utf-8"): np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
               for name, (shape, raw) in tensors.items()}
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"invalid UTF-8 in checkpoint: {exc}") from None
    return out, config_text


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_save(params, config, path, extra: dict | None = None) -> None:
    """Write ``params`` (a parameter tree) and ``config`` (a ModelConfig)."""
    from .config import config_to_text
    from .params import param_dict

    tensors = {name: t.data for name, t in param_dict(params).items()}
    atomic_write(path, encode(tensors, config_to_text(config, extra)))


def checkpoint_load(path):
    """Returns ``(params, config, extra)`` rebuilt from the file."""
    from .config import config_from_text
    from .net import init_params
    from .params import load_arrays

    tensors, text = decode(Path(path).read_bytes())
    config, extra = config_from_text(text)
    params = init_params(config, 0)
    load_arrays(params, tensors)
    return params, config, extra
