"""Binary PGM/PPM output for latent samples."""
from __future__ import annotations

import math
import warnings
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write


def to_bytes(z) -> np.ndarray:
    """Min-max scale each channel of ``z`` (c, h, w) to uint8.

    A channel with zero range maps to 128.
    """
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    out = np.empty(z.shape, dtype=np.uint8)
    for ch in range(z.shape[0]):
        lo, hi = float(z[ch].min()), float(z[ch].max())
        if hi - lo <= 0.0:
            out[ch] = 128
        else:
            out[ch] = np.rint((z[ch] - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return out


def montage(zs, cols: int | None = None) -> np.ndarray:
    """Tile k samples (k, c, h, w) into one (c, rows*h, cols*w) array."""
    zs = np.asarray(getattr(zs, "data", zs), dtype=np.float64)
    k, c, h, w = zs.shape
    cols = cols or math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    grid = np.zeros((c, rows * h, cols * w))
    for i in range(k):
        r, q = divmod(i, cols)
        grid[:, r * h:(r + 1) * h, q * w:(q + 1) * w] = zs[i]
    return grid


def encode_image(z) -> bytes:
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"emit_image: expected (c, h, w), got shape {z.shape}")
    c, h, w = z.shape
    if c not in (1, 3, 4):
        raise ValueError(f"emit_image: unsupported channel count {c} (need 1, 3 or 4)")
    if c == 4:
        warnings.warn("emit_image: dropping the 4th channel", stacklevel=3)
        z = z[:3]
    px = to_bytes(z)
    if c == 1:
        return f"P5\n{w} {h}\n255\n".encode("ascii") + px[0].tobytes()
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(px.transpose(1, 2, 0)).tobytes()


def emit_image(z, path, montage_cols: int | None = None) -> Path:
    """Write ``z`` as binary PGM (c=1) or PPM (c=3, or c=4 minus the last channel).

    A 4-d input (k, c, h, w) is tiled into a montage first.
    """
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    if z.ndim == 4:
        z = montage(z, montage_cols)
    path = Path(path)
    atomic_write(path, encode_image(z))
    return path


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM written by :func:`emit_image`; returns (c, h, w) uint8."""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    kind, w, h = fields[0], int(fields[1]), int(fields[2])
    if kind == b"P5":
        return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(1, h, w)
    if kind == b"P6":
        return np.frombuffer(data[pos:pos + 3 * w * h], dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    raise ValueError(f"not a binary PGM/PPM file: {kind!r}")
