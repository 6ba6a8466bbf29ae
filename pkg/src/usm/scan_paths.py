"""The eight snake (boustrophedon) visit orders over an h x w token grid.

Config numbering::

    0 row/TL   1 row/TR   2 row/BL   3 row/BR
    4 col/TL   5 col/TR   6 col/BL   7 col/BR

Row configs sweep whole rows starting from the named corner and reverse
direction at every row end; column configs do the same along columns. Every
consecutive pair of visited cells shares an edge.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import Tensor, permute_rows

N_CONFIGS = 8
N_BLOCKS = 25

_CORNERS = ("TL", "TR", "BL", "BR")


@dataclass(frozen=True)
class ScanPath:
    config_id: int
    h: int
    w: int
    perm: np.ndarray
    inv_perm: np.ndarray

    @property
    def name(self) -> str:
        axis = "row" if self.config_id < 4 else "col"
        return f"{axis}/{_CORNERS[self.config_id % 4]}"

    def __len__(self) -> int:
        return self.h * self.w


def _snake(config_id: int, h: int, w: int) -> np.ndarray:
    grid = np.arange(h * w).reshape(h, w)
    col_major = config_id >= 4
    corner = _CORNERS[config_id % 4]
    if corner in ("BL", "BR"):
        grid = grid[::-1, :]
    if corner in ("TR", "BR"):
        grid = grid[:, ::-1]
    if col_major:
        grid = grid.T
    lines = [line if i % 2 == 0 else line[::-1] for i, line in enumerate(grid)]
    return np.concatenate(lines)


@lru_cache(maxsize=None)
def generate_scan(config_id: int, h: int, w: int) -> ScanPath:
    if not 0 <= config_id < N_CONFIGS:
        raise ValueError(f"scan config must be in [0, {N_CONFIGS}), got {config_id}")
    if h < 1 or w < 1:
        raise ValueError(f"grid must be at least 1x1, got {h}x{w}")
    perm = _snake(config_id, h, w).astype(np.intp)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    perm.flags.writeable = False
    inv.flags.writeable = False
    return ScanPath(config_id, h, w, perm, inv)


def _check_len(seq: Tensor, path: ScanPath) -> None:
    if seq.shape[-2] != len(path):
        raise ValueError(f"sequence length {seq.shape[-2]} does not match {path.h}x{path.w} scan path")


def apply_scan(seq: Tensor, path: ScanPath) -> Tensor:
    """Reorder tokens (axis -2) into visit order."""
    _check_len(seq, path)
    return permute_rows(seq, path.perm)


def inverse_scan(seq: Tensor, path: ScanPath) -> Tensor:
    _check_len(seq, path)
    return permute_rows(seq, path.inv_perm)


def scan_for_block(block_index: int) -> int:
    """Blocks cycle through the configs in execution order: block k uses k mod 8."""
    if not 0 <= block_index < N_BLOCKS:
        raise ValueError(f"block index must be in [0, {N_BLOCKS}), got {block_index}")
    return block_index % N_CONFIGS


def is_continuous(path: ScanPath) -> bool:
    rows, cols = np.divmod(path.perm, path.w)
    return bool(np.all(np.abs(np.diff(rows)) + np.abs(np.diff(cols)) == 1))
