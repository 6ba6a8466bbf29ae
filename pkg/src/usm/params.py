"""Walk nested parameter dataclasses as flat ``name -> Tensor`` maps."""
from __future__ import annotations

import dataclasses
from typing import Iterator

import numpy as np

from .tensor import Tensor


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    if obj is None:
        return
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_tensors(getattr(obj, f.name), f"{prefix}{f.name}.")
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}{i}.")
    elif isinstance(obj, dict):
        for k, item in obj.items():
            yield from named_tensors(item, f"{prefix}{k}.")


def param_dict(obj) -> dict[str, Tensor]:
    return {name.rstrip("."): t for name, t in named_tensors(obj)}


def load_arrays(obj, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
    """Copy arrays into the matching tensors of ``obj`` in place."""
    params = param_dict(obj)
    if strict:
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={missing[:5]} unexpected={extra[:5]}")
    for name, t in params.items():
        if name not in arrays:
            continue
        arr = np.asarray(arrays[name])
        if arr.shape != t.shape:
            raise ValueError(f"{name}: shape {arr.shape} does not match {t.shape}")
        t.data = arr.astype(t.data.dtype).copy()
