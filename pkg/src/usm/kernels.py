"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
``USM_PURE_PYTHON`` environment variable is set, the numpy fallback is used.
:func:`use_backend` switches at runtime (tests and the benchmark use it).
"""
import os

from . import _scan_py

try:
    from . import _scan_ext
except ImportError:  # extension not built
    _scan_ext = None

BACKENDS = {"python": _scan_py}
if _scan_ext is not None:
    BACKENDS["compiled"] = _scan_ext

_active = _scan_py if os.environ.get("USM_PURE_PYTHON") or _scan_ext is None else _scan_ext


def backend_name() -> str:
    return "compiled" if _active is _scan_ext and _scan_ext is not None else "python"


def use_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    _active = BACKENDS[name]


def _contig(*arrays):
    return [a if a.flags.c_contiguous else a.copy(order="C") for a in arrays]


def scan_forward(u, Abar, Bbar, C, D):
    return _active.scan_forward(*_contig(u, Abar, Bbar, C, D))


def scan_backward(dy, u, Abar, Bbar, C, D, hs):
    return _active.scan_backward(*_contig(dy, u, Abar, Bbar, C, D, hs))


def causal_conv_forward(x, w, bias):
    return _active.causal_conv_forward(*_contig(x, w, bias))


def causal_conv_backward(dy, x, w):
    return _active.causal_conv_backward(*_contig(dy, x, w))


def fused_scan_forward(u, delta, a, Bm, C, D):
    return _active.fused_scan_forward(*_contig(u, delta, a, Bm, C, D))


def fused_scan_backward(dy, u, delta, a, Bm, C, D, hs, Abar):
    return _active.fused_scan_backward(*_contig(dy, u, delta, a, Bm, C, D, hs, Abar))
