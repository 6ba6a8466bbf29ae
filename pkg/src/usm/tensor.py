"""Dense numpy-backed tensor with reverse-mode automatic differentiation.

Every op that touches a tensor with ``requires_grad`` records a :class:`Node`
holding its parents and a closure mapping the output gradient to parent
gradients. Nodes carry a global insertion sequence number; :func:`backward`
gathers the nodes reachable from the loss and replays them in exact reverse
insertion order.

Elementwise ops follow numpy broadcasting (shapes right-aligned, size-1 or
missing leading axes expand). Anything else raises :class:`ShapeError` naming
the op and both shapes.
"""
from __future__ import annotations

import builtins
import contextlib
import itertools
import os
import weakref
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Node", "ShapeError", "GraphError", "NonFiniteError",
    "tensor", "zeros", "ones", "no_grad", "is_grad_enabled", "set_debug",
    "set_default_dtype", "get_default_dtype", "backward", "finite_diff_grad",
    "add", "sub", "mul", "div", "neg", "matmul", "linear", "exp", "log",
    "softplus", "sigmoid", "silu", "layer_norm", "softmax", "concat", "split",
    "permute_rows", "reshape", "transpose", "sum", "mean", "scale", "square",
    "ActivationTracker", "conv_down", "conv_up",
]


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_seq = itertools.count()
_grad_enabled = True
_debug = os.environ.get("USM_DEBUG", "") not in ("", "0")
_default_dtype = np.dtype(np.float64)
_tracker: ActivationTracker | None = None


def set_debug(flag: bool) -> None:
    """Turn on NaN/Inf checks after every forward op."""
    global _debug
    _debug = bool(flag)


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


def get_default_dtype() -> np.dtype:
    return _default_dtype


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """One recorded operation in the computation graph."""

    __slots__ = ("seq", "op", "parents", "backward_fn", "consumed")

    def __init__(self, op: str, parents: tuple, backward_fn: Callable):
        self.seq = next(_seq)
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False

    def __repr__(self) -> str:
        return f"Node({self.op!r}, seq={self.seq})"


class Tensor:
    """Row-major float array plus autograd bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f" or arr.dtype != _default_dtype:
            arr = arr.astype(_default_dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._node: Node | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.array(data), requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_default_dtype), requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_default_dtype), requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_default_dtype))


class ActivationTracker:
    """Counts live forward-activation elements while installed.

    Used by the profiler as a stand-in for allocator instrumentation.
    """

    def __init__(self):
        self.live = 0
        self.peak = 0

    def _alloc(self, t: Tensor) -> None:
        n = t.data.size
        self.live += n
        self.peak = max(self.peak, self.live)
        weakref.finalize(t, self._free, n)

    def _free(self, n: int) -> None:
        self.live -= n

    def __enter__(self):
        global _tracker
        self._prev = _tracker
        _tracker = self
        return self

    def __exit__(self, *exc):
        global _tracker
        _tracker = self._prev
        return False


def _result(data: np.ndarray, parents: tuple, backward_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._node = None
    if _debug and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = Node(op, parents, backward_fn)
    if _tracker is not None:
        _tracker._alloc(out)
    return out


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a} and {b}") from None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _result(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return _result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return _result(out, (a,), lambda g: (g * _sigmoid(ad),), "softplus")


def silu(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    s = _sigmoid(ad)

    def bw(g):
        return (g * s * (1.0 + ad * (1.0 - s)),)

    return _result(ad * s, (a,), bw, "silu")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), bw, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    parents: tuple = (x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (wd.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)

    def bw(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = xd.reshape(-1, wd.shape[0]).T @ g.reshape(-1, wd.shape[1])
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, wd.shape[1]).sum(axis=0)

    return _result(out, parents, bw, "linear")


# ---------------------------------------------------------------- normalisation

def layer_norm(x, gain=None, bias=None, eps: float = 1e-6) -> Tensor:
    """Per-token normalisation over the last axis."""
    x = _as_tensor(x)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat
    parents: tuple = (x,)
    if gain is not None:
        gain = _as_tensor(gain)
        out = out * gain.data
        parents += (gain,)
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
        parents += (bias,)
    n = xd.shape[-1]

    def bw(g):
        grads = []
        gh = g * gain.data if gain is not None else g
        gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                     - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / n)
        grads.append(gx)
        if gain is not None:
            grads.append((g * xhat).reshape(-1, n).sum(axis=0))
        if bias is not None:
            grads.append(g.reshape(-1, n).sum(axis=0))
        return tuple(grads)

    return _result(out, parents, bw, "layer_norm")


def softmax(x) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (x,), bw, "softmax")


# ---------------------------------------------------------------- structural

def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input")
    ax = axis % ts[0].ndim
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), bw, "concat")


def _slice(x: Tensor, start: int, stop: int, ax: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _result(x.data[idx], (x,), bw, "split")


def split(x, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    x = _as_tensor(x)
    ax = axis % x.ndim
    if builtins.sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split: sizes {list(sizes)} do not add up to {x.shape[ax]} (shape {x.shape})")
    out, start = [], 0
    for n in sizes:
        out.append(_slice(x, start, start + n, ax))
        start += n
    return out


def permute_rows(x, index, axis: int = -2) -> Tensor:
    """Gather rows along ``axis``: ``out[..., i, :] = x[..., index[i], :]``."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    ax = axis % x.ndim
    if index.ndim != 1 or (index.size and (index.min() < 0 or index.max() >= x.shape[ax])):
        raise ShapeError(f"permute_rows: index of length {index.size} invalid for shape {x.shape}")
    shape = x.shape
    is_perm = index.size == shape[ax] and np.array_equal(np.sort(index), np.arange(index.size))
    inv = np.argsort(index) if is_perm else None

    def bw(g):
        if inv is not None:
            return (np.take(g, inv, axis=ax),)
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(np.moveaxis(full, ax, 0), index, np.moveaxis(g, ax, 0))
        return (full,)

    return _result(np.take(x.data, index, axis=ax), (x,), bw, "permute_rows")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort([a % x.ndim for a in axes]))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.data.size // max(out.size, 1) if x.data.size else 1

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result(out, (x,), bw, "mean")


# ---------------------------------------------------------------- autodiff

def backward(loss: Tensor) -> dict:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns a map from each leaf that requires grad to the gradient produced
    by this sweep; the same amount is also accumulated into ``leaf.grad``.
    The graph is consumed: running backward through it again raises.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._node is None:
        raise GraphError("backward: loss is not connected to any tensor that requires grad")
    if loss._node.consumed:
        raise GraphError("backward: graph already consumed by a previous backward")

    found: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        node = t._node
        if node is None or node.seq in found:
            continue
        if node.consumed:
            raise GraphError(f"backward: node {node} already consumed")
        found[node.seq] = t
        stack.extend(p for p in node.parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[int, tuple[Tensor, np.ndarray]] = {}
    for seq in sorted(found, reverse=True):
        t = found[seq]
        node = t._node
        g = grads.pop(id(t), None)
        if g is not None:
            pgrads = node.backward_fn(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if p._node is None:
                    prev = leaf_grads.get(id(p))
                    leaf_grads[id(p)] = (p, pg if prev is None else prev[1] + pg)
                else:
                    k = id(p)
                    grads[k] = pg if k not in grads else grads[k] + pg
        node.consumed = True
        node.backward_fn = None
        node.parents = ()

    result = {}
    for leaf, g in leaf_grads.values():
        g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result


def finite_diff_grad(f: Callable, x: Tensor, eps: float = 1e-6,
                     indices: Iterable[int] | None = None) -> np.ndarray:
    """Central-difference gradient of scalar ``f(x)`` with respect to ``x``.

    ``x`` is perturbed in place and restored. With ``indices`` (flat positions)
    only those coordinates are estimated and a 1-D array is returned.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    flat = x.data.reshape(-1)
    if not np.shares_memory(flat, x.data):
        raise ValueError("finite_diff_grad needs a contiguous tensor")

    def value() -> float:
        with no_grad():
            out = f(x)
        return float(out.data if isinstance(out, Tensor) else out)

    idx = range(flat.size) if indices is None else list(indices)
    est = np.empty(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        fp = value()
        flat[i] = orig - eps
        fm = value()
        flat[i] = orig
        est[k] = (fp - fm) / (2.0 * eps)
    return est.reshape(x.shape) if indices is None else est


# ---------------------------------------------------------------- stride-2 convolutions

def _check_conv(op: str, x: Tensor, kernel: Tensor, bias: Tensor) -> None:
    if x.ndim < 3 or kernel.shape[:2] != (2, 2) or kernel.ndim != 4 \
            or kernel.shape[2] != x.shape[-1] or bias.shape != (kernel.shape[3],):
        raise ShapeError(f"{op}: input {x.shape}, kernel {kernel.shape}, bias {bias.shape} do not conform")


def conv_down(x, kernel, bias) -> Tensor:
    """Kernel-2 stride-2 convolution on a channel-last grid (..., h, w, D).

    Each output cell is the affine image of one disjoint 2x2 input patch;
    ``kernel`` is (2, 2, D_in, D_out).
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    _check_conv("conv_down", x, kernel, bias)
    *lead, h, w, d = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"conv_down: grid {h}x{w} must have even sides")
    do = kernel.shape[3]
    patches = (x.data.reshape(*lead, h // 2, 2, w // 2, 2, d)
               .swapaxes(-4, -3).reshape(*lead, h // 2, w // 2, 4 * d))
    kmat = kernel.data.reshape(4 * d, do)
    out = patches @ kmat + bias.data

    def bw(g):
        gx = gk = None
        if x.requires_grad:
            gp = (g @ kmat.T).reshape(*lead, h // 2, w // 2, 2, 2, d)
            gx = gp.swapaxes(-4, -3).reshape(x.shape)
        if kernel.requires_grad:
            gk = (patches.reshape(-1, 4 * d).T @ g.reshape(-1, do)).reshape(kernel.shape)
        return gx, gk, g.reshape(-1, do).sum(axis=0)

    return _result(out, (x, kernel, bias), bw, "conv_down")


def conv_up(x, kernel, bias) -> Tensor:
    """Stride-2 transposed convolution: (..., h, w, D) -> (..., 2h, 2w, D_out).

    ``out[2i + a, 2j + b] = x[i, j] @ kernel[a, b] + bias``.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    _check_conv("conv_up", x, kernel, bias)
    *lead, h, w, d = x.shape
    do = kernel.shape[3]
    kmat = kernel.data.transpose(2, 0, 1, 3).reshape(d, 4 * do)
    xd = x.data
    out = ((xd @ kmat).reshape(*lead, h, w, 2, 2, do)
           .swapaxes(-4, -3).reshape(*lead, 2 * h, 2 * w, do) + bias.data)

    def bw(g):
        gg = (g.reshape(*lead, h, 2, w, 2, do).swapaxes(-4, -3).reshape(*lead, h, w, 4 * do))
        gx = gg @ kmat.T if x.requires_grad else None
        gk = None
        if kernel.requires_grad:
            gk = ((xd.reshape(-1, d).T @ gg.reshape(-1, 4 * do))
                  .reshape(d, 2, 2, do).transpose(1, 2, 0, 3))
        return gx, gk, g.reshape(-1, do).sum(axis=0)

    return _result(out, (x, kernel, bias), bw, "conv_up")
