"""Selective state-space scan and the gated Mamba block built around it.

Per channel e with diagonal state of size N::

    Abar_k = exp(delta_k * a)          (zero-order hold on the state matrix)
    Bbar_k = delta_k * B_k             (first-order hold on the input matrix)
    h_k    = Abar_k * h_{k-1} + Bbar_k * u_k,   h_0 = 0
    y_k    = <C_k, h_k> + D * u_k

B, C and delta are linear functions of the token, which is what makes the
scan selective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .scan_paths import ScanPath, apply_scan, inverse_scan
from .tensor import (ShapeError, Tensor, _as_tensor, _result, exp, linear, mul, neg,
                     silu, softplus, split)


@dataclass
class SsmParams:
    A_log: Tensor      # (E, N); A = -exp(A_log)
    D_skip: Tensor     # (E,)
    W_B: Tensor        # (E, N)
    W_C: Tensor        # (E, N)
    W_delta: Tensor    # (E, E)
    delta_bias: Tensor  # (E,)


@dataclass
class MambaBlockParams:
    W_in: Tensor       # (D, 2E) -> stream u and gate g
    conv_w: Tensor     # (E, k_conv)
    conv_b: Tensor     # (E,)
    ssm: SsmParams
    W_out: Tensor      # (E, D)

    @property
    def expanded(self) -> int:
        return self.conv_w.shape[0]


def init_mamba_params(rng: np.random.Generator, d_model: int, d_state: int = 16,
                      expand: int = 2, k_conv: int = 4, std: float = 0.02,
                      zero_out: bool = False) -> MambaBlockParams:
    """Standard initialisation.

    -A spans 1..N per channel; softplus(delta_bias) is log-uniform in
    [1e-3, 1e-1].
    """
    E = expand * d_model

    def normal(*shape):
        return Tensor(rng.normal(0.0, std, shape), requires_grad=True)

    a = np.tile(np.arange(1, d_state + 1, dtype=np.float64), (E, 1))
    dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), E))
    # inverse softplus
    delta_bias = dt + np.log(-np.expm1(-dt))
    ssm = SsmParams(
        A_log=Tensor(np.log(a), requires_grad=True),
        D_skip=Tensor(np.ones(E), requires_grad=True),
        W_B=normal(E, d_state),
        W_C=normal(E, d_state),
        W_delta=normal(E, E),
        delta_bias=Tensor(delta_bias, requires_grad=True),
    )
    bound = 1.0 / math.sqrt(k_conv)
    return MambaBlockParams(
        W_in=normal(d_model, 2 * E),
        conv_w=Tensor(rng.uniform(-bound, bound, (E, k_conv)), requires_grad=True),
        conv_b=Tensor(np.zeros(E), requires_grad=True),
        ssm=ssm,
        W_out=Tensor(np.zeros((E, d_model)), requires_grad=True) if zero_out else normal(E, d_model),
    )


def discretize(delta, B, a) -> tuple[Tensor, Tensor]:
    """Input-dependent discretisation.

    Args:
        delta: step sizes (..., L, E), strictly positive.
        B: input matrices (..., L, N).
        a: diagonal state matrix (E, N), negative.

    Returns:
        ``(Abar, Bbar)``, both (..., L, E, N).
    """
    delta, B, a = _as_tensor(delta), _as_tensor(B), _as_tensor(a)
    if delta.shape[:-1] != B.shape[:-1] or a.shape != (delta.shape[-1], B.shape[-1]):
        raise ShapeError(f"discretize: delta {delta.shape}, B {B.shape}, a {a.shape} do not conform")
    if np.any(delta.data <= 0):
        raise ValueError("discretize: step sizes must be positive")
    dd, bd, ad = delta.data, B.data, a.data
    dA = dd[..., :, None] * ad
    Abar = np.exp(dA)
    Bbar = dd[..., :, None] * bd[..., None, :]

    def bw_a(g):
        gd = (g * Abar * ad).sum(axis=-1) if delta.requires_grad else None
        ga = (g * Abar * dd[..., None]).reshape(-1, *ad.shape).sum(axis=0) if a.requires_grad else None
        return gd, ga

    def bw_b(g):
        gd = (g * bd[..., None, :]).sum(axis=-1) if delta.requires_grad else None
        gb = (g * dd[..., None]).sum(axis=-2) if B.requires_grad else None
        return gd, gb

    return (_result(Abar, (delta, a), bw_a, "discretize_A"),
            _result(Bbar, (delta, B), bw_b, "discretize_B"))


def _scan_inputs(u, Abar, Bbar, C, D_skip):
    u, Abar, Bbar, C, D_skip = map(_as_tensor, (u, Abar, Bbar, C, D_skip))
    if u.ndim not in (2, 3):
        raise ShapeError(f"selective_scan: u must be (L, E) or (B, L, E), got {u.shape}")
    N = C.shape[-1]
    if (Abar.shape != u.shape + (N,) or Bbar.shape != Abar.shape
            or C.shape != u.shape[:-1] + (N,) or D_skip.shape != (u.shape[-1],)):
        raise ShapeError(f"selective_scan: u {u.shape}, Abar {Abar.shape}, Bbar {Bbar.shape}, "
                         f"C {C.shape}, D {D_skip.shape} do not conform")
    return u, Abar, Bbar, C, D_skip


def selective_scan(u, Abar, Bbar, C, D_skip) -> Tensor:
    """Linear-time recurrence over axis -2 of ``u`` (shape (L, E) or (B, L, E))."""
    u, Abar, Bbar, C, D_skip = _scan_inputs(u, Abar, Bbar, C, D_skip)
    batched = u.ndim == 3
    lift = (lambda x: x) if batched else (lambda x: x[None])
    ud, Ad, Bd, Cd = lift(u.data), lift(Abar.data), lift(Bbar.data), lift(C.data)
    y, hs = kernels.scan_forward(ud, Ad, Bd, Cd, D_skip.data)

    def bw(g):
        du, dA, dB, dC, dD = kernels.scan_backward(lift(g), ud, Ad, Bd, Cd, D_skip.data, hs)
        if not batched:
            du, dA, dB, dC = du[0], dA[0], dB[0], dC[0]
        return du, dA, dB, dC, dD

    return _result(y if batched else y[0], (u, Abar, Bbar, C, D_skip), bw, "selective_scan")


def naive_scan_oracle(u, Abar, Bbar, C, D_skip) -> np.ndarray:
    """Reference recurrence written as plain nested loops, one scalar at a time."""
    u, Abar, Bbar, C, D_skip = (np.asarray(getattr(x, "data", x), dtype=np.float64)
                                for x in (u, Abar, Bbar, C, D_skip))
    if u.ndim == 3:
        return np.stack([naive_scan_oracle(u[b], Abar[b], Bbar[b], C[b], D_skip)
                         for b in range(u.shape[0])])
    L, E = u.shape
    N = C.shape[-1]
    y = np.zeros((L, E))
    for e in range(E):
        h = [0.0] * N
        for k in range(L):
            acc = 0.0
            for n in range(N):
                h[n] = Abar[k, e, n] * h[n] + Bbar[k, e, n] * u[k, e]
                acc += C[k, n] * h[n]
            y[k, e] = acc + D_skip[e] * u[k, e]
    return y


def fused_selective_scan(u, delta, a, B, C, D_skip) -> Tensor:
    """``selective_scan(u, *discretize(delta, B, a), C, D_skip)`` in one kernel.

    Shapes: u, delta (Bt, L, E); a (E, N); B, C (Bt, L, N); D_skip (E,).
    The discretised matrices are formed on the fly instead of being stored as
    separate graph nodes.
    """
    u, delta, a, B, C, D_skip = map(_as_tensor, (u, delta, a, B, C, D_skip))
    if (u.ndim != 3 or delta.shape != u.shape or a.shape[0] != u.shape[2]
            or B.shape != u.shape[:2] + (a.shape[1],) or C.shape != B.shape
            or D_skip.shape != (u.shape[2],)):
        raise ShapeError(f"fused_selective_scan: u {u.shape}, delta {delta.shape}, a {a.shape}, "
                         f"B {B.shape}, C {C.shape}, D {D_skip.shape} do not conform")
    if np.any(delta.data <= 0):
        raise ValueError("fused_selective_scan: step sizes must be positive")
    arrays = (u.data, delta.data, a.data, B.data, C.data, D_skip.data)
    y, hs, Abar = kernels.fused_scan_forward(*arrays)

    def bw(g):
        return kernels.fused_scan_backward(g, *arrays, hs, Abar)

    return _result(y, (u, delta, a, B, C, D_skip), bw, "fused_selective_scan")


def causal_conv1d(x, weight, bias) -> Tensor:
    """Depthwise causal convolution over axis -2, left-padded with zeros.

    ``out[l, e] = bias[e] + sum_j weight[e, j] * x[l - (k-1) + j, e]``.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[0],):
        raise ShapeError(f"causal_conv1d: x {x.shape}, weight {weight.shape}, bias {bias.shape}")
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    y = kernels.causal_conv_forward(xd, weight.data, bias.data)

    def bw(g):
        dx, dw, db = kernels.causal_conv_backward(g if batched else g[None], xd, weight.data)
        return (dx if batched else dx[0]), dw, db

    return _result(y if batched else y[0], (x, weight, bias), bw, "causal_conv1d")


def mamba_block(x: Tensor, p: MambaBlockParams, path: ScanPath, use_conv: bool = True) -> Tensor:
    """Gated selective-scan block run in the visit order of ``path``.

    Tokens are permuted into scan order, processed, and permuted back, so the
    output rows line up with the input rows.
    """
    if x.shape[-2] != len(path):
        raise ValueError(f"mamba_block: {x.shape[-2]} tokens but scan path covers {len(path)}")
    E = p.expanded
    xs = apply_scan(x, path)
    u, gate = split(linear(xs, p.W_in), [E, E])
    if use_conv:
        u = causal_conv1d(u, p.conv_w, p.conv_b)
    u = silu(u)
    s = p.ssm
    delta = softplus(linear(u, s.W_delta, s.delta_bias))
    Bm = linear(u, s.W_B)
    Cm = linear(u, s.W_C)
    a = neg(exp(s.A_log))
    if u.ndim == 3:
        y = fused_selective_scan(u, delta, a, Bm, Cm, s.D_skip)
    else:
        y = selective_scan(u, *discretize(delta, Bm, a), Cm, s.D_skip)
    out = linear(mul(y, silu(gate)), p.W_out)
    return inverse_scan(out, path)
