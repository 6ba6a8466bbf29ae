# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled selective-scan and causal depthwise convolution kernels.

Layouts: u, y (B, L, E); Abar, Bbar, hs (B, L, E, N); C (B, L, N); D (E,).
The recurrence is sequential in L and independent across B and E.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def _scan_forward(real[:, :, ::1] u, real[:, :, :, ::1] Abar, real[:, :, :, ::1] Bbar,
                  real[:, :, ::1] C, real[::1] D, real[:, :, ::1] y, real[:, :, :, ::1] hs):
    cdef Py_ssize_t nb = u.shape[0], nl = u.shape[1], ne = u.shape[2], nn = Abar.shape[3]
    cdef Py_ssize_t b, l, e, n
    cdef real h, acc, uk
    for b in range(nb):
        for e in range(ne):
            for n in range(nn):
                h = 0
                for l in range(nl):
                    h = Abar[b, l, e, n] * h + Bbar[b, l, e, n] * u[b, l, e]
                    hs[b, l, e, n] = h
        for l in range(nl):
            for e in range(ne):
                uk = u[b, l, e]
                acc = D[e] * uk
                for n in range(nn):
                    acc = acc + C[b, l, n] * hs[b, l, e, n]
                y[b, l, e] = acc


def scan_forward(u, Abar, Bbar, C, D):
    """Run the recurrence; returns (y, hs) with hs the post-update states."""
    y = np.empty_like(u)
    hs = np.empty_like(Abar)
    _scan_forward(u, Abar, Bbar, C, D, y, hs)
    return y, hs


def _scan_backward(real[:, :, ::1] dy, real[:, :, ::1] u, real[:, :, :, ::1] Abar,
                   real[:, :, :, ::1] Bbar, real[:, :, ::1] C, real[::1] D,
                   real[:, :, :, ::1] hs, real[:, :, ::1] du, real[:, :, :, ::1] dAbar,
                   real[:, :, :, ::1] dBbar, real[:, :, ::1] dC, real[::1] dD):
    cdef Py_ssize_t nb = u.shape[0], nl = u.shape[1], ne = u.shape[2], nn = Abar.shape[3]
    cdef Py_ssize_t b, l, e, n
    cdef real dh, g, hprev, acc, cn
    for b in range(nb):
        for l in range(nl):
            for n in range(nn):
                acc = 0
                for e in range(ne):
                    acc = acc + dy[b, l, e] * hs[b, l, e, n]
                dC[b, l, n] = acc
        for e in range(ne):
            for l in range(nl):
                du[b, l, e] = D[e] * dy[b, l, e]
                dD[e] = dD[e] + dy[b, l, e] * u[b, l, e]
            for n in range(nn):
                dh = 0
                for l in range(nl - 1, -1, -1):
                    g = dy[b, l, e]
                    dh = dh + C[b, l, n] * g
                    hprev = hs[b, l - 1, e, n] if l > 0 else 0
                    dAbar[b, l, e, n] = dh * hprev
                    dBbar[b, l, e, n] = dh * u[b, l, e]
                    du[b, l, e] = du[b, l, e] + dh * Bbar[b, l, e, n]
                    dh = dh * Abar[b, l, e, n]


def scan_backward(dy, u, Abar, Bbar, C, D, hs):
    """Adjoint of :func:`scan_forward`; returns (du, dAbar, dBbar, dC, dD)."""
    dy = np.ascontiguousarray(dy, dtype=u.dtype)
    du = np.empty_like(u)
    dAbar = np.empty_like(Abar)
    dBbar = np.empty_like(Bbar)
    dC = np.empty_like(C)
    dD = np.zeros_like(D)
    _scan_backward(dy, u, Abar, Bbar, C, D, hs, du, dAbar, dBbar, dC, dD)
    return du, dAbar, dBbar, dC, dD


def _conv_forward(real[:, :, ::1] x, real[:, ::1] w, real[::1] bias, real[:, :, ::1] y):
    cdef Py_ssize_t nb = x.shape[0], nl = x.shape[1], ne = x.shape[2], nk = w.shape[1]
    cdef Py_ssize_t b, l, e, j, src
    cdef real acc
    for b in range(nb):
        for l in range(nl):
            for e in range(ne):
                acc = bias[e]
                for j in range(nk):
                    src = l - (nk - 1) + j
                    if src >= 0:
                        acc = acc + w[e, j] * x[b, src, e]
                y[b, l, e] = acc


def causal_conv_forward(x, w, bias):
    y = np.empty_like(x)
    _conv_forward(x, w, bias, y)
    return y


def _conv_backward(real[:, :, ::1] dy, real[:, :, ::1] x, real[:, ::1] w,
                   real[:, :, ::1] dx, real[:, ::1] dw, real[::1] db):
    cdef Py_ssize_t nb = x.shape[0], nl = x.shape[1], ne = x.shape[2], nk = w.shape[1]
    cdef Py_ssize_t b, l, e, j, src
    cdef real g
    for b in range(nb):
        for l in range(nl):
            for e in range(ne):
                g = dy[b, l, e]
                db[e] = db[e] + g
                for j in range(nk):
                    src = l - (nk - 1) + j
                    if src >= 0:
                        dw[e, j] = dw[e, j] + g * x[b, src, e]
                        dx[b, src, e] = dx[b, src, e] + g * w[e, j]


def causal_conv_backward(dy, x, w):
    dy = np.ascontiguousarray(dy, dtype=x.dtype)
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(w.shape[0], dtype=x.dtype)
    _conv_backward(dy, x, w, dx, dw, db)
    return dx, dw, db


from libc.math cimport exp as cexp


cdef inline double _exp(double x) nogil:
    return cexp(x)


def _fused_forward(real[:, :, ::1] u, real[:, :, ::1] delta, real[:, ::1] a,
                   real[:, :, ::1] Bm, real[:, :, ::1] C, real[::1] D,
                   real[:, :, ::1] y, real[:, :, :, ::1] hs, real[:, :, :, ::1] Abar,
                   real[:, ::1] h):
    cdef Py_ssize_t nb = u.shape[0], nl = u.shape[1], ne = u.shape[2], nn = a.shape[1]
    cdef Py_ssize_t b, l, e, n
    cdef real dl, du_, acc
    for b in range(nb):
        h[:, :] = 0
        for l in range(nl):
            for e in range(ne):
                dl = delta[b, l, e]
                for n in range(nn):
                    Abar[b, l, e, n] = <real>_exp(dl * a[e, n])
            for e in range(ne):
                du_ = delta[b, l, e] * u[b, l, e]
                acc = D[e] * u[b, l, e]
                for n in range(nn):
                    h[e, n] = Abar[b, l, e, n] * h[e, n] + du_ * Bm[b, l, n]
                    hs[b, l, e, n] = h[e, n]
                    acc = acc + C[b, l, n] * h[e, n]
                y[b, l, e] = acc


def fused_scan_forward(u, delta, a, Bm, C, D):
    """Discretise and scan in one pass; returns (y, hs, Abar)."""
    nb, nl, ne = u.shape
    nn = a.shape[1]
    y = np.empty_like(u)
    hs = np.empty((nb, nl, ne, nn), dtype=u.dtype)
    Abar = np.empty_like(hs)
    h = np.empty((ne, nn), dtype=u.dtype)
    _fused_forward(u, delta, a, Bm, C, D, y, hs, Abar, h)
    return y, hs, Abar


def _fused_backward(real[:, :, ::1] dy, real[:, :, ::1] u, real[:, :, ::1] delta,
                    real[:, ::1] a, real[:, :, ::1] Bm, real[:, :, ::1] C, real[::1] D,
                    real[:, :, :, ::1] hs, real[:, :, :, ::1] Abar, real[:, ::1] dh,
                    real[:, :, ::1] du, real[:, :, ::1] ddelta, real[:, ::1] da,
                    real[:, :, ::1] dB, real[:, :, ::1] dC, real[::1] dD):
    cdef Py_ssize_t nb = u.shape[0], nl = u.shape[1], ne = u.shape[2], nn = a.shape[1]
    cdef Py_ssize_t b, l, e, n
    cdef real g, dl, ul, hprev, gA, acc_u, acc_d, d_h, ab
    for b in range(nb):
        for e in range(ne):
            for n in range(nn):
                dh[e, n] = 0
        for l in range(nl - 1, -1, -1):
            for n in range(nn):
                dC[b, l, n] = 0
                dB[b, l, n] = 0
            for e in range(ne):
                g = dy[b, l, e]
                dl = delta[b, l, e]
                ul = u[b, l, e]
                dD[e] = dD[e] + g * ul
                acc_u = D[e] * g
                acc_d = 0
                for n in range(nn):
                    dC[b, l, n] = dC[b, l, n] + g * hs[b, l, e, n]
                    d_h = dh[e, n] + C[b, l, n] * g
                    ab = Abar[b, l, e, n]
                    hprev = hs[b, l - 1, e, n] if l > 0 else 0
                    gA = d_h * hprev * ab
                    acc_d = acc_d + gA * a[e, n] + d_h * Bm[b, l, n] * ul
                    da[e, n] = da[e, n] + gA * dl
                    dB[b, l, n] = dB[b, l, n] + d_h * dl * ul
                    acc_u = acc_u + d_h * dl * Bm[b, l, n]
                    dh[e, n] = d_h * ab
                du[b, l, e] = acc_u
                ddelta[b, l, e] = acc_d


def fused_scan_backward(dy, u, delta, a, Bm, C, D, hs, Abar):
    """Returns (du, ddelta, da, dB, dC, dD)."""
    dy = np.ascontiguousarray(dy, dtype=u.dtype)
    du = np.empty_like(u)
    ddelta = np.empty_like(u)
    da = np.zeros_like(a)
    dB = np.empty_like(Bm)
    dC = np.empty_like(C)
    dD = np.zeros_like(D)
    dh = np.empty((u.shape[2], a.shape[1]), dtype=u.dtype)
    _fused_backward(dy, u, delta, a, Bm, C, D, hs, Abar, dh, du, ddelta, da, dB, dC, dD)
    return du, ddelta, da, dB, dC, dD
