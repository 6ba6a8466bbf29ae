"""Compare the compiled scan/conv kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--reps 20] [--shapes 8x64x32x4 ...]

Each shape is ``BxLxExN``. Prints one row per (kernel, shape) with the mean
time per call of each backend, the speedup, and the max abs difference of
their outputs.
"""
import argparse
import time

import numpy as np

from usm import kernels


def _inputs(B, L, E, N, rng):
    u = rng.standard_normal((B, L, E))
    delta = rng.uniform(1e-3, 1e-1, (B, L, E))
    a = -np.exp(rng.uniform(0, np.log(16), (E, N)))
    Bm, C = rng.standard_normal((B, L, N)), rng.standard_normal((B, L, N))
    D = rng.standard_normal(E)
    Abar = np.exp(delta[..., None] * a)
    Bbar = delta[..., None] * Bm[:, :, None, :]
    w, bias = rng.standard_normal((E, 4)), rng.standard_normal(E)
    dy = rng.standard_normal((B, L, E))
    return dict(u=u, delta=delta, a=a, Bm=Bm, C=C, D=D, Abar=Abar, Bbar=Bbar, w=w, bias=bias, dy=dy)


def _cases(x):
    _, hs = kernels.scan_forward(x["u"], x["Abar"], x["Bbar"], x["C"], x["D"])
    _, fhs, fAbar = kernels.fused_scan_forward(x["u"], x["delta"], x["a"], x["Bm"], x["C"], x["D"])
    return {
        "scan_forward": lambda: kernels.scan_forward(x["u"], x["Abar"], x["Bbar"], x["C"], x["D"]),
        "scan_backward": lambda: kernels.scan_backward(x["dy"], x["u"], x["Abar"], x["Bbar"], x["C"], x["D"], hs),
        "fused_forward": lambda: kernels.fused_scan_forward(x["u"], x["delta"], x["a"], x["Bm"], x["C"], x["D"]),
        "fused_backward": lambda: kernels.fused_scan_backward(x["dy"], x["u"], x["delta"], x["a"], x["Bm"],
                                                              x["C"], x["D"], fhs, fAbar),
        "conv_forward": lambda: kernels.causal_conv_forward(x["u"], x["w"], x["bias"]),
        "conv_backward": lambda: kernels.causal_conv_backward(x["dy"], x["u"], x["w"]),
    }


def _time(fn, reps):
    fn()
    start = time.perf_counter()
    for _ in range(reps):
        out = fn()
    return 1e3 * (time.perf_counter() - start) / reps, out


def _flat(out):
    out = out if isinstance(out, tuple) else (out,)
    return np.concatenate([np.ravel(o) for o in out])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--shapes", nargs="+", default=["1x256x32x4", "8x64x32x4", "8x16x32x4", "1x64x8x8"])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if "compiled" not in kernels.BACKENDS:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<15} {'shape':<12} {'python ms':>10} {'compiled ms':>12} {'speedup':>8} {'max diff':>10}")
    for shape in args.shapes:
        B, L, E, N = (int(s) for s in shape.split("x"))
        x = _inputs(B, L, E, N, rng)
        results = {}
        for backend in ("python", "compiled"):
            kernels.use_backend(backend)
            results[backend] = {name: _time(fn, args.reps) for name, fn in _cases(x).items()}
        for name in results["python"]:
            (tp, op), (tc, oc) = results["python"][name], results["compiled"][name]
            diff = float(np.max(np.abs(_flat(op) - _flat(oc)))) if _flat(op).size else 0.0
            print(f"{name:<15} {shape:<12} {tp:>10.3f} {tc:>12.3f} {tp / tc:>7.1f}x {diff:>10.1e}")
    kernels.use_backend("compiled")


if __name__ == "__main__":
    main()
