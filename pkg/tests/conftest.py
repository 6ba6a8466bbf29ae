import sys

import numpy as np
import pytest

from usm import tensor as T
from usm.tensor import Tensor, backward, finite_diff_grad


def grad_errors(f, inputs, eps=1e-6, abs_tol=1e-9):
    """Max relative error between backward() and central differences.

    ``f`` maps the list of input tensors to a scalar tensor. Coordinates where
    the two estimates differ by at most ``abs_tol`` count as exact.
    """
    loss = f(inputs)
    grads = backward(loss)
    worst = 0.0
    for x in inputs:
        if not x.requires_grad:
            continue
        analytic = grads.get(x, np.zeros(x.shape))
        numeric = finite_diff_grad(lambda _: f(inputs), x, eps)
        diff = np.abs(analytic - numeric)
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        rel = np.where(diff <= abs_tol, 0.0, diff / np.where(scale > 0, scale, 1.0))
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(rng, *shape, positive=False):
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True)


def projected_grad_errors(fn, inputs, rng, eps=1e-6, abs_tol=1e-9):
    """grad_errors of ``sum_k <fn(x)_k - fn(x0)_k, w_k>`` for random weights w.

    Subtracting the unperturbed outputs keeps the finite differences from
    cancelling O(1) values, so rounding stays far below the tolerance.
    """
    with T.no_grad():
        ref = fn(inputs)
    ref = [r.data.copy() for r in (ref if isinstance(ref, (list, tuple)) else [ref])]
    ws = [rng.standard_normal(r.shape) for r in ref]

    def f(ins):
        outs = fn(ins)
        outs = outs if isinstance(outs, (list, tuple)) else [outs]
        total = None
        for o, r, w in zip(outs, ref, ws):
            term = T.sum(T.mul(T.sub(o, r), w))
            total = term if total is None else T.add(total, term)
        return total

    return grad_errors(f, inputs, eps, abs_tol)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines after the run."""
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(mod, "RESULTS", None):
            terminalreporter.section("acceptance criteria")
            for n in sorted(mod.RESULTS):
                terminalreporter.write_line(mod.RESULTS[n])
