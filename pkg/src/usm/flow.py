"""Rectified-flow objective, optimisers, training step and Euler sampler.

Convention: ``z(t) = t x + (1 - t) eps``, so t = 0 is pure noise and t = 1 is
data. The velocity target is ``x - eps`` and sampling integrates t upward
from 0 to 1 starting at noise.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .net import ModelConfig, UsmParams, class_context, usm_forward
from .params import named_tensors
from .tensor import Tensor, backward, mean, mul, no_grad, square, sub

T_CLAMP = 1e-4


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss."""


def interpolate(x, eps, t):
    """Straight-line interpolant between noise (t = 0) and data (t = 1).

    ``t`` may be a scalar or one value per leading-axis item.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise ValueError(f"interpolation time must lie in [0, 1], got {t}")
    x, eps = np.asarray(x), np.asarray(eps)
    if t_arr.ndim:
        t_arr = t_arr.reshape(t_arr.shape + (1,) * (x.ndim - t_arr.ndim))
    return t_arr * x + (1.0 - t_arr) * eps


def logit_normal_weight(t):
    """Density of the standard logit-normal distribution at ``t`` in (0, 1)."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0) or np.any(t >= 1):
        raise ValueError("logit-normal weight is only defined on the open interval (0, 1)")
    logit = np.log(t / (1.0 - t))
    w = np.exp(-0.5 * logit * logit) / (t * (1.0 - t) * math.sqrt(2.0 * math.pi))
    return float(w) if w.ndim == 0 else w


def fm_loss(v_hat: Tensor, v, w) -> Tensor:
    """``(1/B) sum_i w_i * mean((v_hat_i - v_i)^2)``."""
    v = np.asarray(getattr(v, "data", v))
    if v_hat.shape != v.shape:
        raise ValueError(f"fm_loss: prediction {v_hat.shape} and target {v.shape} differ")
    w = np.asarray(w, dtype=v_hat.dtype).reshape(-1)
    if w.shape != (v.shape[0],):
        raise ValueError(f"fm_loss: need one weight per item, got {w.shape} for batch {v.shape[0]}")
    per_item = mean(square(sub(v_hat, v)), axis=tuple(range(1, v.ndim)))
    return mean(mul(per_item, w))


# ---------------------------------------------------------------- optimisers

class SGD:
    """Plain gradient descent, ``p <- p - lr * grad``."""

    def __init__(self, params, lr: float = 1e-4):
        self.params = [t for _, t in named_tensors(params)]
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


class Adam:
    """Adam over one flat buffer.

    Parameter tensors are re-pointed at views of a single contiguous array so
    the update is a handful of vectorised ops instead of one set per tensor.
    """

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [t for _, t in named_tensors(params)]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        dtype = self.params[0].data.dtype if self.params else np.float64
        sizes = [p.data.size for p in self.params]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.flat = np.empty(int(self._offsets[-1]), dtype=dtype)
        for p, lo, hi in zip(self.params, self._offsets[:-1], self._offsets[1:]):
            self.flat[lo:hi] = p.data.reshape(-1)
            p.data = self.flat[lo:hi].reshape(p.data.shape)
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self._g = np.zeros_like(self.flat)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        g = self._g
        for p, lo, hi in zip(self.params, self._offsets[:-1], self._offsets[1:]):
            if p.grad is None:
                g[lo:hi] = 0.0
            else:
                g[lo:hi] = p.grad.reshape(-1)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * g * g
        self.flat -= self.lr * (self.m / c1) / (np.sqrt(self.v / c2) + self.eps)


def make_optimizer(name: str, params, lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------- training

@dataclass
class StepStats:
    step: int
    loss: float
    weighted_loss: float
    grad_norm: float
    lr: float
    wall_ms: float


def sample_flow_batch(x: np.ndarray, rng: np.random.Generator):
    """Noise, times, interpolants, targets and weights for one batch."""
    eps = rng.standard_normal(x.shape)
    t = np.clip(rng.uniform(size=x.shape[0]), T_CLAMP, 1.0 - T_CLAMP)
    return eps, t, interpolate(x, eps, t), x - eps, logit_normal_weight(t)


def train_step(params: UsmParams, config: ModelConfig, x: np.ndarray, rng: np.random.Generator,
               opt, labels=None, step: int = 0) -> StepStats:
    """One iteration: sample (eps, t), regress the velocity, update parameters."""
    start = time.perf_counter()
    x = np.asarray(x, dtype=np.float64)
    eps, t, z, v, w = sample_flow_batch(x, rng)
    ctx = class_context(params, labels) if labels is not None and config.use_text else None
    opt.zero_grad()
    v_hat = usm_forward(Tensor(z), t, ctx, params, config)
    loss = fm_loss(v_hat, v, w)
    value = loss.item()
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss at step {step}; t = {np.round(t, 6).tolist()}")
    backward(loss)
    grad_norm = math.sqrt(sum(float(np.sum(p.grad * p.grad))
                              for p in opt.params if p.grad is not None))
    opt.step()
    plain = float(np.mean((v_hat.data - v) ** 2))
    return StepStats(step, plain, value, grad_norm, opt.lr, 1e3 * (time.perf_counter() - start))


# ---------------------------------------------------------------- sampling

def euler_sample(params: UsmParams | None, config: ModelConfig, T: int, rng: np.random.Generator,
                 n: int = 1, ctx=None, field: Callable | None = None,
                 hook: Callable | None = None, eps: np.ndarray | None = None) -> np.ndarray:
    """Integrate the velocity field from noise at t = 0 to data at t = 1.

    ``T`` fixed steps of size 1/T, feeding ``t_i = i / T`` to the field.
    ``field(z, t)`` replaces the network when given. ``hook(i, t)`` is called
    once per field evaluation.
    """
    if T < 1:
        raise ValueError(f"number of steps must be at least 1, got {T}")
    z = rng.standard_normal((n, config.c, config.h, config.w)) if eps is None else np.array(eps, dtype=np.float64)
    dt = 1.0 / T
    for i in range(T):
        t = i * dt
        if hook is not None:
            hook(i, t)
        if field is not None:
            v = np.asarray(field(z, t))
        else:
            with no_grad():
                v = usm_forward(Tensor(z), np.full(z.shape[0], t), ctx, params, config).data
        z = z + dt * v
    return z
