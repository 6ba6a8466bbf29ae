"""Synthetic latent-grid datasets standing in for VAE latents."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("gauss-mix", "checkerboard", "class-conditional")


@dataclass
class SyntheticDataset:
    """Description of a synthetic distribution over (c, h, w) grids.

    gauss-mix: ``means`` (K, c, h, w), ``stds`` (K, c, h, w) or scalar,
    ``weights`` (K,). checkerboard: +-``amplitude`` blocks of side ``period``
    with additive noise ``sigma``. class-conditional: ``means`` (K, c, h, w),
    one class per component, noise ``sigma``.
    """

    kind: str
    c: int = 4
    h: int = 8
    w: int = 8
    seed: int = 0
    means: np.ndarray | None = None
    stds: np.ndarray | float = 1.0
    weights: np.ndarray | None = None
    period: int = 2
    amplitude: float = 1.0
    sigma: float = 0.1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if min(self.c, self.h, self.w) < 1:
            raise ValueError("grid dimensions must be positive")
        shape = (self.c, self.h, self.w)
        if self.kind in ("gauss-mix", "class-conditional"):
            if self.means is None:
                raise ValueError(f"{self.kind} needs component means")
            self.means = np.asarray(self.means, dtype=np.float64)
            if self.means.ndim != 4 or self.means.shape[1:] != shape:
                raise ValueError(f"means must be (K, {self.c}, {self.h}, {self.w}), got {self.means.shape}")
            K = self.means.shape[0]
            stds = np.asarray(self.stds, dtype=np.float64)
            if np.any(stds < 0):
                raise ValueError("standard deviations must be non-negative")
            self.stds = np.broadcast_to(stds, self.means.shape).copy()
            wts = np.full(K, 1.0 / K) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
            if wts.shape != (K,) or np.any(wts < 0) or not np.isclose(wts.sum(), 1.0):
                raise ValueError("mixture weights must be K non-negative values summing to 1")
            self.weights = wts
        elif self.period < 1 or self.sigma < 0:
            raise ValueError("checkerboard needs period >= 1 and sigma >= 0")

    @property
    def shape(self) -> tuple:
        return (self.c, self.h, self.w)

    @property
    def n_classes(self) -> int:
        return 0 if self.means is None else self.means.shape[0]

    def stream(self) -> "DatasetStream":
        return DatasetStream(self)


def dataset_sample(spec: SyntheticDataset, n: int, rng: np.random.Generator):
    """Draw ``n`` grids; class-conditional also returns the class ids."""
    if n < 0:
        raise ValueError("sample count must be non-negative")
    if spec.kind == "checkerboard":
        ii, jj = np.meshgrid(np.arange(spec.h), np.arange(spec.w), indexing="ij")
        board = np.where(((ii // spec.period) + (jj // spec.period)) % 2 == 0, 1.0, -1.0)
        x = np.broadcast_to(spec.amplitude * board, (n, spec.c, spec.h, spec.w)).copy()
        if spec.sigma > 0:
            x += spec.sigma * rng.standard_normal(x.shape)
        return x
    K = spec.means.shape[0]
    k = rng.choice(K, size=n, p=spec.weights)
    noise = rng.standard_normal((n,) + spec.shape)
    if spec.kind == "gauss-mix":
        return spec.means[k] + spec.stds[k] * noise
    return spec.means[k] + spec.sigma * noise, k


class DatasetStream:
    """Deterministic sample stream: the same seed yields the same batches."""

    def __init__(self, spec: SyntheticDataset):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)

    def next(self, n: int):
        return dataset_sample(self.spec, n, self.rng)


def _patterns(c: int, h: int, w: int):
    # Channel-only patterns: the network has no positional embedding, so mode
    # means are shared by every grid cell.
    ch = np.arange(c)[:, None, None] * np.ones((1, h, w))
    common = np.cos(1.3 * ch + 0.4)
    split = np.sin(2.1 * ch + 0.9)
    return common, split


def two_mode_mixture(c: int = 4, h: int = 8, w: int = 8, offset: float = 0.5,
                     separation: float = 0.1, std: float = 0.01, seed: int = 0) -> SyntheticDataset:
    """Two equally weighted tight modes around a shared per-channel pattern.

    Mode means are ``offset * common +- separation * split`` with isotropic
    per-cell ``std``. Small per-cell spread keeps the sampling noise of the
    moment distance well under the acceptance threshold at 512 samples.
    """
    common, split = _patterns(c, h, w)
    means = np.stack([offset * common + separation * split,
                      offset * common - separation * split])
    return SyntheticDataset("gauss-mix", c, h, w, seed=seed, means=means, stds=std)


def class_mixture(n_classes: int = 2, c: int = 4, h: int = 8, w: int = 8,
                  separation: float = 0.5, sigma: float = 0.05, seed: int = 0) -> SyntheticDataset:
    common, split = _patterns(c, h, w)
    signs = np.linspace(-1.0, 1.0, n_classes) if n_classes > 1 else np.zeros(1)
    means = np.stack([0.5 * common + s * separation * split for s in signs])
    return SyntheticDataset("class-conditional", c, h, w, seed=seed, means=means, sigma=sigma)
