"""Analytic cost model and wall-clock profiler.

Costs are multiply-accumulate (MAC) counts per sample, written as closed
forms in the stage token count L and the widths D, N, E = expand * D, the
conv length k, the head count and the context length M. Elementwise
nonlinearities and additions are not counted.
"""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .net import ModelConfig, flat_forward, init_params, usm_forward
from .scan_paths import N_BLOCKS
from .tensor import ActivationTracker, Tensor, no_grad


@dataclass(frozen=True)
class LineItem:
    name: str          # e.g. "block", "skip", "conv_down"
    section: str       # encoder / middle / decoder / stem / head
    index: int
    tokens: int
    macs: int
    terms: tuple = ()  # (term name, MACs) breakdown for blocks


@dataclass
class CostReport:
    config: ModelConfig
    items: list = field(default_factory=list)
    flat_items: list = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    peak_activation_elements: int = 0
    flat_peak_activation_elements: int = 0

    def total(self, name: str | None = None) -> int:
        return sum(it.macs for it in self.items if name is None or it.name == name)

    @property
    def flat_total(self) -> int:
        return sum(it.macs for it in self.flat_items)

    @property
    def skip_macs(self) -> int:
        return self.total("skip")

    @property
    def ratio(self) -> float:
        """Total USM cost over the flat reference."""
        return self.total() / self.flat_total

    @property
    def block_ratio(self) -> Fraction:
        """Tokens summed over the main blocks relative to 25 blocks at full length.

        Per-token block cost is the same at every stage, so this is the
        block-cost ratio with resampling and skip layers left out.
        """
        tokens = sum(it.tokens for it in self.items if it.name == "block")
        return Fraction(tokens, N_BLOCKS * self.config.h * self.config.w)

    def summary(self) -> str:
        lines = [f"{'item':<12} {'section':<8} {'idx':>3} {'tokens':>7} {'MACs':>14}"]
        for it in self.items:
            lines.append(f"{it.name:<12} {it.section:<8} {it.index:>3} {it.tokens:>7} {it.macs:>14}")
        lines.append(f"usm total  {self.total():>14}")
        lines.append(f"flat total {self.flat_total:>14}")
        lines.append(f"skip total {self.skip_macs:>14}")
        lines.append(f"ratio {self.ratio:.6f}  block ratio {self.block_ratio} = {float(self.block_ratio):.6f}")
        lines.append(f"peak activation elements (estimate) usm {self.peak_activation_elements} "
                     f"flat {self.flat_peak_activation_elements}")
        return "\n".join(lines)


def block_terms(config: ModelConfig, L: int, n_ctx: int = 1) -> tuple:
    """Per-sample MAC breakdown of one main block at ``L`` tokens."""
    D, N, E, k = config.D, config.N, config.E, config.k_conv
    terms = [
        ("adaln_map", 3 * D * D),          # once per sample
        ("adaln_apply", 2 * D * L),        # scale, gate
        ("in_proj", 2 * D * E * L),
        ("conv1d", k * E * L),
        ("delta_proj", E * E * L),
        ("bc_proj", 2 * E * N * L),
        ("discretize", 2 * E * N * L),
        ("recurrence", 2 * E * N * L),
        ("readout", E * N * L + E * L),
        ("gating", E * L),
        ("out_proj", E * D * L),
    ]
    if config.use_text:
        M = n_ctx
        terms += [
            ("xattn_q", D * D * L),
            ("xattn_kv", 2 * M * config.ctx_dim * D),
            ("xattn_scores", 2 * M * D * L),
            ("xattn_o", D * D * L),
        ]
    return tuple(terms)


def _block_activations(config: ModelConfig, L: int) -> int:
    """Forward elements retained for backward by one block: (L, *) arrays only."""
    D, N, E = config.D, config.N, config.E
    per_token = 6 * D + 9 * E + 2 * N + 2 * E * N
    if config.use_text:
        per_token += 4 * D
    return per_token * L


def _stem_items(config: ModelConfig, L: int) -> list:
    D = config.D
    f = config.t_freq_dim
    return [
        LineItem("time_embed", "stem", 0, 1, f * D + D * D),
        LineItem("in_proj", "stem", 0, L, config.c * D * L),
    ]


def flops_count(config: ModelConfig, n_ctx: int = 1) -> CostReport:
    """Closed-form MAC counts for the U-shaped model and the flat 25-block reference."""
    D = config.D
    L = config.h * config.w
    ledger = config.stage_ledger()
    rep = CostReport(config=config, ledger=ledger)

    def block(section, idx, tokens):
        terms = block_terms(config, tokens, n_ctx)
        return LineItem("block", section, idx, tokens, sum(m for _, m in terms), terms)

    items = _stem_items(config, L)
    k = 0
    n_down = 0
    for j, tokens in enumerate(ledger["encoder"], 1):
        items.append(block("encoder", k, tokens))
        k += 1
        if j in config.downsample_after:
            # each output token reads a 2x2 patch: (tokens / 4) * 4D * D
            items.append(LineItem("conv_down", "encoder", n_down, tokens, tokens * D * D))
            n_down += 1
    items.append(block("middle", k, ledger["middle"][0]))
    k += 1
    n_up = 0
    for j, tokens in enumerate(ledger["decoder"], 1):
        if j in config.upsample_before:
            # every output token is one D x D product
            items.append(LineItem("conv_up", "decoder", n_up, tokens, tokens * D * D))
            n_up += 1
        if config.use_skips:
            items.append(LineItem("skip", "decoder", j - 1, tokens, 2 * D * D * tokens))
        items.append(block("decoder", k, tokens))
        k += 1
    items.append(LineItem("out_proj", "head", 0, L, D * config.c * L))
    rep.items = items

    flat = _stem_items(config, L)
    flat += [block("flat", i, L) for i in range(N_BLOCKS)]
    flat.append(LineItem("out_proj", "head", 0, L, D * config.c * L))
    rep.flat_items = flat

    # Skip sources stay alive until the decoder consumes them.
    enc_acts = sum(_block_activations(config, t) for t in ledger["encoder"])
    skip_held = D * sum(ledger["encoder"]) if config.use_skips else 0
    rep.peak_activation_elements = (
        enc_acts + skip_held
        + sum(_block_activations(config, t) for t in ledger["middle"] + ledger["decoder"])
    )
    rep.flat_peak_activation_elements = N_BLOCKS * _block_activations(config, L)
    return rep


# ---------------------------------------------------------------- timing

@dataclass
class ProfileRow:
    model: str
    rep: int
    ms: float
    peak_live_elements: int


@dataclass
class ProfileReport:
    rows: list
    ledger: list
    cost: CostReport

    def stats(self, model: str) -> tuple[float, float]:
        ms = [r.ms for r in self.rows if r.model == model]
        return statistics.fmean(ms), (statistics.stdev(ms) if len(ms) > 1 else 0.0)

    def peak(self, model: str) -> int:
        return max(r.peak_live_elements for r in self.rows if r.model == model)

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["model", "rep", "ms", "peak_live_elements"])
            for r in self.rows:
                w.writerow([r.model, r.rep, f"{r.ms:.4f}", r.peak_live_elements])


def profile_run(config: ModelConfig, reps: int = 5, seed: int = 0, flat: bool = True,
                warmup: int = 1) -> ProfileReport:
    """Time single-sample forward passes of the U-shaped model and, optionally, the flat one.

    Peak live-activation elements are counted by the tensor core while each
    pass runs; they are element counts, not bytes.
    """
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}")
    params = init_params(config, seed)
    rng = np.random.default_rng(seed)
    z = Tensor(rng.standard_normal((1, config.c, config.h, config.w)))
    t = np.array([0.5])
    ctx = Tensor(rng.standard_normal((1, 1, config.ctx_dim))) if config.use_text else None
    models = [("usm", usm_forward)] + ([("flat", flat_forward)] if flat else [])
    rows = []
    trace: list = []
    with no_grad():
        usm_forward(z, t, ctx, params, config, trace=trace)
        for name, fn in models:
            for _ in range(warmup):
                fn(z, t, ctx, params, config)
            for r in range(reps):
                with ActivationTracker() as tracker:
                    start = time.perf_counter()
                    fn(z, t, ctx, params, config)
                    ms = 1e3 * (time.perf_counter() - start)
                rows.append(ProfileRow(name, r, ms, tracker.peak))
    return ProfileReport(rows=rows, ledger=trace, cost=flops_count(config))
