"""The U-shaped network of main blocks.

Tokens are the h*w latent cells (1x1 patches) in row-major order. The encoder
runs 12 main blocks and halves the grid after blocks 3, 6 and 9, the single
bottleneck block sees h*w/64 tokens, and the decoder mirrors the encoder with
transposed convolutions before its blocks 4, 7 and 10. Decoder block j first
fuses the output of encoder block 13 - j, which runs at the same resolution.
Scan configs advance by one per block in execution order (0..24).
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .scan_paths import N_BLOCKS, ScanPath, generate_scan, scan_for_block
from .ssm import MambaBlockParams, init_mamba_params, mamba_block
from .tensor import (Tensor, _as_tensor, add, concat, conv_down, conv_up, layer_norm, linear,
                     matmul, mul, permute_rows, reshape, scale, silu, softmax, split,
                     transpose)


@dataclass(frozen=True)
class ModelConfig:
    h: int = 8
    w: int = 8
    c: int = 4
    D: int = 16
    N: int = 8
    expand: int = 2
    k_conv: int = 4
    n_enc: int = 12
    n_mid: int = 1
    n_dec: int = 12
    downsample_after: tuple = (3, 6, 9)
    n_heads: int = 2
    ctx_dim: int = 8
    n_classes: int = 0
    t_freq_dim: int = 32
    use_text: bool = False
    use_skips: bool = True
    use_conv: bool = True

    def __post_init__(self):
        object.__setattr__(self, "downsample_after", tuple(int(a) for a in self.downsample_after))
        if self.n_enc + self.n_mid + self.n_dec != N_BLOCKS:
            raise ValueError(f"block layout {self.n_enc}/{self.n_mid}/{self.n_dec} must total {N_BLOCKS}")
        if self.n_enc != self.n_dec or self.n_mid != 1:
            raise ValueError("decoder must mirror the encoder around a single bottleneck block")
        if any(not 1 <= a < self.n_enc for a in self.downsample_after):
            raise ValueError(f"downsample positions {self.downsample_after} outside the encoder")
        f = self.reduction
        if self.h % f or self.w % f:
            raise ValueError(f"grid {self.h}x{self.w} must be divisible by {f}")
        if self.D % self.n_heads:
            raise ValueError(f"hidden size {self.D} not divisible by {self.n_heads} heads")
        if self.t_freq_dim % 2:
            raise ValueError("t_freq_dim must be even")
        for name in ("c", "D", "N", "expand", "k_conv", "ctx_dim", "n_heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def reduction(self) -> int:
        return 2 ** len(self.downsample_after)

    @property
    def upsample_before(self) -> tuple:
        """Decoder block indices (1-based) preceded by a transposed conv."""
        return tuple(sorted(self.n_enc + 1 - a for a in self.downsample_after))

    @property
    def E(self) -> int:
        return self.expand * self.D

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)

    def stage_ledger(self) -> dict:
        """Token count seen by every block, per section, in execution order."""
        hh, ww = self.h, self.w
        enc, dec = [], []
        for j in range(1, self.n_enc + 1):
            enc.append(hh * ww)
            if j in self.downsample_after:
                hh, ww = hh // 2, ww // 2
        mid = [hh * ww]
        for j in range(1, self.n_dec + 1):
            if j in self.upsample_before:
                hh, ww = hh * 2, ww * 2
            dec.append(hh * ww)
        return {"encoder": enc, "middle": mid, "decoder": dec}


@dataclass
class CrossAttnParams:
    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor


@dataclass
class BlockParams:
    mod_w: Tensor                # (D, 3D) -> shift, scale, gate
    mod_b: Tensor                # (3D,)
    mamba: MambaBlockParams
    xattn: CrossAttnParams | None = None


@dataclass
class ConvParams:
    kernel: Tensor               # (2, 2, D, D)
    bias: Tensor


@dataclass
class LinearParams:
    weight: Tensor
    bias: Tensor


@dataclass
class TimestepMLP:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class UsmParams:
    in_proj: LinearParams
    out_proj: LinearParams
    temb: TimestepMLP
    blocks: list = field(default_factory=list)
    down: list = field(default_factory=list)
    up: list = field(default_factory=list)
    skips: list = field(default_factory=list)
    class_embed: Tensor | None = None


def init_params(config: ModelConfig, seed: int | np.random.Generator = 0, std: float = 0.02) -> UsmParams:
    """Fresh parameters.

    The AdaLN modulation maps, the cross-attention output projections and
    ``out_proj`` start at zero, so every block is an identity and the network
    output is exactly zero at init.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    D = config.D

    def normal(*shape):
        return Tensor(rng.normal(0.0, std, shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    blocks = []
    for _ in range(N_BLOCKS):
        xattn = None
        if config.use_text:
            xattn = CrossAttnParams(W_q=normal(D, D), W_k=normal(config.ctx_dim, D),
                                    W_v=normal(config.ctx_dim, D), W_o=zeros(D, D))
        blocks.append(BlockParams(
            mod_w=zeros(D, 3 * D), mod_b=zeros(3 * D),
            mamba=init_mamba_params(rng, D, config.N, config.expand, config.k_conv, std),
            xattn=xattn))
    n_down = len(config.downsample_after)
    return UsmParams(
        in_proj=LinearParams(normal(config.c, D), zeros(D)),
        out_proj=LinearParams(zeros(D, config.c), zeros(config.c)),
        temb=TimestepMLP(normal(config.t_freq_dim, D), zeros(D), normal(D, D), zeros(D)),
        blocks=blocks,
        down=[ConvParams(normal(2, 2, D, D), zeros(D)) for _ in range(n_down)],
        up=[ConvParams(normal(2, 2, D, D), zeros(D)) for _ in range(n_down)],
        skips=[LinearParams(normal(2 * D, D), zeros(D)) for _ in range(config.n_dec)]
        if config.use_skips else [],
        class_embed=normal(config.n_classes, config.ctx_dim)
        if config.use_text and config.n_classes > 0 else None,
    )


# ---------------------------------------------------------------- conditioning

def timestep_features(t, dim: int) -> np.ndarray:
    """Sinusoidal features ``[sin(1000 t w_j), cos(1000 t w_j)]``, w_j = 10000^(-2j/dim)."""
    if dim % 2:
        raise ValueError(f"timestep feature size must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    args = 1000.0 * t[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def timestep_embed(t, mlp: TimestepMLP) -> Tensor:
    """Sinusoidal features of ``t`` passed through a two-layer silu MLP."""
    feats = Tensor(timestep_features(t, mlp.w1.shape[0]))
    return linear(silu(linear(feats, mlp.w1, mlp.b1)), mlp.w2, mlp.b2)


def adaln_modulate(x: Tensor, t_emb: Tensor, mod_w: Tensor, mod_b: Tensor) -> tuple[Tensor, Tensor]:
    """Shift and scale the normalised tokens from the timestep embedding.

    Returns ``(LN(x) * (1 + scale) + shift, gate)``; the gate multiplies the
    block's residual branch.
    """
    D = x.shape[-1]
    params = linear(silu(t_emb), mod_w, mod_b)
    if params.ndim == 2:
        params = reshape(params, (params.shape[0], 1, 3 * D))
    shift, sc, gate = split(params, [D, D, D])
    x_mod = add(mul(layer_norm(x), add(sc, 1.0)), shift)
    return x_mod, gate


def cross_attention(x: Tensor, ctx: Tensor, p: CrossAttnParams, n_heads: int) -> Tensor:
    """Multi-head attention from tokens to context rows; returns the update only.

    Queries come from the layer-normalised tokens. ``ctx`` is (M, ctx_dim) or
    (B, M, ctx_dim).
    """
    ctx = _as_tensor(ctx)
    if ctx.shape[-2] == 0:
        raise ValueError("cross_attention: context must have at least one row")
    batched = x.ndim == 3
    if not batched:
        x = reshape(x, (1,) + x.shape)
    if ctx.ndim == 2:
        ctx = reshape(ctx, (1,) + ctx.shape)
    B, L, D = x.shape
    M = ctx.shape[1]
    dh = D // n_heads
    q = transpose(reshape(linear(layer_norm(x), p.W_q), (B, L, n_heads, dh)), (0, 2, 1, 3))
    k = transpose(reshape(linear(ctx, p.W_k), (ctx.shape[0], M, n_heads, dh)), (0, 2, 3, 1))
    v = transpose(reshape(linear(ctx, p.W_v), (ctx.shape[0], M, n_heads, dh)), (0, 2, 1, 3))
    attn = softmax(scale(matmul(q, k), 1.0 / math.sqrt(dh)))
    out = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (B, L, D))
    out = linear(out, p.W_o)
    return out if batched else reshape(out, (L, D))


def main_block(x: Tensor, t_emb: Tensor, ctx, bp: BlockParams, path: ScanPath,
               config: ModelConfig) -> Tensor:
    """AdaLN -> gated Mamba residual -> optional cross-attention residual."""
    x_mod, gate = adaln_modulate(x, t_emb, bp.mod_w, bp.mod_b)
    x = add(x, mul(gate, mamba_block(x_mod, bp.mamba, path, config.use_conv)))
    if config.use_text and ctx is not None and bp.xattn is not None:
        x = add(x, cross_attention(x, ctx, bp.xattn, config.n_heads))
    return x


def skip_fuse(dec: Tensor, enc: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Concatenate along the hidden axis and project 2D -> D."""
    if dec.shape != enc.shape:
        raise ValueError(f"skip_fuse: decoder {dec.shape} and encoder {enc.shape} features differ")
    return linear(concat([dec, enc], axis=-1), weight, bias)


# ---------------------------------------------------------------- full network

def class_context(params: UsmParams, labels) -> Tensor:
    """One context row per sample from the learned class table: (B, 1, ctx_dim)."""
    if params.class_embed is None:
        raise ValueError("model has no class embedding table")
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    rows = permute_rows(params.class_embed, labels, axis=0)
    return reshape(rows, (labels.size, 1, rows.shape[-1]))


def _tokens_in(z, config: ModelConfig) -> tuple[Tensor, bool]:
    z = _as_tensor(z)
    batched = z.ndim == 4
    if z.ndim not in (3, 4) or z.shape[-3:] != (config.c, config.h, config.w):
        raise ValueError(f"input shape {z.shape} does not match config (c, h, w) = "
                         f"{(config.c, config.h, config.w)}")
    if not batched:
        z = reshape(z, (1,) + z.shape)
    B = z.shape[0]
    x = transpose(reshape(z, (B, config.c, config.h * config.w)), (0, 2, 1))
    return x, batched


def _tokens_out(x: Tensor, config: ModelConfig, batched: bool) -> Tensor:
    B = x.shape[0]
    out = reshape(transpose(x, (0, 2, 1)), (B, config.c, config.h, config.w))
    return out if batched else reshape(out, out.shape[1:])


def _prepare(z, t, ctx, params: UsmParams, config: ModelConfig):
    x, batched = _tokens_in(z, config)
    B = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (B,))
    t_emb = timestep_embed(t, params.temb)
    if ctx is not None and not config.use_text:
        warnings.warn("context supplied but use_text is off; ignoring it", stacklevel=3)
        ctx = None
    return linear(x, params.in_proj.weight, params.in_proj.bias), t_emb, ctx, batched


def _grid(x: Tensor, hh: int, ww: int) -> Tensor:
    return reshape(x, (x.shape[0], hh, ww, x.shape[-1]))


def _seq(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], x.shape[1] * x.shape[2], x.shape[3]))


def usm_forward(z, t, ctx, params: UsmParams, config: ModelConfig, trace: list | None = None) -> Tensor:
    """Velocity prediction for latents ``z`` of shape (c, h, w) or (B, c, h, w).

    ``trace``, when given, receives ``(section, block_index, n_tokens)`` for every
    main block in execution order.
    """
    x, t_emb, ctx, batched = _prepare(z, t, ctx, params, config)
    hh, ww = config.h, config.w
    k = 0

    def run(x, section):
        nonlocal k
        path = generate_scan(scan_for_block(k), hh, ww)
        if trace is not None:
            trace.append((section, k, hh * ww))
        x = main_block(x, t_emb, ctx, params.blocks[k], path, config)
        k += 1
        return x

    skips = []
    n_down = 0
    for j in range(1, config.n_enc + 1):
        x = run(x, "encoder")
        skips.append(x)
        if j in config.downsample_after:
            d = params.down[n_down]
            x = _seq(conv_down(_grid(x, hh, ww), d.kernel, d.bias))
            hh, ww = hh // 2, ww // 2
            n_down += 1

    x = run(x, "middle")

    n_up = 0
    for j in range(1, config.n_dec + 1):
        if j in config.upsample_before:
            u = params.up[n_up]
            x = _seq(conv_up(_grid(x, hh, ww), u.kernel, u.bias))
            hh, ww = hh * 2, ww * 2
            n_up += 1
        if config.use_skips:
            s = params.skips[j - 1]
            x = skip_fuse(x, skips[config.n_enc - j], s.weight, s.bias)
        x = run(x, "decoder")

    x = linear(x, params.out_proj.weight, params.out_proj.bias)
    return _tokens_out(x, config, batched)


def flat_forward(z, t, ctx, params: UsmParams, config: ModelConfig) -> Tensor:
    """Reference without the U-shape: all 25 blocks at full length, no resampling or skips."""
    x, t_emb, ctx, batched = _prepare(z, t, ctx, params, config)
    for k in range(N_BLOCKS):
        path = generate_scan(scan_for_block(k), config.h, config.w)
        x = main_block(x, t_emb, ctx, params.blocks[k], path, config)
    x = linear(x, params.out_proj.weight, params.out_proj.bias)
    return _tokens_out(x, config, batched)
