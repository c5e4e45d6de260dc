"""Cross-modal attention fusion.

Each of the three modalities is translated into the other two timelines by a
cross-modal transformer (queries from the target sequence, keys/values from
the source), and the two translations targeting one modality are concatenated
along the feature axis. Sequences are batched time-major: (B, T, d), with an
optional (B, T) validity mask for padded positions.
"""

from __future__ import annotations

import numpy as np

from .tensor import (Tensor, ParameterRegistry, add, concat, conv1d, einsum,
                     glorot, layer_norm, mul, relu, reshape, scale, softmax)

NEG_INF = -1e30


def sinusoid_table(length: int, dim: int) -> np.ndarray:
    """Standard sin/cos position codes: even features sine, odd cosine."""
    if dim % 2 != 0:
        raise ValueError(f"positional embedding needs even dim, got {dim}")
    pos = np.arange(length)[:, None]
    j = np.arange(dim // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * j / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def positional_embed(h: Tensor) -> Tensor:
    """Add sinusoidal position codes along the time axis of (..., T, d)."""
    T, d = h.shape[-2], h.shape[-1]
    return add(h, Tensor(sinusoid_table(T, d)))


def _linear(x: Tensor, w: Tensor, b: Tensor | None, spec: str) -> Tensor:
    y = einsum(spec, x, w)
    return add(y, b) if b is not None else y


class CrossModalBlock:
    """One pre-layer-norm attention block: multi-head scaled dot-product
    attention from target queries onto source keys/values, residual paths,
    and a position-wise feed-forward sublayer."""

    def __init__(self, registry: ParameterRegistry, prefix: str, d_h: int,
                 heads: int, rng: np.random.Generator, ffn_mult: int = 4):
        if d_h % heads != 0:
            raise ValueError(f"d_h={d_h} not divisible by heads={heads}")
        self.d_h = d_h
        self.heads = heads
        self.d_k = d_h // heads
        reg = registry.register
        self.wq = reg(f"{prefix}.wq", glorot(rng, (d_h, d_h)))
        self.wk = reg(f"{prefix}.wk", glorot(rng, (d_h, d_h)))
        self.wv = reg(f"{prefix}.wv", glorot(rng, (d_h, d_h)))
        self.wo = reg(f"{prefix}.wo", glorot(rng, (d_h, d_h)))
        self.bq = reg(f"{prefix}.bq", np.zeros(d_h))
        self.bk = reg(f"{prefix}.bk", np.zeros(d_h))
        self.bv = reg(f"{prefix}.bv", np.zeros(d_h))
        self.bo = reg(f"{prefix}.bo", np.zeros(d_h))
        d_f = ffn_mult * d_h
        self.w1 = reg(f"{prefix}.ffn.w1", glorot(rng, (d_h, d_f)))
        self.b1 = reg(f"{prefix}.ffn.b1", np.zeros(d_f))
        self.w2 = reg(f"{prefix}.ffn.w2", glorot(rng, (d_f, d_h)))
        self.b2 = reg(f"{prefix}.ffn.b2", np.zeros(d_h))
        self.ln_q_g = reg(f"{prefix}.ln_q.gain", np.ones(d_h))
        self.ln_q_b = reg(f"{prefix}.ln_q.bias", np.zeros(d_h))
        self.ln_kv_g = reg(f"{prefix}.ln_kv.gain", np.ones(d_h))
        self.ln_kv_b = reg(f"{prefix}.ln_kv.bias", np.zeros(d_h))
        self.ln_ff_g = reg(f"{prefix}.ln_ff.gain", np.ones(d_h))
        self.ln_ff_b = reg(f"{prefix}.ln_ff.bias", np.zeros(d_h))
        self.last_attention: np.ndarray | None = None

    def attend(self, target: Tensor, source: Tensor,
               source_mask: np.ndarray | None = None) -> Tensor:
        B, Tq, _ = target.shape
        Tk = source.shape[1]
        H, dk = self.heads, self.d_k
        q = reshape(_linear(target, self.wq, self.bq, "btd,do->bto"),
                    (B, Tq, H, dk))
        k = reshape(_linear(source, self.wk, self.bk, "btd,do->bto"),
                    (B, Tk, H, dk))
        v = reshape(_linear(source, self.wv, self.bv, "btd,do->bto"),
                    (B, Tk, H, dk))
        logits = scale(einsum("bqhd,bkhd->bhqk", q, k), 1.0 / np.sqrt(dk))
        if source_mask is not None:
            bias = np.where(source_mask[:, None, None, :] > 0, 0.0, NEG_INF)
            logits = add(logits, Tensor(bias))
        attn = softmax(logits, axis=-1)
        self.last_attention = attn.data
        ctx = reshape(einsum("bhqk,bkhd->bqhd", attn, v), (B, Tq, H * dk))
        return _linear(ctx, self.wo, self.bo, "btd,do->bto")

    def __call__(self, target: Tensor, source0: Tensor,
                 source_mask: np.ndarray | None = None) -> Tensor:
        ln_t = layer_norm(target, self.ln_q_g, self.ln_q_b)
        ln_s = layer_norm(source0, self.ln_kv_g, self.ln_kv_b)
        h = add(self.attend(ln_t, ln_s, source_mask), ln_t)
        ln_h = layer_norm(h, self.ln_ff_g, self.ln_ff_b)
        ff = _linear(relu(_linear(ln_h, self.w1, self.b1, "btd,df->btf")),
                     self.w2, self.b2, "btf,fd->btd")
        return add(ff, ln_h)


class CrossModalTransformer:
    """Width-1 temporal convolution to the model width, sinusoidal position
    codes, then a stack of blocks that all attend to the layer-0 source
    encoding."""

    def __init__(self, registry: ParameterRegistry, prefix: str,
                 d_target: int, d_source: int, d_h: int, heads: int,
                 depth: int, rng: np.random.Generator,
                 source_positional: bool = True, conv_width: int = 1):
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        self.source_positional = source_positional
        self.conv_width = conv_width
        reg = registry.register
        self.target_kernel = reg(f"{prefix}.proj_t.kernel",
                                 glorot(rng, (conv_width, d_target, d_h),
                                        fan_in=conv_width * d_target,
                                        fan_out=d_h))
        self.target_bias = reg(f"{prefix}.proj_t.bias", np.zeros(d_h))
        self.source_kernel = reg(f"{prefix}.proj_s.kernel",
                                 glorot(rng, (conv_width, d_source, d_h),
                                        fan_in=conv_width * d_source,
                                        fan_out=d_h))
        self.source_bias = reg(f"{prefix}.proj_s.bias", np.zeros(d_h))
        self.blocks = [CrossModalBlock(registry, f"{prefix}.blk{i}", d_h,
                                       heads, rng)
                       for i in range(depth)]

    def encode(self, raw: Tensor, kernel: Tensor, bias: Tensor,
               positional: bool) -> Tensor:
        h = add(conv1d(raw, kernel, self.conv_width), bias)
        return positional_embed(h) if positional else h

    def __call__(self, target_raw: Tensor, source_raw: Tensor,
                 source_mask: np.ndarray | None = None) -> Tensor:
        z = self.encode(target_raw, self.target_kernel, self.target_bias,
                        positional=True)
        s0 = self.encode(source_raw, self.source_kernel, self.source_bias,
                         positional=self.source_positional)
        for block in self.blocks:
            z = block(z, s0, source_mask)
        return z


MODALITIES = ("t", "a", "v")

# (target, first source, second source); concatenation order per target
_BRANCHES = {"t": ("v", "a"), "a": ("t", "v"), "v": ("t", "a")}


class ModalityFusion:
    """Six cross-modal transformers producing the fused sequences.

    The fused sequence for target m concatenates the two translations into m
    along the feature axis, so its width is 2 * d_h and its length is the
    target's own length.
    """

    def __init__(self, registry: ParameterRegistry, dims: dict[str, int],
                 d_h: int, heads: int, depth: int, rng: np.random.Generator,
                 source_positional: bool = True):
        self.d_h = d_h
        self.transformers: dict[str, CrossModalTransformer] = {}
        for beta in MODALITIES:
            for alpha in _BRANCHES[beta]:
                name = f"fuse.{alpha}2{beta}"
                self.transformers[f"{alpha}2{beta}"] = CrossModalTransformer(
                    registry, name, d_target=dims[beta], d_source=dims[alpha],
                    d_h=d_h, heads=heads, depth=depth, rng=rng,
                    source_positional=source_positional)

    def __call__(self, sequences: dict[str, Tensor],
                 masks: dict[str, np.ndarray] | None = None
                 ) -> dict[str, Tensor]:
        masks = masks or {}
        fused = {}
        for beta in MODALITIES:
            parts = []
            for alpha in _BRANCHES[beta]:
                ct = self.transformers[f"{alpha}2{beta}"]
                parts.append(ct(sequences[beta], sequences[alpha],
                                masks.get(alpha)))
            z = concat(parts, axis=-1)
            if beta in masks:  # zero out padded target steps
                z = mul(z, Tensor(masks[beta][..., None]))
            fused[beta] = z
        return fused
