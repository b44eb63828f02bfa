"""Attention primitives: scaled dot-product, multi-head blocks with residual
aggregation, feed-forward, and the composed decoder block.

All forward functions accept and return autodiff Tensors so the same code
path serves training, inference, and gradient checks. Attention weights can
be captured per (layer, head, role) for the analysis tools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

ROLE_SELF = "self"
ROLE_CROSS = "cross"


@dataclass
class AttentionRecord:
    """Softmax weights of one head, one layer, one role, one forward pass."""
    layer: int
    head: int
    role: str
    weights: np.ndarray  # (L_q, L_kv), rows sum to 1


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor

    @staticmethod
    def init(n_in: int, n_out: int, rng: np.random.Generator, std: float = 0.02,
             bias: float = 0.0) -> "LinearParams":
        return LinearParams(w=ad.param(rng.normal(0.0, std, size=(n_in, n_out))),
                            b=ad.param(np.full(n_out, bias)))

    @staticmethod
    def zeros(n_in: int, n_out: int) -> "LinearParams":
        return LinearParams(w=ad.param(np.zeros((n_in, n_out))),
                            b=ad.param(np.zeros(n_out)))


def linear(x: Tensor, p: LinearParams) -> Tensor:
    return ad.matmul(x, p.w) + p.b


@dataclass
class MhaParams:
    """Projections for one multi-head attention unit."""
    q: LinearParams
    k: LinearParams
    v: LinearParams
    o: LinearParams
    heads: int
    scale: float  # similarity scaling, 1/sqrt(d_h) unless disabled

    @staticmethod
    def init(dim: int, kv_dim: int, heads: int, rng: np.random.Generator,
             use_scale: bool = True, scale: float | None = None) -> "MhaParams":
        if dim % heads:
            raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
        if scale is None:
            scale = 1.0 / math.sqrt(dim // heads) if use_scale else 1.0
        return MhaParams(q=LinearParams.init(dim, dim, rng),
                         k=LinearParams.init(kv_dim, dim, rng),
                         v=LinearParams.init(kv_dim, dim, rng),
                         o=LinearParams.init(dim, dim, rng),
                         heads=heads, scale=scale)

    @staticmethod
    def zeros(dim: int, kv_dim: int, heads: int, use_scale: bool = True,
              scale: float | None = None) -> "MhaParams":
        if scale is None:
            scale = 1.0 / math.sqrt(dim // heads) if use_scale else 1.0
        return MhaParams(q=LinearParams.zeros(dim, dim), k=LinearParams.zeros(kv_dim, dim),
                         v=LinearParams.zeros(kv_dim, dim), o=LinearParams.zeros(dim, dim),
                         heads=heads, scale=scale)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @staticmethod
    def init(dim: int) -> "LayerNormParams":
        return LayerNormParams(gamma=ad.param(np.ones(dim)), beta=ad.param(np.zeros(dim)))

    @staticmethod
    def zeros(dim: int) -> "LayerNormParams":
        return LayerNormParams(gamma=ad.param(np.zeros(dim)), beta=ad.param(np.zeros(dim)))


def layer_norm(x: Tensor, p: LayerNormParams, eps: float = 1e-5) -> Tensor:
    mu = ad.tmean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.tmean(xc * xc, axis=-1, keepdims=True)
    return xc / ad.sqrt(var + eps) * p.gamma + p.beta


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float) -> tuple[Tensor, Tensor]:
    """softmax(scale * q k^T) v over the last two axes.

    q: (..., L_q, d_h); k, v: (..., L_kv, d_h). Returns (output, weights).
    """
    q, k, v = ad.as_tensor(q), ad.as_tensor(k), ad.as_tensor(v)
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(
            f"key length {k.shape[-2]} != value length {v.shape[-2]}")
    scores = ad.matmul(q, ad.transpose(k, _swap_last(k.ndim))) * scale
    weights = ad.softmax(scores, axis=-1)
    return ad.matmul(weights, v), weights


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    L, d = x.shape
    return ad.transpose(ad.reshape(x, (L, heads, d // heads)), (1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    h, L, dh = x.shape
    return ad.reshape(ad.transpose(x, (1, 0, 2)), (L, h * dh))


def multi_head_attention(q_seq: Tensor, kv_seq: Tensor, params: MhaParams,
                         residual_base: Tensor | None = None,
                         capture: list[AttentionRecord] | None = None,
                         layer: int = 0, role: str = ROLE_CROSS) -> Tensor:
    """Residual multi-head aggregation: base + project(concat_h(A_h V_h)).

    The residual base defaults to `q_seq`; pre-normalized blocks pass the
    un-normalized stream separately.
    """
    q_seq, kv_seq = ad.as_tensor(q_seq), ad.as_tensor(kv_seq)
    d = params.q.w.shape[0]
    if q_seq.shape[-1] != d:
        raise ShapeError(f"query dim {q_seq.shape[-1]} != param dim {d}")
    if kv_seq.shape[-1] != params.k.w.shape[0]:
        raise ShapeError(
            f"context dim {kv_seq.shape[-1]} != param kv dim {params.k.w.shape[0]}")
    if d % params.heads:
        raise ConfigError(f"dim {d} not divisible by {params.heads} heads")

    qh = _split_heads(linear(q_seq, params.q), params.heads)
    kh = _split_heads(linear(kv_seq, params.k), params.heads)
    vh = _split_heads(linear(kv_seq, params.v), params.heads)
    out, weights = attention(qh, kh, vh, params.scale)
    if capture is not None:
        for h in range(params.heads):
            capture.append(AttentionRecord(layer=layer, head=h, role=role,
                                           weights=weights.value[h].copy()))
    out = linear(_merge_heads(out), params.o)
    base = q_seq if residual_base is None else residual_base
    return base + out


def self_attention(q_seq: Tensor, params: MhaParams,
                   residual_base: Tensor | None = None,
                   capture: list[AttentionRecord] | None = None,
                   layer: int = 0) -> Tensor:
    return multi_head_attention(q_seq, q_seq, params, residual_base=residual_base,
                                capture=capture, layer=layer, role=ROLE_SELF)


@dataclass
class BlockParams:
    """One transformer decoder block: self-attn, cross-attn, feed-forward."""
    sa: MhaParams
    ca: MhaParams
    ffw_in: LinearParams
    ffw_out: LinearParams
    ln_sa: LayerNormParams | None
    ln_ca: LayerNormParams | None
    ln_ffw: LayerNormParams | None
    norm_mode: str = "pre"  # off | pre | post

    @staticmethod
    def init(dim: int, kv_dim: int, heads: int, rng: np.random.Generator,
             ffw_mult: int = 4, norm_mode: str = "pre",
             use_scale: bool = True, scale: float | None = None) -> "BlockParams":
        _check_norm_mode(norm_mode)
        hidden = ffw_mult * dim
        norms = (LayerNormParams.init(dim), LayerNormParams.init(dim),
                 LayerNormParams.init(dim)) if norm_mode != "off" else (None, None, None)
        return BlockParams(
            sa=MhaParams.init(dim, dim, heads, rng, use_scale, scale),
            ca=MhaParams.init(dim, kv_dim, heads, rng, use_scale, scale),
            ffw_in=LinearParams.init(dim, hidden, rng),
            ffw_out=LinearParams.init(hidden, dim, rng),
            ln_sa=norms[0], ln_ca=norms[1], ln_ffw=norms[2],
            norm_mode=norm_mode)

    @staticmethod
    def zeros(dim: int, kv_dim: int, heads: int, ffw_mult: int = 4,
              norm_mode: str = "pre", use_scale: bool = True,
              scale: float | None = None) -> "BlockParams":
        """All-zero weights; the block then acts as the identity map."""
        _check_norm_mode(norm_mode)
        hidden = ffw_mult * dim
        norms = (LayerNormParams.zeros(dim), LayerNormParams.zeros(dim),
                 LayerNormParams.zeros(dim)) if norm_mode != "off" else (None, None, None)
        return BlockParams(
            sa=MhaParams.zeros(dim, dim, heads, use_scale, scale),
            ca=MhaParams.zeros(dim, kv_dim, heads, use_scale, scale),
            ffw_in=LinearParams.zeros(dim, hidden),
            ffw_out=LinearParams.zeros(hidden, dim),
            ln_sa=norms[0], ln_ca=norms[1], ln_ffw=norms[2],
            norm_mode=norm_mode)


def _check_norm_mode(mode: str) -> None:
    if mode not in ("off", "pre", "post"):
        raise ConfigError(f"unknown norm_mode {mode!r}")


def feed_forward(x: Tensor, p_in: LinearParams, p_out: LinearParams) -> Tensor:
    return linear(ad.gelu(linear(x, p_in)), p_out)


def decoder_block(q_seq: Tensor, context: Tensor, params: BlockParams,
                  capture: list[AttentionRecord] | None = None,
                  layer: int = 0) -> Tensor:
    """Self-attention, then cross-attention into `context`, then feed-forward,
    each with a residual path. Normalization placement follows `norm_mode`;
    pre-normalization touches only the query stream, never the context.
    """
    q_seq, context = ad.as_tensor(q_seq), ad.as_tensor(context)
    if context.shape[0] == 0:
        raise ShapeError("decoder block requires a nonempty context")
    mode = params.norm_mode
    if mode == "pre":
        x = self_attention(layer_norm(q_seq, params.ln_sa), params.sa,
                           residual_base=q_seq, capture=capture, layer=layer)
        x = multi_head_attention(layer_norm(x, params.ln_ca), context, params.ca,
                                 residual_base=x, capture=capture, layer=layer)
        return x + feed_forward(layer_norm(x, params.ln_ffw),
                                params.ffw_in, params.ffw_out)
    if mode == "post":
        x = layer_norm(self_attention(q_seq, params.sa, capture=capture, layer=layer),
                       params.ln_sa)
        x = layer_norm(multi_head_attention(x, context, params.ca,
                                            capture=capture, layer=layer),
                       params.ln_ca)
        return layer_norm(x + feed_forward(x, params.ffw_in, params.ffw_out),
                          params.ln_ffw)
    x = self_attention(q_seq, params.sa, capture=capture, layer=layer)
    x = multi_head_attention(x, context, params.ca, capture=capture, layer=layer)
    return x + feed_forward(x, params.ffw_in, params.ffw_out)
