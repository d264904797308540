"""Differentiable primitives used by the B2F networks and the converter.

Every function takes and returns float64 ``torch.Tensor`` values; autograd
records the tape. Leading batch dimensions are allowed wherever the layout is
``[..., T, C]`` or ``[..., C]``.
"""
from __future__ import annotations

import math

import torch

from .rng import RngState

DTYPE = torch.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def linear(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """``y = x W + b`` over the last axis of ``x``."""
    if W.dim() != 2:
        raise ShapeError(f"linear: weight must be 2-D, got shape {tuple(W.shape)}")
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(
            f"linear: input width {x.shape[-1]} does not match weight rows {W.shape[0]} "
            f"(x {tuple(x.shape)}, W {tuple(W.shape)})"
        )
    y = x @ W
    if b is not None:
        if b.shape != (W.shape[1],):
            raise ShapeError(f"linear: bias shape {tuple(b.shape)} != ({W.shape[1]},)")
        y = y + b
    return y


def conv1d_k3p1(x: torch.Tensor, K: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """Temporal convolution, kernel 3, one zero frame of padding at each end.

    ``x`` is ``[..., T, C_in]``, ``K`` is ``[3, C_in, C_out]``; tap 0 looks one
    frame back, tap 2 one frame ahead. Output length equals ``T``.
    """
    if x.dim() < 2 or x.shape[-2] < 1:
        raise ShapeError("conv1d_k3p1: empty sequence")
    if K.dim() != 3 or K.shape[0] != 3:
        raise ShapeError(f"conv1d_k3p1: kernel must be [3, C_in, C_out], got {tuple(K.shape)}")
    if x.shape[-1] != K.shape[1]:
        raise ShapeError(f"conv1d_k3p1: input channels {x.shape[-1]} != kernel channels {K.shape[1]}")
    pad = torch.zeros(*x.shape[:-2], 1, x.shape[-1], dtype=x.dtype)
    xp = torch.cat([pad, x, pad], dim=-2)
    T = x.shape[-2]
    y = xp[..., 0:T, :] @ K[0] + xp[..., 1 : T + 1, :] @ K[1] + xp[..., 2 : T + 2, :] @ K[2]
    if b is not None:
        y = y + b
    return y


def layer_norm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if x.shape[-1] < 1 or gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm: channel axis {x.shape[-1]} vs gamma {tuple(gamma.shape)} / beta {tuple(beta.shape)}"
        )
    mean = x.mean(dim=-1, keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=-1, keepdim=True)
    return centered / torch.sqrt(var + eps) * gamma + beta


def l2_normalize(x: torch.Tensor, floor: float = 1e-12) -> torch.Tensor:
    norm = torch.sqrt((x * x).sum(dim=-1, keepdim=True))
    return x / norm.clamp_min(floor)


def attention_weights(q: torch.Tensor, k: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax of ``q k^T / sqrt(dh)`` over the key axis.

    ``mask`` is boolean, broadcastable to ``[..., Tq, Tk]``; True marks a
    blocked key.
    """
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(mask, float("-inf"))
    return torch.softmax(scores, dim=-1)


def multi_head_attention(
    query: torch.Tensor,
    key: torch.Tensor,
    value: torch.Tensor,
    params: dict[str, torch.Tensor],
    heads: int,
    mask: torch.Tensor | None = None,
    return_weights: bool = False,
):
    """Scaled dot-product attention over ``heads`` heads with in/out projections.

    ``params`` holds ``wq, bq, wk, wv, bv, wo, bo``. There is no key bias: it
    shifts every score of a query by the same amount and cancels in the
    softmax. Query width and key/value width may differ (cross-attention onto
    an encoder memory); the model width is ``wq.shape[1]``.
    """
    d_model = params["wq"].shape[1]
    if d_model % heads != 0:
        raise ShapeError(f"multi_head_attention: model width {d_model} not divisible by {heads} heads")
    dh = d_model // heads

    def split(t):  # [..., T, H*dh] -> [..., H, T, dh]
        return t.reshape(*t.shape[:-1], heads, dh).transpose(-2, -3)

    q = split(linear(query, params["wq"], params["bq"]))
    k = split(linear(key, params["wk"]))
    v = split(linear(value, params["wv"], params["bv"]))
    w = attention_weights(q, k, mask)
    ctx = (w @ v).transpose(-2, -3)
    ctx = ctx.reshape(*ctx.shape[:-2], d_model)
    out = linear(ctx, params["wo"], params["bo"])
    return (out, w) if return_weights else out


def sinusoidal_pe(T: int, C: int) -> torch.Tensor:
    """Interleaved encoding: even channels ``sin(t w_i)``, odd channels ``cos(t w_i)``."""
    if C % 2 != 0:
        raise ShapeError(f"sinusoidal_pe: channel count must be even, got {C}")
    pos = torch.arange(T, dtype=DTYPE).unsqueeze(1)
    freq = torch.exp(torch.arange(0, C, 2, dtype=DTYPE) * (-math.log(10000.0) / C))
    pe = torch.zeros(T, C, dtype=DTYPE)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)
    return pe


class _StraightThrough(torch.autograd.Function):
    """Exact one-hot forward, identity backward onto the soft sample."""

    @staticmethod
    def forward(ctx, soft):
        idx = soft.argmax(dim=-1, keepdim=True)
        return torch.zeros_like(soft).scatter_(-1, idx, 1.0)

    @staticmethod
    def backward(ctx, grad):
        return grad


def gumbel_softmax(
    logits: torch.Tensor,
    tau: float,
    rng: RngState | None = None,
    hard: bool = False,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Gumbel-Softmax sample over the last axis.

    Noise comes from ``rng`` unless given explicitly via ``noise``. In hard
    mode the forward value is the one-hot argmax of the soft sample and the
    gradient is the soft sample's (straight-through).
    """
    if not tau > 0:
        raise ValueError(f"gumbel_softmax: tau must be > 0, got {tau}")
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax: need an rng or explicit noise")
        noise = rng.gumbel(tuple(logits.shape))
    soft = torch.softmax((logits + noise) / tau, dim=-1)
    if hard:
        return _StraightThrough.apply(soft)
    return soft
