"""Parameter-holding wrappers around :mod:`b2f.core.ops`.

All parameters are float64 and initialized from an explicit :class:`RngState`
so that two models built from equal seeds are bit-identical.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from . import ops
from .rng import RngState


def _param(values) -> nn.Parameter:
    return nn.Parameter(torch.as_tensor(values, dtype=ops.DTYPE).clone())


def _xavier(rng: RngState, shape, fan_in: int, fan_out: int) -> nn.Parameter:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return _param(rng.uniform(shape, -a, a))


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, rng: RngState):
        super().__init__()
        self.weight = _xavier(rng, (d_in, d_out), d_in, d_out)
        self.bias = _param(torch.zeros(d_out))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv1dK3(nn.Module):
    def __init__(self, d_in: int, d_out: int, rng: RngState):
        super().__init__()
        self.weight = _xavier(rng, (3, d_in, d_out), 3 * d_in, 3 * d_out)
        self.bias = _param(torch.zeros(d_out))

    def forward(self, x):
        return ops.conv1d_k3p1(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = _param(torch.ones(d))
        self.beta = _param(torch.zeros(d))

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, rng: RngState, d_kv: int | None = None):
        super().__init__()
        if d_model % heads != 0:
            raise ops.ShapeError(f"model width {d_model} not divisible by {heads} heads")
        d_kv = d_model if d_kv is None else d_kv
        self.heads = heads
        self.wq = _xavier(rng, (d_model, d_model), d_model, d_model)
        self.wk = _xavier(rng, (d_kv, d_model), d_kv, d_model)
        self.wv = _xavier(rng, (d_kv, d_model), d_kv, d_model)
        self.wo = _xavier(rng, (d_model, d_model), d_model, d_model)
        self.bq = _param(torch.zeros(d_model))
        self.bv = _param(torch.zeros(d_model))
        self.bo = _param(torch.zeros(d_model))

    def forward(self, query, key, value, mask=None, return_weights=False):
        params = {n: getattr(self, n) for n in ("wq", "bq", "wk", "wv", "bv", "wo", "bo")}
        return ops.multi_head_attention(query, key, value, params, self.heads, mask, return_weights)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, rng: RngState):
        super().__init__()
        self.fc1 = Linear(d_model, d_ff, rng)
        self.fc2 = Linear(d_ff, d_model, rng)

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x)))


class FFTBlock(nn.Module):
    """Self-attention then two position-wise k3 convolutions, each post-normed with a residual."""

    def __init__(self, d_model: int, heads: int, d_ff: int, rng: RngState):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.conv1 = Conv1dK3(d_model, d_ff, rng)
        self.conv2 = Conv1dK3(d_ff, d_model, rng)
        self.norm2 = LayerNorm(d_model)

    def forward(self, x):
        x = self.norm1(x + self.attn(x, x, x))
        return self.norm2(x + self.conv2(torch.relu(self.conv1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, d_ff: int, rng: RngState):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff, rng)
        self.norm2 = LayerNorm(d_model)

    def forward(self, x, mask=None):
        x = self.norm1(x + self.attn(x, x, x, mask))
        return self.norm2(x + self.ff(x))


class DecoderLayer(nn.Module):
    """Full (non-causal) self-attention, cross-attention onto ``memory``, feed-forward."""

    def __init__(self, d_model: int, heads: int, d_ff: int, d_memory: int, rng: RngState):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, heads, rng, d_kv=d_memory)
        self.norm2 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff, rng)
        self.norm3 = LayerNorm(d_model)

    def forward(self, x, memory):
        x = self.norm1(x + self.self_attn(x, x, x))
        x = self.norm2(x + self.cross_attn(x, memory, memory))
        return self.norm3(x + self.ff(x))
