"""Multi-head scaled dot-product attention over flattened feature maps."""
from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F


def attention_weights(q: torch.Tensor, k: torch.Tensor, heads: int) -> torch.Tensor:
    """Row-stochastic ``softmax(Q K^T / sqrt(d_k))`` per head.

    ``q`` is ``(..., Nq, d)`` and ``k`` is ``(..., Nk, d)``; the result is
    ``(..., heads, Nq, Nk)``.
    """
    d = q.shape[-1]
    if d % heads:
        raise ValueError(f"feature width {d} is not divisible by heads={heads}")
    dk = d // heads
    qh = q.unflatten(-1, (heads, dk)).transpose(-3, -2)
    kh = k.unflatten(-1, (heads, dk)).transpose(-3, -2)
    scores = qh @ kh.transpose(-2, -1) / math.sqrt(dk)
    return torch.softmax(scores, dim=-1)


def multihead_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int) -> torch.Tensor:
    """Heads-concatenated attention output, before any output projection."""
    w = attention_weights(q, k, heads)
    d = v.shape[-1]
    vh = v.unflatten(-1, (heads, d // heads)).transpose(-3, -2)
    out = w @ vh
    return out.transpose(-3, -2).flatten(-2)


def cross_attention(q, k, v, heads: int, out_weight=None, out_bias=None) -> torch.Tensor:
    """Attention of queries ``q`` over keys/values ``k``, ``v`` with an output projection.

    With no projection weights given the projection is the identity.
    """
    out = multihead_attention(q, k, v, heads)
    if out_weight is not None:
        out = F.linear(out, out_weight, out_bias)
    return out


def self_attention(x: torch.Tensor, heads: int, out_weight=None, out_bias=None) -> torch.Tensor:
    return x + cross_attention(x, x, x, heads, out_weight, out_bias)


class MultiHeadAttention(nn.Module):
    """Learned Q/K/V/output projections around :func:`cross_attention`."""

    def __init__(self, dim: int, heads: int, context_dim: int | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim={dim} is not divisible by heads={heads}")
        context_dim = dim if context_dim is None else context_dim
        self.heads = heads
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(context_dim, dim)
        self.to_v = nn.Linear(context_dim, dim)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        context = x if context is None else context
        q, k, v = self.to_q(x), self.to_k(context), self.to_v(context)
        return cross_attention(q, k, v, self.heads, self.to_out.weight, self.to_out.bias)


def _groups(ch: int) -> int:
    return math.gcd(ch, 8)


def positional_encoding(h: int, w: int, ch: int, device=None, dtype=None) -> torch.Tensor:
    """Fixed 2-D sinusoidal code of shape ``(h*w, ch)``: half the channels encode the row, half the column."""
    half = ch // 2
    out = torch.zeros(h, w, ch, device=device, dtype=dtype or torch.float32)
    for axis, (size, lo) in enumerate(((h, 0), (w, half))):
        n = (half if axis == 0 else ch - half) // 2
        if n == 0:
            continue
        pos = torch.arange(size, device=device, dtype=out.dtype)[:, None]
        freq = torch.exp(-math.log(100.0) * torch.arange(n, device=device, dtype=out.dtype) / max(n, 1))
        enc = torch.cat([torch.sin(pos * freq), torch.cos(pos * freq)], dim=1)
        if axis == 0:
            out[:, :, lo:lo + 2 * n] = enc[:, None, :]
        else:
            out[:, :, lo:lo + 2 * n] = enc[None, :, :]
    return out.reshape(h * w, ch)


class SpatialSelfAttention(nn.Module):
    """Residual self-attention over the ``H*W`` positions of a feature map."""

    def __init__(self, ch: int, heads: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(ch), ch)
        self.attn = MultiHeadAttention(ch, heads)

    def forward(self, x):
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        out = self.attn(tokens)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class SpatialCrossAttention(nn.Module):
    """Residual cross-attention: queries from ``x``, keys/values from ``context``."""

    def __init__(self, ch: int, context_ch: int, heads: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(ch), ch)
        self.norm_ctx = nn.GroupNorm(_groups(context_ch), context_ch)
        self.attn = MultiHeadAttention(ch, heads, context_dim=context_ch)

    def forward(self, x, context):
        b, c, h, w = x.shape
        q = self.norm(x).flatten(2).transpose(1, 2)
        kv = self.norm_ctx(context).flatten(2).transpose(1, 2)
        # queries and keys carry their grid position so the condition can be read off by location
        q = q + positional_encoding(h, w, c, x.device, x.dtype)
        ch, cw = context.shape[-2:]
        kv = kv + positional_encoding(ch, cw, kv.shape[-1], x.device, x.dtype)
        out = self.attn(q, kv)
        return x + out.transpose(1, 2).reshape(b, c, h, w)
