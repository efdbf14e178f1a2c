"""Layer set shared by the panel VAE, the velocity field and the stitch model.

Attention layers carry no positional pathway at all: token order never
enters the computation, so self-attention is permutation equivariant and
attention pooling is permutation invariant.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

DTYPE = torch.float64


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


class MLP(nn.Module):
    def __init__(self, sizes, act: str = "gelu", final_act: bool = False):
        super().__init__()
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:]))
        self.act = act
        self.final_act = final_act

    def _act(self, x):
        if self.act == "relu":
            return F.relu(x)
        if self.act == "softplus":
            return F.softplus(x, beta=100)
        return F.gelu(x)

    def forward(self, x):
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1 or self.final_act:
                x = self._act(x)
        return x


class FourierFeatures(nn.Module):
    """``[x, sin(2^k pi x), cos(2^k pi x)]`` for k < n_freqs."""

    def __init__(self, n_freqs: int, in_dim: int = 2):
        super().__init__()
        self.register_buffer("freqs", (2.0 ** torch.arange(n_freqs, dtype=DTYPE)) * math.pi)
        self.out_dim = in_dim * (1 + 2 * n_freqs)

    def forward(self, x):
        xf = x[..., None] * self.freqs
        return torch.cat([x, torch.sin(xf).flatten(-2), torch.cos(xf).flatten(-2)], dim=-1)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 1000.0) -> torch.Tensor:
    """Sinusoidal embedding of scalar times ``t`` in [0, 1]; shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=t.dtype) / half)
    args = (t.reshape(-1, 1) * 1000.0) * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class MultiHeadAttention(nn.Module):
    """Multi-head attention from ``query`` tokens to ``context`` tokens.

    ``key_mask`` (B, N_ctx) marks valid context tokens with True; masked
    tokens receive exactly zero attention weight.  Self-attention is the
    special case ``context is query``.
    """

    def __init__(self, width: int, heads: int, context_width: int | None = None):
        super().__init__()
        if width % heads:
            raise ValueError("width must be divisible by heads")
        context_width = context_width or width
        self.heads = heads
        self.q = nn.Linear(width, width)
        self.k = nn.Linear(context_width, width)
        self.v = nn.Linear(context_width, width)
        self.out = nn.Linear(width, width)

    def forward(self, query, context=None, key_mask=None):
        context = query if context is None else context
        B, Nq, W = query.shape
        Nk = context.shape[1]
        if key_mask is not None and key_mask.shape != (B, Nk):
            raise ValueError(f"mask shape {tuple(key_mask.shape)} does not match tokens {(B, Nk)}")
        h = self.heads
        q = self.q(query).view(B, Nq, h, W // h).transpose(1, 2)
        k = self.k(context).view(B, Nk, h, W // h).transpose(1, 2)
        v = self.v(context).view(B, Nk, h, W // h).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(W // h)
        if key_mask is not None:
            logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        if key_mask is not None:
            # rows with every key masked produce NaN from softmax(-inf); zero them
            weights = torch.nan_to_num(weights, nan=0.0)
        y = (weights @ v).transpose(1, 2).reshape(B, Nq, W)
        return self.out(y)


def self_attention(layer: MultiHeadAttention, tokens, mask=None):
    return layer(tokens, None, mask)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + MLP block (no positional encoding)."""

    def __init__(self, width: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = MultiHeadAttention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = MLP([width, mlp_ratio * width, width])

    def forward(self, x, mask=None):
        x = x + self.attn(self.norm1(x), None, mask)
        x = x + self.mlp(self.norm2(x))
        if mask is not None:
            x = x * mask[..., None]
        return x


class AttentionPool(nn.Module):
    """Pool a token set to one vector with a learned query (order invariant)."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.query = nn.Parameter(torch.randn(1, 1, width, dtype=DTYPE) * 0.02)
        self.attn = MultiHeadAttention(width, heads)
        self.norm = nn.LayerNorm(width)

    def forward(self, x, mask=None):
        q = self.query.expand(x.shape[0], -1, -1)
        return self.attn(q, self.norm(x), mask)[:, 0]


def modulate(x, shift, scale):
    return x * (1 + scale[:, None]) + shift[:, None]
