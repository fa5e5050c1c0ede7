"""Transformer building blocks shared by the encoders, Q-Formers and decoder.

All modules operate on ``[..., n, d]`` tensors so frames can be batched along a
leading axis. Linear maps are created through ``make_linear`` so the decoder can
swap in LoRA-wrapped layers.
"""

from __future__ import annotations

import math
from typing import Callable

import torch
from torch import nn

LinearFactory = Callable[..., nn.Module]


def init_linear(layer: nn.Linear, generator: torch.Generator | None = None) -> nn.Linear:
    """Scaled Gaussian weights (std 1/sqrt(fan_in)), zero bias."""
    with torch.no_grad():
        w = torch.randn(layer.weight.shape, generator=generator, dtype=layer.weight.dtype)
        layer.weight.copy_(w / math.sqrt(layer.in_features))
        if layer.bias is not None:
            layer.bias.zero_()
    return layer


def scaled_attention(q, k, v, mask=None):
    """Softmax attention over the permitted keys only.

    ``mask`` is boolean and broadcastable to ``[..., n_q, n_k]``; False entries
    are removed from the softmax support (−inf logits), so their weight is
    exactly zero. Returns ``(output, weights)``.
    """
    logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        logits = logits.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    return weights @ v, weights


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_kv: int | None = None,
                 make_linear: LinearFactory = nn.Linear):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        d_kv = d_kv or d_model
        self.n_heads = n_heads
        self.q_proj = make_linear(d_model, d_model)
        # no key bias: softmax is invariant to it, so its gradient is identically zero
        self.k_proj = make_linear(d_kv, d_model, bias=False)
        self.v_proj = make_linear(d_kv, d_model)
        self.o_proj = make_linear(d_model, d_model)

    def _split(self, x):
        *lead, n, d = x.shape
        return x.reshape(*lead, n, self.n_heads, d // self.n_heads).transpose(-3, -2)

    def forward(self, x, kv=None, mask=None, return_weights=False):
        kv = x if kv is None else kv
        q, k, v = self._split(self.q_proj(x)), self._split(self.k_proj(kv)), self._split(self.v_proj(kv))
        if mask is not None:
            mask = mask.unsqueeze(-3)  # broadcast over heads
        out, weights = scaled_attention(q, k, v, mask)
        out = out.transpose(-3, -2).reshape(*x.shape[:-1], -1)
        out = self.o_proj(out)
        return (out, weights) if return_weights else out


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int, make_linear: LinearFactory = nn.Linear):
        super().__init__()
        self.fc1 = make_linear(d_model, hidden)
        self.fc2 = make_linear(hidden, d_model)

    def forward(self, x):
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm self-attention + feed-forward block with residuals."""

    def __init__(self, d_model: int, n_heads: int, ffn_mult: int = 4,
                 make_linear: LinearFactory = nn.Linear):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, make_linear=make_linear)
        self.ln2 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_mult * d_model, make_linear=make_linear)

    def forward(self, x, mask=None):
        x = x + self.attn(self.ln1(x), mask=mask)
        return x + self.ffn(self.ln2(x))


def reset_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministically re-initialize every Linear in ``module``."""
    for sub in module.modules():
        if isinstance(sub, nn.Linear):
            init_linear(sub, generator)
