"""Query transformer: a fixed bank of learnable queries reads a variable-length
feature sequence through cross-attention and always emits ``n_q`` tokens.

The image Q-Former is conditioned on the frame's timestamp text. Condition
tokens join the keys of each block's self-attention but are never updated or
emitted.
"""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .errors import InputError, ShapeError
from .layers import FeedForward, MultiHeadAttention, reset_parameters
from .tokenizer import ConditionText
from .tokens import Provenance, TokenSeq


class QFormerBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_kv: int, ffn_mult: int = 4):
        super().__init__()
        self.ln_self = nn.LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, n_heads)
        self.ln_query = nn.LayerNorm(d_model)
        self.ln_kv = nn.LayerNorm(d_kv)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, d_kv=d_kv)
        self.ln_ffn = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_mult * d_model)

    def forward(self, q, kv, cond=None):
        h = self.ln_self(q)
        context = h if cond is None else torch.cat([self.ln_self(cond), h], dim=-2)
        q = q + self.self_attn(h, kv=context)
        q = q + self.cross_attn(self.ln_query(q), kv=self.ln_kv(kv))
        return q + self.ffn(self.ln_ffn(q))


class QFormer(nn.Module):
    def __init__(self, d_model: int = 64, n_queries: int = 32, n_blocks: int = 2, n_heads: int = 4,
                 d_kv: int | None = None, vocab_size: int = 0, max_condition_len: int = 32,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.queries = nn.Parameter(0.02 * torch.randn(n_queries, d_model, generator=generator))
        self.blocks = nn.ModuleList(
            QFormerBlock(d_model, n_heads, d_kv or d_model) for _ in range(n_blocks)
        )
        if vocab_size:
            self.text_embed = nn.Parameter(0.02 * torch.randn(vocab_size, d_model, generator=generator))
            self.text_pos = nn.Parameter(0.02 * torch.randn(max_condition_len, d_model, generator=generator))
        else:
            self.text_embed = self.text_pos = None
        reset_parameters(self, generator)

    @property
    def n_queries(self) -> int:
        return self.queries.shape[0]

    def embed_condition(self, token_ids: Sequence[int]) -> torch.Tensor:
        if self.text_embed is None:
            raise InputError("this Q-Former has no condition embedding")
        ids = torch.as_tensor(list(token_ids), dtype=torch.long)
        if len(ids) > self.text_pos.shape[0]:
            raise InputError(f"condition of {len(ids)} tokens exceeds {self.text_pos.shape[0]}")
        return self.text_embed[ids] + self.text_pos[: len(ids)]

    def forward(self, kv: torch.Tensor, condition: ConditionText | None = None,
                queries: torch.Tensor | None = None) -> torch.Tensor:
        if kv.shape[-2] < 1:
            raise InputError("Q-Former needs at least one key/value token")
        q = self.queries if queries is None else queries
        q = q.expand(*kv.shape[:-2], *q.shape)
        cond = None
        if condition is not None and len(condition.token_ids):
            cond = self.embed_condition(condition.token_ids).expand(*kv.shape[:-2], -1, -1)
        for block in self.blocks:
            q = block(q, kv, cond)
        return q


def qformer_forward(queries: torch.Tensor | None, kv: torch.Tensor, condition: ConditionText | None,
                    params: QFormer, provenance=Provenance.FRAME_GLOBAL) -> TokenSeq:
    """Compress ``kv`` [n_kv, d] into ``n_q`` tokens. ``queries=None`` uses the bank in ``params``."""
    if kv.ndim != 2:
        raise ShapeError(f"kv must be [n_kv, d], got {tuple(kv.shape)}")
    return TokenSeq(params(kv, condition, queries), provenance)


class GlobalLocalFusion(nn.Module):
    """Feature-axis concat of the two streams, linear map back to d_model, LayerNorm."""

    def __init__(self, d_model: int = 64, generator: torch.Generator | None = None):
        super().__init__()
        self.proj = nn.Linear(2 * d_model, d_model)
        self.norm = nn.LayerNorm(d_model)
        reset_parameters(self, generator)

    def forward(self, global_tokens: torch.Tensor, local_tokens: torch.Tensor) -> torch.Tensor:
        return self.norm(self.proj(torch.cat([global_tokens, local_tokens], dim=-1)))


def fuse_global_local(global_tokens: TokenSeq, local_tokens: TokenSeq, params: GlobalLocalFusion) -> TokenSeq:
    if global_tokens.provenance is not Provenance.FRAME_GLOBAL or local_tokens.provenance is not Provenance.FRAME_LOCAL:
        raise InputError(
            f"expected frame_global + frame_local, got {global_tokens.provenance.value} + {local_tokens.provenance.value}"
        )
    if global_tokens.tokens.shape != local_tokens.tokens.shape:
        raise ShapeError(
            f"stream shapes differ: {tuple(global_tokens.tokens.shape)} vs {tuple(local_tokens.tokens.shape)}"
        )
    return TokenSeq(params(global_tokens.tokens, local_tokens.tokens), Provenance.FRAME_FUSED)
