"""Toy causal decoder with LoRA adapters, the audio branch, and the answer loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import InputError, NumericError, ShapeError
from .layers import Block, reset_parameters
from .tokens import Provenance, TokenSeq
from .video import Projection, VideoQFormer


class LoRALinear(nn.Module):
    """Frozen ``base`` plus the low-rank delta ``(alpha / r) * B @ A``.

    B starts at zero so a freshly attached adapter leaves the base output
    unchanged.
    """

    def __init__(self, d_in: int, d_out: int, r: int = 4, alpha: float = 8.0, bias: bool = True):
        super().__init__()
        if r < 1:
            raise ValueError(f"LoRA rank must be >= 1, got {r}")
        self.base = nn.Linear(d_in, d_out, bias=bias)
        self.A = nn.Parameter(torch.zeros(r, d_in))
        self.B = nn.Parameter(torch.zeros(d_out, r))
        self.r = r
        self.alpha = float(alpha)
        self.enabled = True

    @property
    def scale(self) -> float:
        return self.alpha / self.r

    def delta(self, x):
        return self.scale * ((x @ self.A.T) @ self.B.T)

    def forward(self, x):
        out = self.base(x)
        if self.enabled:
            out = out + self.delta(x)
        return out


def lora_layers(module: nn.Module) -> list[LoRALinear]:
    return [m for m in module.modules() if isinstance(m, LoRALinear)]


def set_lora_enabled(module: nn.Module, enabled: bool) -> None:
    for layer in lora_layers(module):
        layer.enabled = enabled


class ToyDecoder(nn.Module):
    def __init__(self, vocab_size: int = 512, d_model: int = 128, n_layers: int = 2, n_heads: int = 4,
                 context: int = 512, lora_rank: int = 4, lora_alpha: float = 8.0,
                 generator: torch.Generator | None = None):
        super().__init__()
        make_linear = lambda i, o, bias=True: LoRALinear(i, o, lora_rank, lora_alpha, bias)  # noqa: E731
        self.embed = nn.Parameter(0.02 * torch.randn(vocab_size, d_model, generator=generator))
        self.pos = nn.Parameter(0.02 * torch.randn(context, d_model, generator=generator))
        self.blocks = nn.ModuleList(Block(d_model, n_heads, make_linear=make_linear) for _ in range(n_layers))
        self.ln_f = nn.LayerNorm(d_model)
        self.head = nn.Linear(d_model, vocab_size)
        reset_parameters(self, generator)
        # LoRA: Kaiming-style A, zero B
        for layer in lora_layers(self):
            with torch.no_grad():
                layer.A.copy_(torch.randn(layer.A.shape, generator=generator) / np.sqrt(layer.A.shape[1]))

    @property
    def context(self) -> int:
        return self.pos.shape[0]

    @property
    def width(self) -> int:
        return self.embed.shape[1]


def embed_text(token_ids: Sequence[int], lm: ToyDecoder) -> TokenSeq:
    ids = torch.as_tensor(list(token_ids), dtype=torch.long)
    return TokenSeq(lm.embed[ids], Provenance.TEXT)


def concat_multimodal(T_V: TokenSeq, T_A: TokenSeq | None, T_Lq: TokenSeq, T_La_ids: Sequence[int],
                      lm: ToyDecoder) -> tuple[torch.Tensor, torch.Tensor]:
    """Order ``[T_V; T_A; T_Lq; T_La]``; the mask is True exactly on the answer block."""
    T_La = embed_text(T_La_ids, lm)
    blocks = [T_V, T_A, T_Lq, T_La]
    for b in blocks:
        if b is not None and len(b) and b.width != lm.width:
            raise ShapeError(f"{b.provenance.value} tokens have width {b.width}, LM expects {lm.width}")
    seq = torch.cat([b.tokens for b in blocks if b is not None and len(b)], dim=0)
    mask = torch.zeros(seq.shape[0], dtype=torch.bool)
    mask[seq.shape[0] - len(T_La):] = True
    return seq, mask


def lm_forward(embeddings: torch.Tensor, params: ToyDecoder) -> torch.Tensor:
    """Causal decoder over input embeddings ``[T, d]`` -> logits ``[T, vocab]``."""
    T = embeddings.shape[-2]
    if embeddings.shape[-1] != params.width:
        raise ShapeError(f"embedding width {embeddings.shape[-1]} != {params.width}")
    if T > params.context:
        raise ShapeError(f"sequence of {T} exceeds context {params.context}")
    causal = torch.ones(T, T, dtype=torch.bool).tril()
    x = embeddings + params.pos[:T]
    for i, block in enumerate(params.blocks, start=1):
        x = block(x, mask=causal)
        if not torch.isfinite(x).all():
            raise NumericError("non-finite activations in decoder", layer=i)
    return params.head(params.ln_f(x))


@dataclass(frozen=True)
class LossValue:
    value: torch.Tensor  # scalar, differentiable
    n_answer_tokens: int

    def __float__(self):
        return float(self.value.detach())


def answer_loss(logits: torch.Tensor, answer_ids: Sequence[int], answer_mask: torch.Tensor) -> LossValue:
    """Mean negative log-likelihood of the answer tokens.

    Row ``t`` of ``logits`` must already be the distribution for the token at
    ``t`` (use ``next_token_view`` on raw decoder output). Rows outside
    ``answer_mask`` do not enter the loss.
    """
    rows = torch.nonzero(answer_mask, as_tuple=False).flatten()
    ids = torch.as_tensor(list(answer_ids), dtype=torch.long)
    if len(rows) == 0:
        raise InputError("answer span is empty")
    if len(rows) != len(ids):
        raise ShapeError(f"answer mask marks {len(rows)} rows for {len(ids)} answer ids")
    logp = torch.log_softmax(logits[rows], dim=-1)
    value = -logp.gather(1, ids[:, None]).mean()
    if not torch.isfinite(value):
        raise NumericError("non-finite loss")
    return LossValue(value, len(ids))


def next_token_view(logits: torch.Tensor, answer_mask: torch.Tensor):
    """Align decoder output for teacher forcing: row ``t`` predicts token ``t + 1``."""
    return logits[:-1], answer_mask[1:]


@torch.no_grad()
def greedy_decode(prefix: torch.Tensor, lm: ToyDecoder, max_new_tokens: int = 16, eos_id: int | None = None) -> list[int]:
    """Greedy continuation of an embedding prefix (demo only)."""
    seq = prefix
    out: list[int] = []
    for _ in range(max_new_tokens):
        if seq.shape[0] >= lm.context:
            break
        nxt = int(lm_forward(seq, lm)[-1].argmax())
        out.append(nxt)
        if nxt == eos_id:
            break
        seq = torch.cat([seq, lm.embed[nxt][None]], dim=0)
    return out


class AudioBranch(nn.Module):
    """Chunked waveform -> linear chunk embedding -> whole-clip Q-Former -> LM width."""

    def __init__(self, chunk: int = 80, d_model: int = 64, d_llm: int = 128, n_queries: int = 32,
                 n_blocks: int = 2, n_heads: int = 4, max_chunks: int = 256,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.chunk = chunk
        self.chunk_embed = nn.Linear(chunk, d_model)
        reset_parameters(self, generator)
        self.qformer = VideoQFormer(d_model, n_queries, n_blocks, n_heads, max_chunks, generator)
        self.proj = Projection(d_model, d_llm, generator)

    def chunks(self, waveform: torch.Tensor) -> torch.Tensor:
        n = waveform.shape[0]
        pad = (-n) % self.chunk
        if pad:
            waveform = torch.cat([waveform, waveform.new_zeros(pad)])
        return waveform.reshape(-1, self.chunk)


def encode_audio(waveform, sample_rate: int, params: AudioBranch) -> TokenSeq:
    wave = torch.as_tensor(np.asarray(waveform), dtype=params.chunk_embed.weight.dtype).flatten()
    if wave.numel() == 0:
        raise InputError("empty waveform")
    if sample_rate <= 0:
        raise InputError(f"sample rate must be positive, got {sample_rate}")
    emb = params.chunk_embed(params.chunks(wave))
    tokens = params.qformer(emb[:, None, :])
    return TokenSeq(params.proj(tokens), Provenance.AUDIO)
