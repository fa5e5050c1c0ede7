"""Toy ViT frame encoder and the masked micro-expression attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ContractViolation, NumericError, ShapeError
from .geometry import AttentionMask, PatchGrid
from .layers import Block, MultiHeadAttention, reset_parameters


@dataclass(frozen=True)
class FrameFeatures:
    tokens: torch.Tensor  # [n_patches, d_model]
    timestamp_s: float


class VisualEncoder(nn.Module):
    """Patch projection + learned positions + ``n_layers`` pre-norm blocks."""

    def __init__(self, grid: PatchGrid, channels: int = 3, d_model: int = 64,
                 n_layers: int = 2, n_heads: int = 4, generator: torch.Generator | None = None):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.grid = grid
        self.channels = channels
        self.patch_proj = nn.Linear(grid.patch * grid.patch * channels, d_model)
        self.pos = nn.Parameter(0.02 * torch.randn(grid.n_patches, d_model, generator=generator))
        self.blocks = nn.ModuleList(Block(d_model, n_heads) for _ in range(n_layers))
        reset_parameters(self, generator)


class LocalAttention(nn.Module):
    """Multi-head attention restricted by a patch-to-patch region mask."""

    def __init__(self, d_model: int = 64, n_heads: int = 4, generator: torch.Generator | None = None):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, n_heads)
        reset_parameters(self, generator)


def patchify(image: torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    """``[..., H, W, C]`` -> ``[..., n_patches, patch*patch*C]`` in row-major patch order."""
    *lead, h, w, c = image.shape
    if (h, w) != (grid.image_h, grid.image_w):
        raise ShapeError(f"image {h}x{w} does not match grid {grid.image_h}x{grid.image_w}")
    p = grid.patch
    x = image.reshape(*lead, grid.n_rows, p, grid.n_cols, p, c)
    x = x.movedim(-4, -3)  # [..., rows, cols, p, p, c]
    return x.reshape(*lead, grid.n_patches, p * p * c)


def patch_embed(image: torch.Tensor, grid: PatchGrid, params: VisualEncoder) -> torch.Tensor:
    if image.shape[-1] != params.channels:
        raise ShapeError(f"image has {image.shape[-1]} channels, encoder expects {params.channels}")
    return params.patch_proj(patchify(image, grid)) + params.pos


def _check_finite(x: torch.Tensor, layer: int) -> None:
    if not torch.isfinite(x).all():
        raise NumericError("non-finite activations in frame encoder", layer=layer)


def encode_tokens(image: torch.Tensor, grid: PatchGrid, params: VisualEncoder) -> torch.Tensor:
    """Batched encoder body: ``[..., H, W, C]`` -> ``[..., n_patches, d_model]``."""
    x = patch_embed(image, grid, params)
    _check_finite(x, 0)
    for i, block in enumerate(params.blocks, start=1):
        x = block(x)
        _check_finite(x, i)
    return x


def encode_frame(image: torch.Tensor, timestamp_s: float, grid: PatchGrid, params: VisualEncoder) -> FrameFeatures:
    if image.ndim != 3:
        raise ShapeError(f"expected one [H, W, C] frame, got {tuple(image.shape)}")
    return FrameFeatures(encode_tokens(image, grid, params), float(timestamp_s))


def _as_bool_tensor(mask) -> torch.Tensor:
    if isinstance(mask, AttentionMask):
        mask = mask.allowed
    if isinstance(mask, np.ndarray):
        mask = torch.from_numpy(mask)
    return mask.to(torch.bool)


def masked_local_attention(features, mask, params: LocalAttention, return_weights: bool = False):
    """Attend only within shared micro-expression regions.

    ``features`` is a FrameFeatures or a ``[..., n_patches, d]`` tensor;
    ``mask`` an AttentionMask or boolean ``[..., n_patches, n_patches]``.
    """
    x = features.tokens if isinstance(features, FrameFeatures) else features
    allowed = _as_bool_tensor(mask)
    n = x.shape[-2]
    if allowed.shape[-2:] != (n, n):
        raise ShapeError(f"mask {tuple(allowed.shape)} does not match {n} patches")
    if not allowed.any(dim=-1).all():
        raise ContractViolation("attention mask has an all-false row")
    return params.attn(x, mask=allowed, return_weights=return_weights)
