from __future__ import annotations

import enum
from dataclasses import dataclass

import torch

from .errors import ShapeError


class Provenance(str, enum.Enum):
    FRAME_GLOBAL = "frame_global"
    FRAME_LOCAL = "frame_local"
    FRAME_FUSED = "frame_fused"
    WINDOW = "window"
    VIDEO_GLOBAL = "video_global"
    AUDIO = "audio"
    TEXT = "text"


@dataclass(frozen=True)
class TokenSeq:
    """An ordered ``[n, d]`` token block tagged with where it came from."""

    tokens: torch.Tensor
    provenance: Provenance

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ShapeError(f"TokenSeq expects [n, d], got {tuple(self.tokens.shape)}")
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]

    @classmethod
    def empty(cls, width: int, provenance, dtype=torch.float32) -> "TokenSeq":
        return cls(torch.zeros(0, width, dtype=dtype), provenance)
