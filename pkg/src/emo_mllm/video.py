"""Utterance-aware video Q-Former.

Each utterance ``[start_s, end_s)`` defines a window over the frames whose
timestamps fall inside it. A shared video Q-Former compresses every non-empty
window and, separately, the whole clip. The per-window blocks (in start order)
followed by the global block form the multi-scale visual sequence, which a
linear layer lifts to the LM width.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .errors import DataError, InputError, ShapeError
from .layers import reset_parameters
from .qformer import QFormer
from .tokens import Provenance, TokenSeq

log = logging.getLogger(__name__)

GLOBAL = "GLOBAL"


@dataclass(frozen=True)
class UtteranceSegment:
    start_s: float
    end_s: float
    transcript: str = ""

    def __post_init__(self):
        if not 0 <= self.start_s < self.end_s:
            raise DataError(f"invalid utterance interval [{self.start_s}, {self.end_s})")


@dataclass(frozen=True)
class WindowAssignment:
    # (utterance index or GLOBAL, frame indices); utterance windows by start_s, GLOBAL last
    windows: tuple[tuple[int | str, tuple[int, ...]], ...]

    @property
    def utterance_windows(self) -> list[tuple[int, tuple[int, ...]]]:
        return [(k, idx) for k, idx in self.windows if k != GLOBAL]

    @property
    def global_window(self) -> tuple[int, ...]:
        return next(idx for k, idx in self.windows if k == GLOBAL)


def build_windows(utterances: Sequence[UtteranceSegment], frame_times: Sequence[float]) -> WindowAssignment:
    times = [float(t) for t in frame_times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise DataError("frame times must be non-decreasing")
    order = sorted(range(len(utterances)), key=lambda i: utterances[i].start_s)
    windows = []
    for i in order:
        u = utterances[i]
        windows.append((i, tuple(f for f, t in enumerate(times) if u.start_s <= t < u.end_s)))
    windows.append((GLOBAL, tuple(range(len(times)))))
    return WindowAssignment(tuple(windows))


class VideoQFormer(nn.Module):
    """Q-Former over a frame sequence; frames carry learned temporal positions."""

    def __init__(self, d_model: int = 64, n_queries: int = 32, n_blocks: int = 2, n_heads: int = 4,
                 max_frames: int = 64, generator: torch.Generator | None = None):
        super().__init__()
        self.qformer = QFormer(d_model, n_queries, n_blocks, n_heads, generator=generator)
        self.frame_pos = nn.Parameter(0.02 * torch.randn(max_frames, d_model, generator=generator))

    @property
    def n_queries(self) -> int:
        return self.qformer.n_queries

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """``frames`` is ``[n_frames, tokens_per_frame, d]`` in temporal order."""
        n = frames.shape[0]
        if n < 1:
            raise InputError("video Q-Former needs at least one frame")
        if n > self.frame_pos.shape[0]:
            raise InputError(f"{n} frames exceed the {self.frame_pos.shape[0]} temporal positions")
        kv = (frames + self.frame_pos[:n, None, :]).reshape(-1, frames.shape[-1])
        return self.qformer(kv)


def _stack(frame_tokens: Sequence[TokenSeq], indices) -> torch.Tensor:
    return torch.stack([frame_tokens[i].tokens for i in indices])


def window_forward(assignment: WindowAssignment, frame_tokens: Sequence[TokenSeq],
                   params: VideoQFormer) -> list[TokenSeq]:
    n_frames = len(assignment.global_window)
    if len(frame_tokens) != n_frames:
        raise ShapeError(f"{len(frame_tokens)} frame token blocks for {n_frames} frames")
    out = []
    for key, indices in assignment.utterance_windows:
        if not indices:
            log.info("utterance window %s holds no frames; skipped", key)
            out.append(TokenSeq.empty(params.frame_pos.shape[1], Provenance.WINDOW, params.frame_pos.dtype))
            continue
        out.append(TokenSeq(params(_stack(frame_tokens, indices)), Provenance.WINDOW))
    return out


def global_forward(frame_tokens: Sequence[TokenSeq], params: VideoQFormer) -> TokenSeq:
    if not frame_tokens:
        raise InputError("global video Q-Former needs at least one frame")
    return TokenSeq(params(_stack(frame_tokens, range(len(frame_tokens)))), Provenance.VIDEO_GLOBAL)


def multiscale_fuse(window_tokens: Sequence[TokenSeq], global_tokens: TokenSeq) -> TokenSeq:
    if global_tokens.provenance is not Provenance.VIDEO_GLOBAL:
        raise InputError(f"global block has provenance {global_tokens.provenance.value}")
    for w in window_tokens:
        if w.provenance is not Provenance.WINDOW:
            raise InputError(f"window block has provenance {w.provenance.value}")
    blocks = [w.tokens for w in window_tokens if len(w)] + [global_tokens.tokens]
    return TokenSeq(torch.cat(blocks, dim=0), Provenance.VIDEO_GLOBAL)


class Projection(nn.Module):
    """Affine lift from the Q-Former width to the LM embedding width."""

    def __init__(self, d_in: int = 64, d_out: int = 128, generator: torch.Generator | None = None):
        super().__init__()
        self.linear = nn.Linear(d_in, d_out)
        reset_parameters(self, generator)

    def forward(self, x):
        return self.linear(x)


def project_to_llm(tokens: TokenSeq, proj: Projection) -> TokenSeq:
    if tokens.width != proj.linear.in_features:
        raise ShapeError(f"token width {tokens.width} != projection input {proj.linear.in_features}")
    return TokenSeq(proj(tokens.tokens), tokens.provenance)


# Timeline file (JSON): {"utterances": [{"start_s": 0.0, "end_s": 2.0, "transcript": "..."}, ...]}


def save_timeline(path, utterances: Sequence[UtteranceSegment]) -> None:
    doc = {"utterances": [{"start_s": u.start_s, "end_s": u.end_s, "transcript": u.transcript} for u in utterances]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_timeline(path) -> list[UtteranceSegment]:
    try:
        doc = json.loads(Path(path).read_text())
        return [UtteranceSegment(float(u["start_s"]), float(u["end_s"]), str(u.get("transcript", "")))
                for u in doc["utterances"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed timeline file ({exc})") from exc
