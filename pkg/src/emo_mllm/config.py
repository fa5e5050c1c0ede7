from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import ConfigError

TUNED_GROUPS = ("local_attention", "image_qformer", "video_qformer", "audio_qformer", "projection", "lora")
FROZEN_GROUPS = ("visual_encoder", "audio_encoder", "lm")
ALL_GROUPS = FROZEN_GROUPS + TUNED_GROUPS
ABLATIONS = ("disable_local_attention", "disable_utterance_windows")


ARCHITECTURE_FIELDS = (
    "seed", "image_size", "channels", "patch", "d_model", "encoder_layers", "encoder_heads",
    "n_queries", "qformer_blocks", "qformer_heads", "max_condition_len", "max_frames",
    "share_video_qformer", "use_audio", "audio_chunk", "max_audio_chunks", "d_llm", "lm_layers",
    "lm_heads", "vocab_size", "context", "lora_rank", "lora_alpha",
)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    fp64: bool = False

    # frames and patches
    image_size: int = 32
    channels: int = 3
    patch: int = 8
    region_threshold: float = 0.25

    # visual encoder
    d_model: int = 64
    encoder_layers: int = 2
    encoder_heads: int = 4

    # Q-Formers
    n_queries: int = 32
    qformer_blocks: int = 2
    qformer_heads: int = 4
    max_condition_len: int = 32
    max_frames: int = 64
    share_video_qformer: bool = True

    # audio branch
    use_audio: bool = True
    sample_rate: int = 800
    audio_chunk: int = 80
    max_audio_chunks: int = 256

    # language model
    d_llm: int = 128
    lm_layers: int = 2
    lm_heads: int = 4
    vocab_size: int = 512
    context: int = 512
    lora_rank: int = 4
    lora_alpha: float = 8.0

    # training
    epochs: int = 3
    batch_size: Literal[1] = 1
    max_steps: int | None = None
    learning_rate: float = 0.05
    momentum: float = 0.9
    grad_clip: float | None = 1.0
    tuned_groups: tuple[str, ...] = TUNED_GROUPS

    # synthetic data
    n_scenes: int = 8
    n_frames: int = 6
    fps: float = 1.0
    max_utterances: int = 3

    # ablations
    disable_local_attention: bool = False
    disable_utterance_windows: bool = False

    # gradient checks
    grad_h: float = 1e-5
    grad_tol: float = 1e-4
    grad_pipeline_tol: float = 1e-3
    grad_samples: int = 3

    @field_validator("tuned_groups")
    @classmethod
    def _known_groups(cls, v):
        unknown = set(v) - set(ALL_GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}")
        return tuple(v)

    @model_validator(mode="after")
    def _consistent(self):
        if self.image_size % self.patch:
            raise ValueError(f"patch {self.patch} must divide image_size {self.image_size}")
        if self.d_model % self.encoder_heads or self.d_model % self.qformer_heads:
            raise ValueError("d_model must be divisible by the head counts")
        if self.d_llm % self.lm_heads:
            raise ValueError("d_llm must be divisible by lm_heads")
        if not 0 < self.region_threshold <= 1:
            raise ValueError("region_threshold must lie in (0, 1]")
        if self.n_frames > self.max_frames:
            raise ValueError("n_frames exceeds max_frames")
        return self

    def hash(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def architecture_hash(self) -> str:
        """Hash of the fields that shape or initialize parameters; checkpoints are keyed on it."""
        blob = json.dumps(self.model_dump(mode="json", include=set(ARCHITECTURE_FIELDS)), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **overrides) -> "RunConfig":
        return make_config({**self.model_dump(), **overrides})


def make_config(data: dict | None = None) -> RunConfig:
    try:
        return RunConfig(**(data or {}))
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    """Read a YAML or JSON mapping of RunConfig fields."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return make_config(data)
