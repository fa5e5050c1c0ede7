"""End-to-end model: frames -> region-masked local attention -> timestamp-
conditioned image Q-Former -> utterance-window + global video Q-Former ->
projection -> (with audio and text tokens) causal decoder -> answer loss.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .config import ALL_GROUPS, RunConfig
from .data import TrainingExample
from .encoder import LocalAttention, VisualEncoder, encode_tokens, masked_local_attention
from .errors import StageError
from .geometry import PatchGrid, compile_region_mask, expand_to_attention_mask
from .lm import (AudioBranch, LossValue, ToyDecoder, concat_multimodal, embed_text, encode_audio,
                 answer_loss, lm_forward, next_token_view)
from .qformer import GlobalLocalFusion, QFormer, fuse_global_local
from .tokenizer import Tokenizer, default_tokenizer, format_timestamp
from .tokens import Provenance, TokenSeq
from .video import (GLOBAL, Projection, VideoQFormer, WindowAssignment, build_windows, global_forward,
                    multiscale_fuse, project_to_llm, window_forward)


@dataclass
class ForwardResult:
    loss: LossValue
    logits: torch.Tensor
    answer_mask: torch.Tensor
    answer_ids: list[int]
    windows: WindowAssignment
    shapes: dict = field(default_factory=dict)
    visual_tokens: torch.Tensor | None = None
    fused_frames: list[TokenSeq] = field(default_factory=list)


class EmotionModel(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        g = torch.Generator().manual_seed(cfg.seed)
        self.grid = PatchGrid(cfg.image_size, cfg.image_size, cfg.patch)
        self.tokenizer: Tokenizer = default_tokenizer(cfg.vocab_size)
        d, nq = cfg.d_model, cfg.n_queries
        self.visual_encoder = VisualEncoder(self.grid, cfg.channels, d, cfg.encoder_layers, cfg.encoder_heads, g)
        self.local_attention = LocalAttention(d, cfg.encoder_heads, g)
        self.image_qformer = QFormer(d, nq, cfg.qformer_blocks, cfg.qformer_heads, vocab_size=cfg.vocab_size,
                                     max_condition_len=cfg.max_condition_len, generator=g)
        self.fusion = GlobalLocalFusion(d, g)
        self.video_qformer = VideoQFormer(d, nq, cfg.qformer_blocks, cfg.qformer_heads, cfg.max_frames, g)
        self.global_video_qformer = (
            None if cfg.share_video_qformer
            else VideoQFormer(d, nq, cfg.qformer_blocks, cfg.qformer_heads, cfg.max_frames, g)
        )
        self.video_proj = Projection(d, cfg.d_llm, g)
        self.audio = AudioBranch(cfg.audio_chunk, d, cfg.d_llm, nq, cfg.qformer_blocks, cfg.qformer_heads,
                                 cfg.max_audio_chunks, g) if cfg.use_audio else None
        self.lm = ToyDecoder(cfg.vocab_size, cfg.d_llm, cfg.lm_layers, cfg.lm_heads, cfg.context,
                             cfg.lora_rank, cfg.lora_alpha, g)
        self.to(torch.float64 if cfg.fp64 else torch.float32)

    @property
    def dtype(self) -> torch.dtype:
        return self.lm.embed.dtype

    # -- parameter bookkeeping ----------------------------------------------

    def group_of(self, name: str) -> str:
        if name.startswith("visual_encoder."):
            return "visual_encoder"
        if name.startswith("local_attention."):
            return "local_attention"
        if name.startswith(("image_qformer.", "fusion.")):
            return "image_qformer"
        if name.startswith(("video_qformer.", "global_video_qformer.")):
            return "video_qformer"
        if name.startswith("audio.chunk_embed."):
            return "audio_encoder"
        if name.startswith("audio.qformer."):
            return "audio_qformer"
        if name.startswith(("video_proj.", "audio.proj.")):
            return "projection"
        if name.startswith("lm."):
            return "lora" if name.endswith((".A", ".B")) else "lm"
        raise KeyError(name)

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups: dict[str, list] = {g: [] for g in ALL_GROUPS}
        for name, p in self.named_parameters():
            groups[self.group_of(name)].append((name, p))
        return groups

    def set_trainable(self, tuned_groups) -> None:
        tuned = set(tuned_groups)
        for name, p in self.named_parameters():
            p.requires_grad_(self.group_of(name) in tuned)

    def param_hash(self, groups) -> str:
        h = hashlib.sha256()
        wanted = set(groups)
        for name, p in sorted(self.named_parameters()):
            if self.group_of(name) in wanted:
                h.update(name.encode())
                h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    # -- stages ---------------------------------------------------------------

    def attention_masks(self, example: TrainingExample) -> torch.Tensor:
        """Per-frame boolean ``[F, P, P]`` masks, cached on the example."""
        cache = example.__dict__.setdefault("_attention_masks", {})
        key = (self.grid, self.cfg.region_threshold)
        if key not in cache:
            masks = [
                expand_to_attention_mask(
                    compile_region_mask(lm, example.regions, self.grid, self.cfg.region_threshold)
                ).allowed
                for lm in example.landmarks
            ]
            cache[key] = torch.from_numpy(np.stack(masks))
        return cache[key]

    def frame_tokens(self, example: TrainingExample, shapes: dict | None = None) -> list[TokenSeq]:
        """Fused, timestamp-bound ``n_q`` tokens for every frame."""
        shapes = {} if shapes is None else shapes
        images = torch.as_tensor(example.frames, dtype=self.dtype)
        feats = encode_tokens(images, self.grid, self.visual_encoder)
        shapes["frame_features"] = list(feats.shape)
        ablate = self.cfg.disable_local_attention
        local = None if ablate else masked_local_attention(feats, self.attention_masks(example), self.local_attention)
        shapes["local_features"] = None if ablate else list(local.shape)
        fused = []
        for f, t in enumerate(example.frame_times):
            cond = format_timestamp(t, self.tokenizer)
            if ablate:
                g = self.image_qformer(feats[f], cond)
                loc = torch.zeros_like(g)
            else:
                g, loc = self.image_qformer(torch.stack([feats[f], local[f]]), cond)
            fused.append(fuse_global_local(TokenSeq(g, Provenance.FRAME_GLOBAL),
                                           TokenSeq(loc, Provenance.FRAME_LOCAL), self.fusion))
        shapes["fused_per_frame"] = [len(fused[0]), fused[0].width] if fused else [0, self.cfg.d_model]
        return fused

    def video_tokens(self, fused: list[TokenSeq], example: TrainingExample, shapes: dict | None = None):
        shapes = {} if shapes is None else shapes
        utts = [] if self.cfg.disable_utterance_windows else example.utterances
        windows = build_windows(utts, example.frame_times)
        win_tokens = window_forward(windows, fused, self.video_qformer)
        glob = global_forward(fused, self.global_video_qformer or self.video_qformer)
        visual = multiscale_fuse(win_tokens, glob)
        shapes["windows"] = [len(idx) for _, idx in windows.utterance_windows]
        shapes["window_tokens"] = [len(w) for w in win_tokens]
        shapes["global_tokens"] = len(glob)
        shapes["visual_tokens"] = len(visual)
        shapes["non_empty_windows"] = sum(1 for w in win_tokens if len(w))
        return visual, windows

    def forward(self, example: TrainingExample) -> ForwardResult:
        shapes: dict = {}
        stage = "facial_geometry"
        try:
            if not self.cfg.disable_local_attention:
                self.attention_masks(example)
            stage = "visual_encoder"
            fused = self.frame_tokens(example, shapes)
            stage = "video_qformer"
            visual, windows = self.video_tokens(fused, example, shapes)
            T_V = project_to_llm(visual, self.video_proj)
            shapes["projected_visual"] = list(T_V.tokens.shape)
            stage = "multimodal_lm"
            T_A = None
            if self.audio is not None and example.audio is not None:
                T_A = encode_audio(example.audio, example.sample_rate, self.audio)
            shapes["audio_tokens"] = 0 if T_A is None else len(T_A)
            prompt_ids = [self.tokenizer.bos_id] + self.tokenizer.encode(example.prompt)
            answer_ids = self.tokenizer.encode(example.answer) + [self.tokenizer.eos_id]
            T_Lq = embed_text(prompt_ids, self.lm)
            seq, mask = concat_multimodal(T_V, T_A, T_Lq, answer_ids, self.lm)
            shapes["text_tokens"] = len(prompt_ids)
            shapes["answer_tokens"] = len(answer_ids)
            shapes["sequence"] = int(seq.shape[0])
            logits = lm_forward(seq, self.lm)
            pred_logits, pred_mask = next_token_view(logits, mask)
            loss = answer_loss(pred_logits, answer_ids, pred_mask)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        return ForwardResult(loss, logits, mask, answer_ids, windows, shapes, T_V.tokens, fused)


def count_law(n_queries: int, windows: WindowAssignment) -> int:
    """Expected multi-scale token count: n_q per non-empty utterance window, plus n_q global."""
    non_empty = sum(1 for k, idx in windows.windows if k != GLOBAL and idx)
    return n_queries * (non_empty + 1)
