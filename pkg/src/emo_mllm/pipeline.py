"""Run one scene through every stage and summarize what each produced."""

from __future__ import annotations

from dataclasses import asdict

import torch

from .config import RunConfig
from .data import TrainingExample
from .geometry import compile_region_mask
from .lm import embed_text, encode_audio, greedy_decode
from .metrics import LabelSet, score
from .model import EmotionModel, count_law
from .video import project_to_llm


def region_mask_record(model: EmotionModel, example: TrainingExample, frame: int = 0) -> dict:
    m = compile_region_mask(example.landmarks[frame], example.regions, model.grid, model.cfg.region_threshold)
    return {
        "frame": frame,
        "grid": [m.grid.image_h, m.grid.image_w, m.grid.patch],
        "threshold": m.threshold,
        "region_names": list(m.region_names),
        "membership": m.membership.astype(int).tolist(),
    }


@torch.no_grad()
def predict_answer(model: EmotionModel, example: TrainingExample, max_new_tokens: int = 12) -> str:
    """Greedy answer text for a scene (demo decoding; not part of the training objective)."""
    fused = model.frame_tokens(example)
    visual, _ = model.video_tokens(fused, example)
    T_V = project_to_llm(visual, model.video_proj)
    T_A = None
    if model.audio is not None and example.audio is not None:
        T_A = encode_audio(example.audio, example.sample_rate, model.audio)
    prompt_ids = [model.tokenizer.bos_id] + model.tokenizer.encode(example.prompt)
    blocks = [T_V, T_A, embed_text(prompt_ids, model.lm)]
    prefix = torch.cat([b.tokens for b in blocks if b is not None], dim=0)
    ids = greedy_decode(prefix, model.lm, max_new_tokens, eos_id=model.tokenizer.eos_id)
    return model.tokenizer.decode(ids)


def answer_labels(text: str) -> list[str]:
    return [s for s in (p.strip() for p in text.replace(" and ", ",").split(",")) if s]


def run_pipeline(example: TrainingExample, cfg: RunConfig, model: EmotionModel | None = None,
                 with_scores: bool = False) -> dict:
    model = model or EmotionModel(cfg)
    with torch.no_grad():
        out = model(example)
    expected = count_law(cfg.n_queries, out.windows)
    report = {
        "scene": example.name,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "ablations": {k: getattr(cfg, k) for k in ("disable_local_attention", "disable_utterance_windows")},
        "shapes": out.shapes,
        "windows": [[k, list(idx)] for k, idx in out.windows.windows],
        "count_law": {
            "expected": expected,
            "actual": out.shapes["visual_tokens"],
            "ok": expected == out.shapes["visual_tokens"],
        },
        "loss": float(out.loss),
        "n_answer_tokens": out.loss.n_answer_tokens,
        "mask": region_mask_record(model, example),
    }
    if with_scores:
        text = predict_answer(model, example)
        truth = list(example.labels) or answer_labels(example.answer)
        report["prediction"] = text
        report["scores"] = asdict(score(LabelSet.of(answer_labels(text)), LabelSet.of(truth)))
    return report
