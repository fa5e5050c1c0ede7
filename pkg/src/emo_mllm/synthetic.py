"""Synthetic talking-face scenes.

The face is a fixed 468-point layout: every landmark used by a canonical region
sits on that region's ellipse (in index-list order, so each polygon is convex),
and the rest fill the face oval. Per-frame deformations move the mouth corners
and lift the brows over time so the region masks change across frames.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import TrainingExample, frame_times_for, save_audio, write_ppm
from .errors import DataError
from .geometry import (N_MESH_LANDMARKS, FaceRegion, canonical_face_regions, points_in_polygon,
                       save_landmarks, save_regions)
from .tokenizer import EMOTION_WORDS
from .video import UtteranceSegment, save_timeline

# name -> (center x, center y, radius x, radius y, start angle, sweep)
_ELLIPSES = {
    "right_eye": (0.35, 0.40, 0.08, 0.035, np.pi, 2 * np.pi),
    "left_eye": (0.65, 0.40, 0.08, 0.035, np.pi, 2 * np.pi),
    "right_brow": (0.35, 0.30, 0.09, 0.025, np.pi, 2 * np.pi),
    "left_brow": (0.65, 0.30, 0.09, 0.025, np.pi, 2 * np.pi),
    "nose": (0.50, 0.52, 0.06, 0.10, -np.pi / 2, 2 * np.pi),
    "mouth": (0.50, 0.72, 0.12, 0.05, np.pi, 2 * np.pi),
    # half ellipse from the left ear under the chin to the right ear
    "jaw": (0.50, 0.55, 0.33, 0.38, np.pi, -np.pi),
}

_REGION_COLORS = {
    "right_eye": (40, 40, 60), "left_eye": (40, 40, 60),
    "right_brow": (90, 60, 30), "left_brow": (90, 60, 30),
    "nose": (200, 150, 120), "mouth": (170, 50, 60),
}
_SKIN = (220, 180, 150)
_BACKGROUND = (30, 90, 120)

MOUTH_CORNERS = (61, 291)

_SENTENCES = (
    "I can't believe it happened again", "Oh wow that is great news", "Why did you say that",
    "I don't know what to do", "Look I'm sorry", "Well it's fine now", "You were late again",
    "We got the money", "No no no stop", "Thanks so much my friend", "Wait what happened here",
    "I think I need to go home", "That was really bad", "Let me tell you about work",
)

_INSTRUCTIONS = (
    "What emotions does the person show in this video?",
    "Please list the emotion labels of the speaker.",
    "Which emotions does the speaker feel?",
)


def _region_table(regions: Sequence[FaceRegion]) -> dict[str, FaceRegion]:
    return {r.name: r for r in regions}


def canonical_face() -> np.ndarray:
    """Neutral ``[468, 2]`` layout consistent with ``canonical_face_regions``."""
    pts = np.full((N_MESH_LANDMARKS, 2), np.nan)
    for region in canonical_face_regions():
        cx, cy, rx, ry, start, sweep = _ELLIPSES[region.name]
        n = len(region.indices)
        steps = n if abs(sweep) >= 2 * np.pi else n - 1
        for k, idx in enumerate(region.indices):
            if not np.isnan(pts[idx, 0]):
                raise DataError(f"landmark {idx} shared between canonical regions")
            a = start + sweep * k / steps
            pts[idx] = (cx + rx * np.cos(a), cy + ry * np.sin(a))
    free = np.flatnonzero(np.isnan(pts[:, 0]))
    # golden-angle spiral over the face oval
    k = np.arange(len(free)) + 0.5
    rad = np.sqrt(k / len(free))
    ang = k * np.pi * (3 - np.sqrt(5))
    pts[free, 0] = 0.5 + 0.30 * rad * np.cos(ang)
    pts[free, 1] = 0.52 + 0.36 * rad * np.sin(ang)
    return pts


def deform(face: np.ndarray, mouth_dx: float, mouth_dy: float, brow_dy: float) -> np.ndarray:
    """Shift mouth corners outward/upward and brows upward; coordinates stay in [0, 1]."""
    out = face.copy()
    left, right = MOUTH_CORNERS
    out[left] += (-mouth_dx, -mouth_dy)
    out[right] += (mouth_dx, -mouth_dy)
    table = _region_table(canonical_face_regions())
    for name in ("left_brow", "right_brow"):
        out[list(table[name].indices), 1] -= brow_dy
    return np.clip(out, 0.0, 1.0)


def render_frame(landmarks: np.ndarray, regions: Sequence[FaceRegion], size: int,
                 rng: np.random.Generator, noise: float = 6.0) -> np.ndarray:
    ys = (np.arange(size) + 0.5) / size
    xs, ys = np.meshgrid(ys, ys)
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = _BACKGROUND
    face = ((xs - 0.5) / 0.34) ** 2 + ((ys - 0.53) / 0.42) ** 2 <= 1
    img[face] = _SKIN
    for region in regions:
        color = _REGION_COLORS.get(region.name)
        if color is None:
            continue
        inside = points_in_polygon(xs, ys, landmarks[list(region.indices)])
        img[inside] = color
    img += rng.normal(0.0, noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def random_timeline(rng: np.random.Generator, duration: float, max_utterances: int) -> list[tuple[float, float]]:
    n = int(rng.integers(0, max_utterances + 1))
    pairs = []
    for _ in range(n):
        a = round(float(rng.uniform(0, duration * 0.8)), 1)
        b = round(min(duration, a + float(rng.uniform(0.5, duration / 2))), 1)
        if b > a:
            pairs.append((a, b))
    return sorted(pairs)


def _synth_audio(rng, duration, sample_rate, utterances) -> np.ndarray:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    wave = 0.01 * rng.normal(size=t.shape)
    for u in utterances:
        f0 = rng.uniform(80, 200)
        on = (t >= u.start_s) & (t < u.end_s)
        if on.any():
            wave[on] += 0.5 * np.sin(2 * np.pi * f0 * t[on]) * np.hanning(on.sum())
    return wave


def make_scene(seed: int, cfg: RunConfig, utterances: Sequence[tuple[float, float]] | None = None) -> TrainingExample:
    """Build one scene in memory; fully determined by ``(seed, cfg)``."""
    rng = np.random.default_rng([cfg.seed, seed])
    times = frame_times_for(cfg.n_frames, cfg.fps)
    duration = cfg.n_frames / cfg.fps
    pairs = random_timeline(rng, duration, cfg.max_utterances) if utterances is None else list(utterances)
    transcripts = [str(rng.choice(_SENTENCES)) for _ in pairs]
    utts = [UtteranceSegment(float(a), float(b), s) for (a, b), s in zip(pairs, transcripts)]

    n_labels = int(rng.integers(1, 4))
    labels = tuple(sorted(rng.choice(EMOTION_WORDS, size=n_labels, replace=False).tolist()))
    amp_mouth = float(rng.uniform(0.0, 0.02))
    amp_brow = float(rng.uniform(0.0, 0.02))
    period = float(rng.uniform(2.0, 6.0))

    regions = canonical_face_regions()
    base = canonical_face()
    base = np.clip(base + rng.normal(0, 0.002, base.shape), 0, 1)
    landmarks, frames = [], []
    for t in times:
        phase = np.sin(2 * np.pi * t / period)
        lm = deform(base, amp_mouth * abs(phase), amp_mouth * phase, amp_brow * max(phase, 0.0))
        landmarks.append(lm)
        frames.append(render_frame(lm, regions, cfg.image_size, rng))

    audio = _synth_audio(rng, duration, cfg.sample_rate, utts) if cfg.use_audio else None
    return TrainingExample(
        frames=np.stack(frames).astype(np.float64) / 255.0,
        frame_times=times,
        landmarks=landmarks,
        utterances=utts,
        instruction=str(rng.choice(_INSTRUCTIONS)),
        answer=", ".join(labels),
        audio=audio,
        sample_rate=cfg.sample_rate if cfg.use_audio else None,
        regions=regions,
        labels=labels,
        name=f"scene_{seed:04d}",
    )


def write_scene(example: TrainingExample, out_dir, seed: int, cfg: RunConfig) -> Path:
    root = Path(out_dir)
    try:
        (root / "frames").mkdir(parents=True, exist_ok=True)
        frame_files = []
        for k, frame in enumerate(example.frames):
            name = f"frames/frame_{k:03d}.ppm"
            write_ppm(root / name, np.rint(frame * 255.0).astype(np.uint8))
            frame_files.append(name)
        save_landmarks(root / "landmarks.json", example.landmarks)
        save_regions(root / "regions.json", example.regions)
        save_timeline(root / "timeline.json", example.utterances)
        if example.audio is not None:
            save_audio(root / "audio.json", example.audio, example.sample_rate)
        manifest = {
            "seed": seed,
            "config_hash": cfg.hash(),
            "frame_times": list(example.frame_times),
            "frames": frame_files,
            "landmarks": "landmarks.json",
            "regions": "regions.json",
            "timeline": "timeline.json",
            "audio": "audio.json" if example.audio is not None else None,
            "instruction": example.instruction,
            "answer": example.answer,
            "labels": list(example.labels),
        }
        (root / "scene.json").write_text(json.dumps(manifest, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write scene to {root}: {exc}") from exc
    return root


def gen_synthetic(seed: int, cfg: RunConfig, out_dir, utterances=None) -> Path:
    """Write one scene to ``out_dir``; same ``(seed, cfg)`` gives identical files."""
    return write_scene(make_scene(seed, cfg, utterances), out_dir, seed, cfg)


def gen_corpus(cfg: RunConfig, out_dir, n_scenes: int | None = None, parallel: int = 1) -> list[Path]:
    n = cfg.n_scenes if n_scenes is None else n_scenes
    dirs = [Path(out_dir) / f"scene_{s:04d}" for s in range(n)]
    if parallel > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(parallel) as pool:
            list(pool.map(gen_synthetic, range(n), [cfg] * n, dirs))
    else:
        for s, d in enumerate(dirs):
            gen_synthetic(s, cfg, d)
    return dirs
