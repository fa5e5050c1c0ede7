"""Training examples and the on-disk scene layout.

A scene directory holds::

    scene.json       manifest: frame_times, frame files, instruction, answer, labels,
                     seed, config_hash, and the names of the files below
    frames/*.ppm     plain-text (P3) RGB frames, 8 bits per channel
    landmarks.json   per-frame face-mesh landmarks (see geometry)
    regions.json     region polygons as landmark index lists (see geometry)
    timeline.json    utterance segments (see video)
    audio.json       {"sample_rate": int, "samples": [float, ...]}   (optional)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .geometry import FaceRegion, canonical_face_regions, load_landmarks, load_regions
from .video import UtteranceSegment, load_timeline


@dataclass
class TrainingExample:
    frames: np.ndarray  # float [F, H, W, C] in [0, 1]
    frame_times: tuple[float, ...]
    landmarks: list[np.ndarray]  # F arrays of [468, 2]
    utterances: list[UtteranceSegment]
    instruction: str
    answer: str
    audio: np.ndarray | None = None
    sample_rate: int | None = None
    regions: list[FaceRegion] = field(default_factory=canonical_face_regions)
    labels: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        if not self.answer.strip():
            raise DataError("answer must be non-empty")
        if len(self.frames) != len(self.frame_times) or len(self.landmarks) != len(self.frames):
            raise DataError(
                f"{len(self.frames)} frames, {len(self.frame_times)} timestamps, {len(self.landmarks)} landmark sets"
            )
        if any(t < 0 for t in self.frame_times):
            raise DataError("negative frame timestamp")
        if self.audio is not None:
            duration = len(self.audio) / self.sample_rate
            if self.frame_times and max(self.frame_times) > duration:
                raise DataError(f"frame timestamps exceed the {duration:.2f}s audio track")

    @property
    def prompt(self) -> str:
        spoken = " ".join(u.transcript for u in sorted(self.utterances, key=lambda u: u.start_s) if u.transcript)
        return f"Transcript: {spoken}\n{self.instruction}" if spoken else self.instruction


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise DataError(f"PPM frames must be uint8, got {img.dtype}")
    h, w, c = img.shape
    if c != 3:
        raise DataError("PPM frames must have 3 channels")
    rows = "\n".join(" ".join(str(v) for v in row.reshape(-1)) for row in img)
    Path(path).write_text(f"P3\n{w} {h}\n255\n{rows}\n")


def read_ppm(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != "P3":
        raise DataError(f"{path}: not a plain-text PPM")
    w, h, maxval = (int(t) for t in tokens[1:4])
    vals = np.array(tokens[4:], dtype=np.int64)
    if vals.size != w * h * 3 or maxval != 255 or vals.min(initial=0) < 0 or vals.max(initial=0) > 255:
        raise DataError(f"{path}: corrupt pixel data")
    return vals.reshape(h, w, 3).astype(np.uint8)


def save_audio(path, samples: np.ndarray, sample_rate: int) -> None:
    doc = {"sample_rate": int(sample_rate), "samples": [float(s) for s in samples]}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_audio(path) -> tuple[np.ndarray, int]:
    try:
        doc = json.loads(Path(path).read_text())
        return np.asarray(doc["samples"], dtype=np.float64), int(doc["sample_rate"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed audio file ({exc})") from exc


def load_scene(scene_dir) -> TrainingExample:
    root = Path(scene_dir)
    try:
        manifest = json.loads((root / "scene.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{root}: cannot read scene manifest ({exc})") from exc
    try:
        frames = np.stack([read_ppm(root / f) for f in manifest["frames"]]).astype(np.float64) / 255.0
        audio = sr = None
        if manifest.get("audio"):
            audio, sr = load_audio(root / manifest["audio"])
        return TrainingExample(
            frames=frames,
            frame_times=tuple(float(t) for t in manifest["frame_times"]),
            landmarks=load_landmarks(root / manifest["landmarks"]),
            utterances=load_timeline(root / manifest["timeline"]),
            instruction=manifest["instruction"],
            answer=manifest["answer"],
            audio=audio,
            sample_rate=sr,
            regions=load_regions(root / manifest["regions"]),
            labels=tuple(manifest.get("labels", ())),
            name=root.name,
        )
    except KeyError as exc:
        raise DataError(f"{root}: manifest missing {exc}") from exc


def load_corpus(root) -> list[TrainingExample]:
    """Every scene under ``root`` (a scene dir itself, or a dir of scene dirs), sorted by name."""
    root = Path(root)
    if (root / "scene.json").exists():
        return [load_scene(root)]
    scenes = sorted(p.parent for p in root.glob("*/scene.json"))
    if not scenes:
        raise DataError(f"no scenes found under {root}")
    return [load_scene(s) for s in scenes]


def frame_times_for(n_frames: int, fps: float) -> tuple[float, ...]:
    return tuple(round(k / fps, 6) for k in range(n_frames))


def utterances_from_pairs(pairs: Sequence[tuple[float, float]], transcripts: Sequence[str] = ()) -> list[UtteranceSegment]:
    texts = list(transcripts) + [""] * (len(pairs) - len(transcripts))
    return [UtteranceSegment(float(a), float(b), t) for (a, b), t in zip(pairs, texts)]
