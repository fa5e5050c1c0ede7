"""Static figures from run reports (Agg backend; no display needed)."""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

log = logging.getLogger(__name__)

_SAVE = {"dpi": 100, "metadata": {"Software": None}}

_REGION_COLORS = np.array([
    [0.90, 0.10, 0.10], [0.10, 0.60, 0.90], [0.95, 0.60, 0.10], [0.20, 0.80, 0.30],
    [0.60, 0.30, 0.80], [0.90, 0.30, 0.60], [0.50, 0.50, 0.10],
])


def mask_overlay(membership, grid, background: np.ndarray | None = None, alpha: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """RGB overlay of region membership and the boolean ``[n_rows, n_cols]`` highlight map."""
    image_h, image_w, patch = grid
    rows, cols = image_h // patch, image_w // patch
    member = np.asarray(membership, dtype=bool).reshape(rows * cols, -1)
    img = np.full((image_h, image_w, 3), 0.85) if background is None else np.asarray(background, dtype=float).copy()
    highlight = member.any(axis=1).reshape(rows, cols)
    for p in np.flatnonzero(member.any(axis=1)):
        r, c = divmod(p, cols)
        color = _REGION_COLORS[np.flatnonzero(member[p])].mean(axis=0)
        sl = img[r * patch:(r + 1) * patch, c * patch:(c + 1) * patch]
        sl[:] = (1 - alpha) * sl + alpha * color
    return img, highlight


def plot_loss(history, path) -> Path | None:
    if not history:
        log.warning("empty loss history; no loss plot written")
        return None
    steps = [h["step"] for h in history]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(steps, [h["loss"] for h in history], lw=1, label="step loss")
    evals = [(h["step"], h["corpus_loss"]) for h in history if "corpus_loss" in h]
    if evals:
        ax.plot(*zip(*evals), "o-", ms=3, label="corpus loss")
    ax.set_xlabel("step")
    ax.set_ylabel("answer NLL")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return Path(path)


def plot_token_counts(shapes: dict, path) -> Path:
    labels = [f"window {i}" for i in range(len(shapes.get("window_tokens", [])))] + ["global", "audio", "text", "answer"]
    values = list(shapes.get("window_tokens", [])) + [
        shapes.get("global_tokens", 0), shapes.get("audio_tokens", 0),
        shapes.get("text_tokens", 0), shapes.get("answer_tokens", 0),
    ]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(range(len(values)), values, color="tab:blue")
    ax.set_xticks(range(len(values)), labels, rotation=30, ha="right")
    ax.set_ylabel("tokens")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return Path(path)


def plot_mask(mask_record: dict, path) -> Path:
    img, _ = mask_overlay(mask_record["membership"], mask_record["grid"])
    fig, ax = plt.subplots(figsize=(3.5, 3.5))
    ax.imshow(img, interpolation="nearest")
    patch = mask_record["grid"][2]
    ax.set_xticks(np.arange(-0.5, img.shape[1], patch), minor=False)
    ax.set_yticks(np.arange(-0.5, img.shape[0], patch), minor=False)
    ax.grid(color="k", lw=0.5)
    ax.set_xticklabels([])
    ax.set_yticklabels([])
    ax.set_title(", ".join(mask_record.get("region_names", [])), fontsize=6)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return Path(path)


def emit_plots(report: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "history" in report:
        p = plot_loss(report["history"], out / "loss_curve.png")
        if p:
            written.append(p)
    if "shapes" in report:
        written.append(plot_token_counts(report["shapes"], out / "token_counts.png"))
    if "mask" in report:
        written.append(plot_mask(report["mask"], out / "mask_overlay.png"))
    return written
