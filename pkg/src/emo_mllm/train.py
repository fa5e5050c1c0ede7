"""Instruction tuning: batch size 1, gradient descent on the tuned groups only."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

import torch

from .config import ALL_GROUPS, RunConfig
from .data import TrainingExample
from .errors import NumericError
from .lm import LossValue
from .model import EmotionModel

log = logging.getLogger(__name__)


def frozen_groups(cfg: RunConfig) -> tuple[str, ...]:
    return tuple(g for g in ALL_GROUPS if g not in cfg.tuned_groups)


def make_optimizer(model: EmotionModel, cfg: RunConfig) -> torch.optim.Optimizer | None:
    model.set_trainable(cfg.tuned_groups)
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        return None
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=cfg.momentum)


def train_step(example: TrainingExample, model: EmotionModel, optimizer: torch.optim.Optimizer | None,
               cfg: RunConfig) -> LossValue:
    """One forward/backward/update on a single example; frozen tensors are never touched."""
    out = model(example)
    if optimizer is None:
        return out.loss
    optimizer.zero_grad(set_to_none=True)
    out.loss.value.backward()
    bad = [name for name, p in model.named_parameters()
           if p.grad is not None and not torch.isfinite(p.grad).all()]
    if bad:
        raise NumericError(f"non-finite gradients in {bad} (loss {float(out.loss):.6g})")
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_([p for g in optimizer.param_groups for p in g["params"]], cfg.grad_clip)
    optimizer.step()
    return out.loss


def group_norms(model: EmotionModel, groups: Sequence[str]) -> dict[str, float]:
    norms = {}
    for name, params in model.parameter_groups().items():
        if name in groups and params:
            norms[name] = float(torch.sqrt(sum((p.detach() ** 2).sum() for _, p in params)))
    return norms


@torch.no_grad()
def corpus_loss(model: EmotionModel, corpus: Sequence[TrainingExample]) -> float:
    return sum(float(model(ex).loss) for ex in corpus) / len(corpus)


def train(model: EmotionModel, corpus: Sequence[TrainingExample], cfg: RunConfig,
          log_path=None, target_loss: float | None = None, eval_every: int | None = None) -> list[dict]:
    """Cycle through ``corpus`` one example per step.

    Runs ``cfg.epochs`` passes, or exactly ``cfg.max_steps`` steps when set. With
    ``target_loss``, the mean corpus loss is evaluated every ``eval_every`` steps
    and training stops once it drops below the target.
    """
    optimizer = make_optimizer(model, cfg)
    total = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * len(corpus)
    eval_every = eval_every or len(corpus)
    history: list[dict] = []
    sink = open(log_path, "w") if log_path else None
    try:
        for step in range(1, total + 1):
            ex = corpus[(step - 1) % len(corpus)]
            loss = train_step(ex, model, optimizer, cfg)
            rec = {
                "step": step,
                "epoch": (step - 1) // len(corpus) + 1,
                "example": ex.name,
                "loss": float(loss),
                "norms": group_norms(model, cfg.tuned_groups),
            }
            if target_loss is not None and step % eval_every == 0:
                rec["corpus_loss"] = corpus_loss(model, corpus)
            history.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
            log.debug("step %d loss %.5f", step, rec["loss"])
            if target_loss is not None and rec.get("corpus_loss", float("inf")) < target_loss:
                break
    finally:
        if sink:
            sink.close()
    return history


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
