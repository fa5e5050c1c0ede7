"""Central finite differences against autograd, per parameter group.

Two passes run in float64:

* module checks: each group is differentiated through a loss local to its own
  module (upstream inputs detached), tolerance ``cfg.grad_tol``;
* pipeline checks: a few random scalars per group through the full answer
  loss, tolerance ``cfg.grad_pipeline_tol``.

Relative error per checked entry is ``|a - n| / max(|a|, |n|, floor)``. The
floor keeps entries whose true gradient is ~0 from dividing round-off by
round-off: with ``h = 1e-5`` the central-difference round-off is about
``1e-16 * |L| / h``, so ``floor`` is set a few orders above that.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from .config import ALL_GROUPS, RunConfig
from .encoder import encode_tokens, masked_local_attention
from .lm import concat_multimodal, embed_text, encode_audio, answer_loss, lm_forward, lora_layers, next_token_view
from .model import EmotionModel
from .qformer import fuse_global_local
from .synthetic import make_scene
from .tokenizer import format_timestamp
from .tokens import Provenance, TokenSeq
from .video import global_forward, multiscale_fuse, window_forward


@dataclass
class Mismatch:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GroupResult:
    group: str
    mode: str
    n_checked: int = 0
    max_rel_err: float = 0.0
    tol: float = 0.0
    failures: list[Mismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and not self.failures

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


@dataclass
class GradReport:
    seed: int
    config_hash: str
    results: list[GroupResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def worst(self) -> float:
        return max((r.max_rel_err for r in self.results), default=0.0)

    def as_dict(self) -> dict:
        return {"seed": self.seed, "config_hash": self.config_hash, "passed": self.passed,
                "worst_rel_err": self.worst, "groups": [r.as_dict() for r in self.results]}


def rel_error(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_entries(fn: Callable[[], torch.Tensor], name: str, p: torch.Tensor, indices, *, h: float,
                  tol: float, floor: float, corrupt: bool = False) -> GroupResult:
    """Compare autograd with central differences at flat ``indices`` of ``p``."""
    res = GroupResult("", "", tol=tol)
    (g,) = torch.autograd.grad(fn(), [p], allow_unused=True)
    g = torch.zeros_like(p) if g is None else g
    if corrupt:
        g = g * 1.05 + 1e-3
    with torch.no_grad():
        flat, gflat = p.view(-1), g.reshape(-1)
        for idx in indices:
            orig = flat[idx].item()
            flat[idx] = orig + h
            f_plus = fn().item()
            flat[idx] = orig - h
            f_minus = fn().item()
            flat[idx] = orig
            num = (f_plus - f_minus) / (2 * h)
            err = rel_error(gflat[idx].item(), num, floor)
            res.n_checked += 1
            res.max_rel_err = max(res.max_rel_err, err)
            if err > tol:
                res.failures.append(Mismatch(name, int(idx), gflat[idx].item(), num, err))
    return res


def _merge(into: GroupResult, sub: GroupResult) -> None:
    into.n_checked += sub.n_checked
    into.max_rel_err = max(into.max_rel_err, sub.max_rel_err)
    into.failures += sub.failures


def fd_check(fn: Callable[[], torch.Tensor], params, group: str, mode: str, *, h: float, tol: float,
             samples: int, rng: np.random.Generator, floor: float, corrupt: bool = False) -> GroupResult:
    """Check ``samples`` random entries of every tensor in ``params`` (list of (name, Parameter))."""
    result = GroupResult(group, mode, tol=tol)
    for name, p in params:
        picks = sorted(int(i) for i in rng.choice(p.numel(), size=min(samples, p.numel()), replace=False))
        _merge(result, check_entries(fn, name, p, picks, h=h, tol=tol, floor=floor, corrupt=corrupt))
    return result


def _randomize_lora(model: EmotionModel, gen: torch.Generator) -> None:
    # B = 0 makes dL/dA vanish identically; give B mass so both factors are exercised
    with torch.no_grad():
        for layer in lora_layers(model):
            layer.B.copy_(0.1 * torch.randn(layer.B.shape, generator=gen, dtype=layer.B.dtype))


def _module_losses(model: EmotionModel, ex, gen: torch.Generator) -> dict[str, Callable[[], torch.Tensor]]:
    """Scalar probe per group: a fixed random projection of that module's output."""

    def probe(shape):
        return torch.randn(shape, generator=gen, dtype=model.dtype)

    images = torch.as_tensor(ex.frames, dtype=model.dtype)
    masks = model.attention_masks(ex)
    with torch.no_grad():
        feats = encode_tokens(images, model.grid, model.visual_encoder)
        local = masked_local_attention(feats, masks, model.local_attention)
        fused = model.frame_tokens(ex)
        visual, windows = model.video_tokens(fused, ex)
        out = model(ex)
    fused = [TokenSeq(f.tokens.detach(), f.provenance) for f in fused]
    n_iq = min(2, len(ex.frame_times))
    conds = [format_timestamp(t, model.tokenizer) for t in ex.frame_times[:n_iq]]
    mask = out.answer_mask
    T_V = TokenSeq(out.visual_tokens.detach(), Provenance.VIDEO_GLOBAL)
    T_A = None
    if model.audio is not None and ex.audio is not None:
        with torch.no_grad():
            T_A = encode_audio(ex.audio, ex.sample_rate, model.audio)
    prompt_ids = [model.tokenizer.bos_id] + model.tokenizer.encode(ex.prompt)

    r_enc, r_loc = probe(feats.shape), probe(local.shape)
    r_iq = probe((n_iq, model.cfg.n_queries, model.cfg.d_model))
    r_vid = probe(visual.tokens.shape)
    r_proj = probe((len(visual), model.cfg.d_llm))

    def image_qformer_loss():
        total = 0.0
        for f in range(n_iq):
            g, loc = model.image_qformer(torch.stack([feats[f], local[f]]), conds[f])
            fz = fuse_global_local(TokenSeq(g, Provenance.FRAME_GLOBAL), TokenSeq(loc, Provenance.FRAME_LOCAL),
                                   model.fusion)
            total = total + (fz.tokens * r_iq[f]).sum()
        return total

    def video_loss():
        wins = window_forward(windows, fused, model.video_qformer)
        glob = global_forward(fused, model.global_video_qformer or model.video_qformer)
        return (multiscale_fuse(wins, glob).tokens * r_vid).sum()

    def lm_loss():
        seq, _ = concat_multimodal(T_V, T_A, embed_text(prompt_ids, model.lm), out.answer_ids, model.lm)
        logits = lm_forward(seq, model.lm)
        lg, am = next_token_view(logits, mask)
        return answer_loss(lg, out.answer_ids, am).value

    losses = {
        "visual_encoder": lambda: (encode_tokens(images, model.grid, model.visual_encoder) * r_enc).sum(),
        "local_attention": lambda: (masked_local_attention(feats, masks, model.local_attention) * r_loc).sum(),
        "image_qformer": image_qformer_loss,
        "video_qformer": video_loss,
        "lm": lm_loss,
        "lora": lm_loss,
    }
    proj_terms = [lambda: (model.video_proj(visual.tokens) * r_proj).sum()]
    if model.audio is not None and ex.audio is not None:
        r_aud = probe((model.cfg.n_queries, model.cfg.d_llm))
        audio_loss = lambda: (encode_audio(ex.audio, ex.sample_rate, model.audio).tokens * r_aud).sum()  # noqa: E731
        losses["audio_encoder"] = audio_loss
        losses["audio_qformer"] = audio_loss
        proj_terms.append(audio_loss)
    losses["projection"] = lambda: sum(t() for t in proj_terms)
    return losses


def check_gradients(cfg: RunConfig, corrupt: bool = False, groups=ALL_GROUPS,
                    pipeline: bool = True, floor: float = 1e-6) -> GradReport:
    cfg = cfg.with_overrides(fp64=True)
    torch.manual_seed(cfg.seed)
    model = EmotionModel(cfg)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    _randomize_lora(model, gen)
    ex = make_scene(cfg.seed, cfg)
    rng = np.random.default_rng(cfg.seed)
    param_groups = model.parameter_groups()
    losses = _module_losses(model, ex, gen)
    results = []
    for group in groups:
        if group not in losses or not param_groups[group]:
            continue
        results.append(fd_check(losses[group], param_groups[group], group, "module", h=cfg.grad_h,
                                tol=cfg.grad_tol, samples=cfg.grad_samples, rng=rng, floor=floor, corrupt=corrupt))
    if pipeline:
        full = lambda: model(ex).loss.value  # noqa: E731
        for group in groups:
            params = param_groups[group]
            if not params or group not in losses:
                continue
            # 5 random scalars across the group
            ends = np.cumsum([p.numel() for _, p in params])
            picks = rng.choice(int(ends[-1]), size=min(5, int(ends[-1])), replace=False)
            chosen: dict = {}
            for k in picks:
                t = int(np.searchsorted(ends, k, side="right"))
                n, p = params[t]
                chosen.setdefault(n, (p, []))[1].append(int(k - (ends[t - 1] if t else 0)))
            res = GroupResult(group, "pipeline", tol=cfg.grad_pipeline_tol)
            for n, (p, idxs) in chosen.items():
                _merge(res, check_entries(full, n, p, sorted(idxs), h=cfg.grad_h, tol=cfg.grad_pipeline_tol,
                                          floor=floor, corrupt=corrupt))
            results.append(res)
    return GradReport(cfg.seed, cfg.hash(), results)
