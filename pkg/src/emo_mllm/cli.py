"""``emo-mllm`` command line: gen, run, train, grads, score, plots.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error,
5 check failure, 1 anything else. All outputs go under ``--out``.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import click

from .config import ABLATIONS, RunConfig, load_config, make_config
from .errors import ConfigError, DataError, NumericError, StageError

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3, 4, 5

log = logging.getLogger("emo_mllm")


class CheckFailed(Exception):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, FileNotFoundError, IndexError)):
        return EXIT_DATA
    if isinstance(exc, CheckFailed):
        return EXIT_CHECK
    return EXIT_OTHER


def resolve_config(config: str | None, seed: int | None, ablate: str | None, fp64: bool) -> RunConfig:
    cfg = load_config(config) if config else make_config()
    overrides: dict = {}
    if seed is not None:
        overrides["seed"] = seed
    if fp64:
        overrides["fp64"] = True
    for key in filter(None, (k.strip() for k in (ablate or "").split(","))):
        if key not in ABLATIONS:
            raise ConfigError(f"unknown ablation {key!r}; choose from {', '.join(ABLATIONS)}")
        overrides[key] = True
    return cfg.with_overrides(**overrides) if overrides else cfg


def common_options(fn):
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML/JSON RunConfig file.")
    @click.option("--seed", type=int, help="Override the config seed.")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out", show_default=True)
    @click.option("--ablate", help="Comma-separated: " + ", ".join(ABLATIONS))
    @click.option("--fp64", is_flag=True, help="Run in double precision.")
    @click.option("--parallel", type=int, default=1, show_default=True, help="Worker processes for per-scene work.")
    @functools.wraps(fn)
    def wrapper(config_path, seed, out_dir, ablate, fp64, parallel, **kwargs):
        try:
            cfg = resolve_config(config_path, seed, ablate, fp64)
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            fn(cfg=cfg, out=out, parallel=max(1, parallel), **kwargs)
        except click.exceptions.Exit:
            raise
        except Exception as exc:  # mapped onto exit codes
            click.echo(f"error: {exc}", err=True)
            log.debug("traceback", exc_info=True)
            sys.exit(exit_code_for(exc))

    return wrapper


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _load_examples(data: str | None, cfg: RunConfig):
    from .data import load_corpus
    from .synthetic import make_scene

    if data:
        return load_corpus(data)
    return [make_scene(s, cfg) for s in range(cfg.n_scenes)]


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Toy multimodal emotion LM harness."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@common_options
@click.option("--scenes", type=int, help="Number of scenes (default: config n_scenes).")
@click.option("--timeline", type=click.Path(dir_okay=False),
              help="Timeline JSON applied to every scene instead of a random one.")
def gen(cfg, out, parallel, scenes, timeline):
    """Write synthetic scenes under OUT/scene_XXXX."""
    from .synthetic import gen_corpus, gen_synthetic
    from .video import load_timeline

    if timeline:
        pairs = [(u.start_s, u.end_s) for u in load_timeline(timeline)]
        n = cfg.n_scenes if scenes is None else scenes
        dirs = [gen_synthetic(s, cfg, out / f"scene_{s:04d}", pairs) for s in range(n)]
    else:
        dirs = gen_corpus(cfg, out, scenes, parallel)
    click.echo(f"wrote {len(dirs)} scenes to {out} (config {cfg.hash()})")


def _run_one(args):
    example, cfg, checkpoint, with_scores = args
    from .checkpoint import load_checkpoint
    from .model import EmotionModel
    from .pipeline import run_pipeline

    model = EmotionModel(cfg)
    if checkpoint:
        model = load_checkpoint(checkpoint, model)
    return run_pipeline(example, cfg, model, with_scores)


@main.command()
@common_options
@click.option("--data", type=click.Path(), help="Scene dir or dir of scenes (default: in-memory synthetic).")
@click.option("--checkpoint", type=click.Path(dir_okay=False))
@click.option("--scores", "with_scores", is_flag=True, help="Greedy-decode answers and score them.")
def run(cfg, out, parallel, data, checkpoint, with_scores):
    """Run scenes through the full pipeline and write per-stage reports."""
    examples = _load_examples(data, cfg)
    jobs = [(ex, cfg, checkpoint, with_scores) for ex in examples]
    if parallel > 1:
        with ProcessPoolExecutor(parallel) as pool:
            reports = list(pool.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]
    _write_json(out / "run_report.json", {"config": cfg.model_dump(mode="json"), "reports": reports})
    for r in reports:
        law = r["count_law"]
        click.echo(f"{r['scene']}: visual tokens {law['actual']} (expected {law['expected']}), loss {r['loss']:.4f}")
    if not all(r["count_law"]["ok"] for r in reports):
        raise CheckFailed("token count law violated")


@main.command()
@common_options
@click.option("--data", type=click.Path(), help="Corpus dir (default: in-memory synthetic corpus).")
@click.option("--steps", type=int, help="Override max_steps.")
@click.option("--target-loss", type=float, help="Stop once the mean corpus loss drops below this.")
def train(cfg, out, parallel, data, steps, target_loss):
    """Instruction-tune the tuned groups; writes a JSONL log and a checkpoint."""
    from .checkpoint import save_checkpoint
    from .model import EmotionModel
    from .train import corpus_loss, frozen_groups, train as train_loop

    if steps is not None:
        cfg = cfg.with_overrides(max_steps=steps)
    corpus = _load_examples(data, cfg)
    model = EmotionModel(cfg)
    frozen_before = model.param_hash(frozen_groups(cfg))
    history = train_loop(model, corpus, cfg, out / "train_log.jsonl", target_loss=target_loss)
    save_checkpoint(model, out / "checkpoint.npz")
    report = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "steps": len(history),
        "final_corpus_loss": corpus_loss(model, corpus),
        "frozen_unchanged": model.param_hash(frozen_groups(cfg)) == frozen_before,
        "history": history,
    }
    _write_json(out / "train_report.json", report)
    click.echo(f"{len(history)} steps, corpus loss {report['final_corpus_loss']:.4f}, "
               f"frozen params unchanged: {report['frozen_unchanged']}")


@main.command()
@common_options
@click.option("--inject-fault", is_flag=True, help="Corrupt analytic gradients (negative control).")
def grads(cfg, out, parallel, inject_fault):
    """Finite-difference gradient checks for every parameter group (float64)."""
    from .gradcheck import check_gradients

    report = check_gradients(cfg, corrupt=inject_fault)
    _write_json(out / "grads.json", report.as_dict())
    for r in report.results:
        status = "PASS" if r.passed else "FAIL"
        click.echo(f"{status} {r.mode:8s} {r.group:16s} n={r.n_checked:3d} max_rel_err={r.max_rel_err:.2e}")
        for f in r.failures[:5]:
            click.echo(f"     {f.param}[{f.index}] analytic={f.analytic:.6e} numeric={f.numeric:.6e}")
    if not report.passed:
        raise CheckFailed("gradient check failed")


@main.command()
@common_options
@click.option("--pred", type=click.Path(dir_okay=False), required=True)
@click.option("--truth", type=click.Path(dir_okay=False), required=True)
@click.option("--synonyms", type=click.Path(dir_okay=False))
def score(cfg, out, parallel, pred, truth, synonyms):
    """Accuracy_S / Recall_S for label files (JSON lines of {id, labels})."""
    from .metrics import format_table, load_synonyms, score_files

    corpus, rows = score_files(pred, truth, load_synonyms(synonyms) if synonyms else None)
    _write_json(out / "scores.json", {"corpus": asdict(corpus), "samples": rows})
    click.echo(format_table(corpus, rows))


@main.command()
@common_options
@click.option("--report", "report_path", type=click.Path(dir_okay=False), required=True,
              help="run_report.json or train_report.json")
def plots(cfg, out, parallel, report_path):
    """Render loss curve, token-count bars and mask overlay as PNGs."""
    from .plots import emit_plots

    doc = json.loads(Path(report_path).read_text())
    reports = doc.get("reports", [doc])
    written = []
    for i, rep in enumerate(reports):
        target = out if len(reports) == 1 else out / rep.get("scene", f"report_{i}")
        written += emit_plots(rep, target)
    for p in written:
        click.echo(str(p))


if __name__ == "__main__":
    main()
