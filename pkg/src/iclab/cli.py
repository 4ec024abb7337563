"""Command-line entry point.

Every experiment subcommand takes one YAML config file (schema documented on
ExperimentConfig) plus --seed / --out overrides; `infer` can also act as a
thin client against a running service.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from .harness import (
    ExperimentConfig,
    run_ablation_decode_modes,
    run_ablation_masking,
    run_ablation_recolor,
    run_eval,
    run_sweep_recoverability,
    run_token_stats,
    run_training,
)


def _load_config(config, seed, out) -> ExperimentConfig:
    if config is None:
        raise click.UsageError("--config is required")
    return ExperimentConfig.from_yaml(config, seed=seed, out_dir=out)


config_opt = click.option("--config", type=click.Path(exists=True), help="YAML experiment config")
seed_opt = click.option("--seed", type=int, default=None, help="override config seed")
out_opt = click.option("--out", default=None, help="override config out_dir")


def _artifact(cfg: ExperimentConfig, override, name: str) -> Path:
    path = Path(override) if override else Path(cfg.out_dir) / name
    if not path.exists():
        raise click.UsageError(f"{name} not found at {path}; run `iclab train` first")
    return path


@click.group()
def main():
    """Desk-scale lab for interactive visual in-context learning."""


@main.command("gen-data")
@config_opt
@seed_opt
@out_opt
@click.option("--train", "n_train", type=int, default=None, help="training episode count")
@click.option("--val", "n_val", type=int, default=200, help="validation episode count")
@click.option("--test", "n_test", type=int, default=200, help="test episode count")
def gen_data(config, seed, out, n_train, n_val, n_test):
    """Write an episode corpus (PNG triplets + manifests + index.csv)."""
    cfg = _load_config(config, seed, out)
    from .tasks import generate_corpus

    counts = {"train": n_train if n_train is not None else cfg.n_train,
              "val": n_val, "test": n_test}
    for task in cfg.tasks:
        from .harness import _task_cues

        d = generate_corpus(
            Path(cfg.out_dir) / "corpus", task, _task_cues(cfg, task), counts,
            cfg.seed, scene_cfg=cfg.scene_config, style=cfg.cue_style, n_ctx=cfg.n_ctx,
        )
        click.echo(f"wrote {task.value} corpus to {d}")


@main.command("codebook-train")
@config_opt
@seed_opt
@out_opt
def codebook_train(config, seed, out):
    """Train the patch k-means codebook and export its atlas."""
    cfg = _load_config(config, seed, out)
    from .harness import train_episode
    from .interactions import blend
    from .tokenizer import export_codebook_atlas, save_codebook, train_codebook

    imgs = []
    for i in range(min(cfg.codebook_episodes, cfg.n_train)):
        ep = train_episode(cfg, i).episode
        for t in ep.context:
            imgs.append(blend(t.input, t.cue, 0.0))
            imgs.append(t.target)
        imgs.append(blend(ep.query_input, ep.query_cue, 0.0))
        imgs.append(ep.ground_truth)
    cb = train_codebook(imgs, cfg.tokenizer_config, seed=cfg.seed)
    outdir = Path(cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_codebook(cb, outdir / "codebook.bin")
    export_codebook_atlas(cb, outdir / "codebook_atlas.png")
    click.echo(f"codebook saved to {outdir / 'codebook.bin'}")


@main.command()
@config_opt
@seed_opt
@out_opt
def train(config, seed, out):
    """Full training run: corpus, codebook, model, holdout audit."""
    cfg = _load_config(config, seed, out)

    def progress(step, loss):
        click.echo(f"step {step:6d}  loss {loss:.4f}")

    art = run_training(cfg, progress=progress)
    click.echo(f"checkpoint: {art.checkpoint_path}")
    click.echo(f"codebook:   {art.codebook_path}")
    click.echo(f"train log:  {art.train_log_path}")


@main.command("eval")
@config_opt
@seed_opt
@out_opt
@click.option("--checkpoint", default=None, help="checkpoint path (default: <out>/checkpoint.bin)")
@click.option("--codebook", default=None, help="codebook path (default: <out>/codebook.bin)")
def eval_cmd(config, seed, out, checkpoint, codebook):
    """Evaluate against copy baselines, the VQ oracle, and the no-cue probe."""
    cfg = _load_config(config, seed, out)
    report = run_eval(
        cfg,
        _artifact(cfg, checkpoint, "checkpoint.bin"),
        _artifact(cfg, codebook, "codebook.bin"),
    )
    for agg in report.aggregate():
        click.echo(
            f"{agg['task']:>14} {agg['cue_kind']:>15} {agg['method']:>12} "
            f"{agg['metric']:>14} {agg['mean']:.4f} ± {agg['std']:.4f} (n={agg['count']})"
        )


@main.command("sweep-recoverability")
@config_opt
@seed_opt
@out_opt
@click.option("--codebook", default=None,
              help="codebook to sweep against (default: train the "
                   "width-spanning reference codebook)")
def sweep_recoverability(config, seed, out, codebook):
    """Cue recoverability vs stroke width, degradation table, change heatmaps."""
    cfg = _load_config(config, seed, out)
    result = run_sweep_recoverability(cfg, codebook)
    click.echo("chosen widths (first with mean recoverability >= 0.5):")
    click.echo(json.dumps(result["chosen_widths"], indent=2))


@main.command()
@config_opt
@seed_opt
@out_opt
@click.option("--which", type=click.Choice(["masking", "recolor", "decode-modes", "all"]),
              default="all")
@click.option("--checkpoint", default=None)
@click.option("--codebook", default=None)
def ablate(config, seed, out, which, checkpoint, codebook):
    """Masking-ratio, recoloring, and decode-mode ablations."""
    cfg = _load_config(config, seed, out)
    if which in ("masking", "all"):
        rows = run_ablation_masking(cfg)
        for r in rows:
            click.echo(f"mask_ratio {r['mask_ratio']:.1f} seed {r['seed']} "
                       f"token_accuracy {r['token_accuracy']:.4f}")
    if which in ("recolor", "all"):
        res = run_ablation_recolor(cfg)
        click.echo(f"color adherence: {json.dumps(res)}")
    if which in ("decode-modes", "all"):
        res = run_ablation_decode_modes(
            cfg,
            _artifact(cfg, checkpoint, "checkpoint.bin"),
            _artifact(cfg, codebook, "codebook.bin"),
        )
        click.echo(json.dumps(res, indent=2))


@main.command("token-stats")
@config_opt
@seed_opt
@out_opt
@click.option("--codebook", default=None)
@click.option("--top-k", type=int, default=32)
def token_stats(config, seed, out, codebook, top_k):
    """Token usage histogram over a deterministic episode sample."""
    cfg = _load_config(config, seed, out)
    top = run_token_stats(cfg, _artifact(cfg, codebook, "codebook.bin"), top_k=top_k)
    for tid, count in top:
        click.echo(f"token {tid:4d}  count {count}")


@main.command()
@config_opt
@seed_opt
@out_opt
@click.option("--checkpoint", default=None)
@click.option("--codebook", default=None)
@click.option("--task", default="segmentation")
@click.option("--cue", default="box")
@click.option("--index", type=int, default=0, help="test-corpus episode index")
@click.option("--mode", type=click.Choice(["single", "tbt"]), default="single")
@click.option("--panel", default=None, help="write a query|cue|prediction|GT panel PNG here")
@click.option("--server", default=None, help="run against a service URL instead of locally")
def infer(config, seed, out, checkpoint, codebook, task, cue, index, mode, panel, server):
    """Predict one episode, locally or via a running service."""
    cfg = _load_config(config, seed, out)
    from .interactions import CueKind
    from .tasks import TaskKind

    task_k, cue_k = TaskKind(task), CueKind(cue)
    if server is not None:
        _infer_remote(cfg, server, task_k, index, mode, panel)
        return
    from .harness import eval_episode, evaluate_episode
    from .model import checkpoint_load
    from .tokenizer import load_codebook

    params, _, _, _ = checkpoint_load(_artifact(cfg, checkpoint, "checkpoint.bin"))
    cb = load_codebook(_artifact(cfg, codebook, "codebook.bin"))
    le = eval_episode(cfg, task_k, cue_k, index)
    rows = evaluate_episode(params, cb, le, modes=["single" if mode == "single" else "tbt"])
    for method, pred, metrics in rows:
        click.echo(f"{method:>12}: " + "  ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
        if panel and method.startswith("model"):
            from .harness import _panel as make_panel
            from .imaging import save_png

            save_png(make_panel(le, pred), panel)
            click.echo(f"panel written to {panel}")


def _infer_remote(cfg, server, task_k, index, mode, panel):
    import base64

    import httpx

    with httpx.Client(base_url=server, timeout=60.0) as client:
        r = client.post("/api/sessions", json={"task": task_k.value, "seed": cfg.seed})
        r.raise_for_status()
        sid = r.json()["id"]
        r = client.post(f"/api/sessions/{sid}/predict", json={
            "query": {"corpus_index": index}, "strokes": None, "mode": mode,
        })
        r.raise_for_status()
        body = r.json()
        click.echo(f"metrics: {json.dumps(body.get('metrics'))}")
        if panel:
            Path(panel).write_bytes(base64.b64decode(body["prediction"]))
            click.echo(f"prediction PNG written to {panel}")
        client.delete(f"/api/sessions/{sid}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--codebook", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--workers", type=int, default=2)
@click.option("--session-ttl", type=float, default=3600.0)
@click.option("--cors-origin", "cors_origins", multiple=True, default=("*",))
def serve(checkpoint, codebook, host, port, workers, session_ttl, cors_origins):
    """Run the HTTP inference service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    cfg = ServiceConfig(
        checkpoint_path=checkpoint, codebook_path=codebook, workers=workers,
        session_ttl=session_ttl, cors_origins=tuple(cors_origins),
    )
    uvicorn.run(create_app(cfg), host=host, port=port)


if __name__ == "__main__":
    main()
