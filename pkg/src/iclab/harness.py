"""Experiment harness: config-driven corpus generation, codebook and model
training with hold-one-cue-out, evaluation against copy/oracle baselines,
the cue-recoverability sweep, and the ablation suite.

Every emitted number is a pure function of (config, seed); the harness
refuses to run without an explicit seed. Config files are YAML with the
schema documented on ExperimentConfig.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .imaging import DEFAULT_PALETTE, Image, save_png
from .interactions import (
    CueError,
    CueKind,
    CueStyle,
    blend,
    recover_cue,
    synth_cue,
)
from .metrics import MetricReport, iou, psnr, ssim, token_accuracy
from .model import (
    ModelConfig,
    TrainConfig,
    checkpoint_load,
    checkpoint_save,
    cosine_lr,
    decode_single_pass,
    decode_token_by_token,
    init_params,
    make_optimizer,
    train_step,
)
from .sequence import (
    Vocab,
    assemble,
    encode_episode_prefix,
    token_histogram,
)
from .tasks import (
    LabeledEpisode,
    SceneConfig,
    TaskKind,
    build_labeled_episode,
    gen_scene,
    render_scene,
    selectable_instances,
    split_seed,
)
from .tokenizer import (
    TokenizerConfig,
    decode,
    encode,
    load_codebook,
    save_codebook,
    token_change_map,
    train_codebook,
)


class HarnessError(ValueError):
    pass


PROBE_COLUMN = "none"  # eval column for the no-interaction probe


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, fully determined by this record.

    YAML schema (keys match field names; seed is mandatory):

        seed: 0
        out_dir: runs/default
        resolution: 64
        patch_size: 8
        codebook_size: 512
        codebook_episodes: 150        # episodes feeding k-means
        tasks: [segmentation]
        cues: [box, ellipse, click, pos_neg_clicks]
        holdout: scribble             # or null
        n_ctx: 3
        n_train: 3000
        n_eval: 30                    # test episodes per (task, cue)
        n_eval_tbt: 2                 # episodes for token-by-token rows
        recolor: false
        line_width: 3
        click_side: 7
        layers: 4
        heads: 4
        embed_dim: 128
        steps: 5500
        batch_size: 8
        base_lr: 3.0e-4
        min_lr: 1.0e-5
        mask_ratio: 1.0
        grad_clip: 1.0
        log_every: 50
        ablation_steps: 400           # per-variant budget for ablations
        ablation_train: 300
        ablation_eval: 20
        sweep_scenes: 200
    """

    seed: int
    out_dir: str
    resolution: int = 64
    patch_size: int = 8
    codebook_size: int = 512
    codebook_episodes: int = 150
    tasks: tuple[TaskKind, ...] = (TaskKind.SEGMENTATION,)
    cues: tuple[CueKind, ...] = (
        CueKind.BOX,
        CueKind.ELLIPSE,
        CueKind.CLICK,
        CueKind.POS_NEG_CLICKS,
    )
    holdout: CueKind | None = CueKind.SCRIBBLE
    n_ctx: int = 3
    n_train: int = 3000
    n_eval: int = 30
    n_eval_tbt: int = 2
    recolor: bool = False
    line_width: int = 3
    click_side: int = 7
    layers: int = 4
    heads: int = 4
    embed_dim: int = 128
    steps: int = 5500
    batch_size: int = 8
    base_lr: float = 3e-4
    min_lr: float = 1e-5
    mask_ratio: float = 1.0
    grad_clip: float = 1.0
    log_every: int = 50
    ablation_steps: int = 400
    ablation_train: int = 300
    ablation_eval: int = 20
    sweep_scenes: int = 200
    min_shapes: int = 2
    max_shapes: int = 3

    def __post_init__(self):
        if self.seed is None:
            raise HarnessError("an explicit seed is required")
        if CueKind.CONTOUR_TRACE in self.cues:
            raise HarnessError("contour_trace is evaluation-only and cannot be trained")
        if self.holdout is not None and self.holdout in self.cues:
            raise HarnessError("holdout cue must not appear in the training cue list")
        if not self.cues:
            raise HarnessError("need at least one training cue")
        if not self.tasks:
            raise HarnessError("need at least one task")

    # -- derived configs ---------------------------------------------------

    @property
    def tokenizer_config(self) -> TokenizerConfig:
        return TokenizerConfig(
            patch_size=self.patch_size,
            codebook_size=self.codebook_size,
            resolution=self.resolution,
        )

    @property
    def vocab(self) -> Vocab:
        return Vocab(self.codebook_size)

    @property
    def model_config(self) -> ModelConfig:
        tok = self.tokenizer_config
        return ModelConfig(
            vocab=self.vocab.size,
            layers=self.layers,
            heads=self.heads,
            embed_dim=self.embed_dim,
            context_len=(2 * self.n_ctx + 2) * tok.tokens_per_image,
        )

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            seed=self.seed,
            mask_ratio=self.mask_ratio,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            min_lr=self.min_lr,
            grad_clip=self.grad_clip,
        )

    @property
    def scene_config(self) -> SceneConfig:
        return SceneConfig(resolution=self.resolution,
                           min_shapes=self.min_shapes, max_shapes=self.max_shapes)

    @property
    def cue_style(self) -> CueStyle:
        return CueStyle(line_width=self.line_width, click_side=self.click_side)

    @property
    def eval_cues(self) -> tuple[CueKind, ...]:
        """Training cues, then the holdout, then the permanent unseen cue."""
        extra = [self.holdout] if self.holdout is not None else []
        return tuple(self.cues) + tuple(extra) + (CueKind.CONTOUR_TRACE,)

    # -- serialization -----------------------------------------------------

    @classmethod
    def from_yaml(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        if "seed" not in raw:
            raise HarnessError("config must set an explicit seed")
        if "out_dir" not in raw:
            raise HarnessError("config must set out_dir")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise HarnessError(f"unknown config keys: {sorted(unknown)}")
        if "tasks" in raw:
            raw["tasks"] = tuple(TaskKind(t) for t in raw["tasks"])
        if "cues" in raw:
            raw["cues"] = tuple(CueKind(c) for c in raw["cues"])
        if raw.get("holdout") is not None:
            raw["holdout"] = CueKind(raw["holdout"])
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = [t.value for t in self.tasks]
        d["cues"] = [c.value for c in self.cues]
        d["holdout"] = self.holdout.value if self.holdout else None
        return d

    def save(self, path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)


@dataclass
class RunArtifacts:
    out_dir: Path
    codebook_path: Path
    checkpoint_path: Path
    train_log_path: Path
    audit_path: Path


# ---------------------------------------------------------------------------
# episode plumbing


def _train_spec(cfg: ExperimentConfig, index: int) -> tuple[TaskKind, CueKind]:
    """Deterministic (task, cue) assignment for training episode `index`."""
    combos = [(t, c) for t in cfg.tasks for c in _task_cues(cfg, t)]
    return combos[index % len(combos)]


def _task_cues(cfg: ExperimentConfig, task: TaskKind) -> list[CueKind]:
    from .tasks import ZOOM_CUE_KINDS

    cues = list(cfg.cues)
    if task is TaskKind.ZOOM:
        cues = [c for c in cues if c in ZOOM_CUE_KINDS]
        if not cues:
            raise HarnessError("zoom task requires box or ellipse in the cue list")
    return cues


def train_episode(cfg: ExperimentConfig, index: int) -> LabeledEpisode:
    task, cue = _train_spec(cfg, index)
    return build_labeled_episode(
        task, cue, cfg.n_ctx, DEFAULT_PALETTE,
        split_seed(cfg.seed, "train", index),
        scene_cfg=cfg.scene_config, style=cfg.cue_style, recolor=cfg.recolor,
    )


_ALL_TASKS = list(TaskKind)
_ALL_CUES = list(CueKind)


def _eval_salt(task: TaskKind, cue: CueKind) -> int:
    """Stable per-(task, cue) seed offset so eval columns never share scenes."""
    return (_ALL_TASKS.index(task) * len(_ALL_CUES) + _ALL_CUES.index(cue)) * 100_000


def eval_episode(
    cfg: ExperimentConfig, task: TaskKind, cue: CueKind, index: int
) -> LabeledEpisode:
    salt = _eval_salt(task, cue)
    return build_labeled_episode(
        task, cue, cfg.n_ctx, DEFAULT_PALETTE,
        split_seed(cfg.seed, "test", salt + index),
        scene_cfg=cfg.scene_config, style=cfg.cue_style, recolor=cfg.recolor,
    )


def probe_prefix(episode, codebook) -> np.ndarray:
    """Prefix for the no-interaction probe: context as usual, query unblended."""
    parts = []
    for t in episode.context:
        parts.append(encode(blend(t.input, t.cue, 0.0), codebook).flat())
        parts.append(encode(t.target, codebook).flat())
    parts.append(encode(episode.query_input, codebook).flat())
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# training


def run_training(cfg: ExperimentConfig, progress=None) -> RunArtifacts:
    """Generate the training stream, train codebook and model, audit the
    holdout constraint, and write artifacts under cfg.out_dir."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.yaml")

    # Holdout audit: the excluded and evaluation-only cues must be absent.
    # Episode generation is seed-deterministic per index, so the stream is
    # generated twice (codebook images, then sequence pairs) instead of
    # holding every episode's images in memory at once.
    banned = {CueKind.CONTOUR_TRACE} | ({cfg.holdout} if cfg.holdout else set())

    def check_kind(kind: CueKind) -> str:
        if kind in banned:
            raise HarnessError(f"banned cue kind in training stream: {kind.value}")
        return kind.value

    seen_kinds: set[str] = set()
    cb_imgs = []
    for i in range(min(cfg.codebook_episodes, cfg.n_train)):
        ep = train_episode(cfg, i).episode
        seen_kinds.add(check_kind(ep.cue_kind))
        for t in ep.context:
            cb_imgs.append(blend(t.input, t.cue, 0.0))
            cb_imgs.append(t.target)
        cb_imgs.append(blend(ep.query_input, ep.query_cue, 0.0))
        cb_imgs.append(ep.ground_truth)
    objective_log: list = []
    codebook = train_codebook(
        cb_imgs, cfg.tokenizer_config, seed=cfg.seed, objective_log=objective_log
    )
    del cb_imgs
    codebook_path = out / "codebook.bin"
    save_codebook(codebook, codebook_path)
    with open(out / "codebook_objective.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "objective"])
        w.writerows((i, f"{v:.10g}") for i, v in enumerate(objective_log))

    pairs = []
    for i in range(cfg.n_train):
        ep = train_episode(cfg, i).episode
        seen_kinds.add(check_kind(ep.cue_kind))
        pairs.append(
            assemble(ep, codebook, cfg.mask_ratio, split_seed(cfg.seed, "train", i))
        )

    audit = {
        "train_cue_kinds": sorted(seen_kinds),
        "holdout": cfg.holdout.value if cfg.holdout else None,
        "n_train": cfg.n_train,
        "train_seed_range": [split_seed(cfg.seed, "train", 0),
                             split_seed(cfg.seed, "train", cfg.n_train - 1)],
    }
    audit_path = out / "audit.json"
    audit_path.write_text(json.dumps(audit, indent=2))

    params = init_params(cfg.model_config, cfg.seed)
    tc = cfg.train_config
    opt = make_optimizer(params, tc)
    batch_rng = np.random.Generator(np.random.PCG64(cfg.seed + 0x5EED))
    log_rows = []
    for step in range(tc.steps):
        idx = batch_rng.integers(0, len(pairs), tc.batch_size)
        value = train_step(params, opt, [pairs[i] for i in idx], tc, step)
        if step % cfg.log_every == 0 or step == tc.steps - 1:
            log_rows.append((step, value, cosine_lr(step, tc)))
            if progress is not None:
                progress(step, value)
    train_log_path = out / "train_log.csv"
    with open(train_log_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss", "lr"])
        w.writerows((s, f"{l:.10g}", f"{r:.10g}") for s, l, r in log_rows)

    checkpoint_path = out / "checkpoint.bin"
    checkpoint_save(params, opt, tc, checkpoint_path, step=tc.steps)
    return RunArtifacts(out, codebook_path, checkpoint_path, train_log_path, audit_path)


# ---------------------------------------------------------------------------
# evaluation


def _episode_colors(le: LabeledEpisode) -> tuple[tuple, tuple]:
    fg = le.fg if le.fg is not None else (1.0, 1.0, 1.0)
    bg = le.bg if le.bg is not None else (0.0, 0.0, 0.0)
    return tuple(fg), tuple(bg)


def _image_metrics(pred: Image, le: LabeledEpisode) -> dict:
    ep = le.episode
    out = {"ssim": ssim(pred, ep.ground_truth), "psnr": psnr(pred, ep.ground_truth)}
    if ep.task == TaskKind.SEGMENTATION.value:
        fg, bg = _episode_colors(le)
        out["iou"] = iou(pred, ep.ground_truth, fg, bg)
    return out


def evaluate_episode(
    params, codebook, le: LabeledEpisode, *, modes=("single",), copy_rng=None
) -> list[tuple[str, Image, dict]]:
    """All (method, prediction, metrics) rows for one episode."""
    ep = le.episode
    vocab = Vocab(codebook.config.codebook_size)
    grid_shape = (codebook.config.grid_size,) * 2
    out_len = codebook.config.tokens_per_image
    prefix = encode_episode_prefix(ep, codebook)
    gt_grid = encode(ep.ground_truth, codebook)

    rows: list[tuple[str, Image, dict]] = []

    def model_row(method: str, grid):
        pred = decode(grid, codebook)
        metrics = _image_metrics(pred, le)
        metrics["token_accuracy"] = token_accuracy(grid, gt_grid)
        rows.append((method, pred, metrics))

    if "single" in modes:
        model_row("model_single", decode_single_pass(params, prefix, out_len, vocab.mask_id, grid_shape))
    if "tbt" in modes:
        model_row("model_tbt", decode_token_by_token(params, prefix, out_len, vocab.mask_id, grid_shape))
    if "probe" in modes:
        pprefix = probe_prefix(ep, codebook)
        model_row("model_probe", decode_single_pass(params, pprefix, out_len, vocab.mask_id, grid_shape))

    rows.append(("copy_query", ep.query_input, _image_metrics(ep.query_input, le)))
    pick = 0 if copy_rng is None else int(copy_rng.integers(len(ep.context)))
    copy_target = ep.context[pick].target
    rows.append(("copy_target", copy_target, _image_metrics(copy_target, le)))
    vq = decode(gt_grid, codebook)
    vq_metrics = _image_metrics(vq, le)
    vq_metrics["token_accuracy"] = 1.0
    rows.append(("vq_oracle", vq, vq_metrics))
    return rows


def _panel(le: LabeledEpisode, pred: Image) -> Image:
    """query | blended query | prediction | ground truth strip."""
    ep = le.episode
    blended = blend(ep.query_input, ep.query_cue, 0.0)
    imgs = [ep.query_input, blended, pred, ep.ground_truth]
    h = imgs[0].height
    sep = np.ones((h, 2, 3))
    parts = []
    for i, im in enumerate(imgs):
        if i:
            parts.append(sep)
        parts.append(im.data)
    return Image(np.concatenate(parts, axis=1))


def run_eval(
    cfg: ExperimentConfig,
    checkpoint_path,
    codebook_path,
    out_dir=None,
    n_panels: int = 4,
) -> MetricReport:
    """Tables per task: model (both decode modes), copy baselines, VQ oracle,
    and the no-interaction probe, across all evaluation cue columns."""
    params, _, _, _ = checkpoint_load(checkpoint_path)
    if params.cfg != cfg.model_config:
        raise HarnessError("checkpoint model config does not match experiment config")
    codebook = load_codebook(codebook_path)
    out = Path(out_dir) if out_dir else Path(cfg.out_dir) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    panels_dir = out / "panels"
    panels_dir.mkdir(exist_ok=True)

    report = MetricReport()
    copy_rng = np.random.Generator(np.random.PCG64(cfg.seed + 0xC0BB))
    for task in cfg.tasks:
        cue_columns = [c for c in cfg.eval_cues if c in _eval_cues_for(cfg, task)]
        for cue in cue_columns:
            for i in range(cfg.n_eval):
                le = eval_episode(cfg, task, cue, i)
                modes = ["single"]
                if i < cfg.n_eval_tbt:
                    modes.append("tbt")
                rows = evaluate_episode(
                    params, codebook, le, modes=modes, copy_rng=copy_rng
                )
                for method, pred, metrics in rows:
                    report.add(episode=i, task=task.value, cue_kind=cue.value,
                               method=method, **metrics)
                    if i < n_panels and method == "model_single":
                        save_png(_panel(le, pred),
                                 panels_dir / f"{task.value}_{cue.value}_{i}.png")
        # No-interaction probe, one column per task (box-cued episodes).
        probe_cue = cue_columns[0]
        for i in range(cfg.n_eval):
            le = eval_episode(cfg, task, probe_cue, i)
            rows = evaluate_episode(params, codebook, le, modes=["probe"], copy_rng=copy_rng)
            for method, pred, metrics in rows:
                if method in ("model_probe", "copy_target"):
                    report.add(episode=i, task=task.value, cue_kind=PROBE_COLUMN,
                               method=method, **metrics)

    report.to_csv(out / "report.csv")
    report.to_json(out / "report.json")
    for task in cfg.tasks:
        _write_pivot(report, task, out / f"table_{task.value}.csv")
    return report


def _eval_cues_for(cfg: ExperimentConfig, task: TaskKind) -> set[CueKind]:
    from .tasks import ZOOM_CUE_KINDS

    if task is TaskKind.ZOOM:
        return set(ZOOM_CUE_KINDS)
    return set(cfg.eval_cues)


def _write_pivot(report: MetricReport, task: TaskKind, path) -> None:
    """Methods x cues table of the task's primary metric."""
    metric = "iou" if task is TaskKind.SEGMENTATION else "ssim"
    rows = [r for r in report.rows if r["task"] == task.value and metric in r]
    methods = sorted({r["method"] for r in rows})
    cues = sorted({r["cue_kind"] for r in rows})
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method"] + cues)
        for m in methods:
            out_row = [m]
            for c in cues:
                vals = [float(r[metric]) for r in rows
                        if r["method"] == m and r["cue_kind"] == c]
                out_row.append(f"{np.mean(vals):.10g}" if vals else "")
            w.writerow(out_row)


# ---------------------------------------------------------------------------
# recoverability sweep (Fig. 3 / Table 1 / Appendix J analogs)


LINE_WIDTH_RANGE = range(1, 10)
CLICK_SIDE_RANGE = range(1, 14)
LINE_CUES = (CueKind.BOX, CueKind.ELLIPSE, CueKind.SCRIBBLE, CueKind.CONTOUR_TRACE)
CLICK_CUES = (CueKind.CLICK, CueKind.POS_NEG_CLICKS)


def _sweep_scenes(cfg: ExperimentConfig, n: int):
    """Deterministic (input image, instance mask) pairs for the sweep."""
    out = []
    i = 0
    while len(out) < n:
        scene = gen_scene(cfg.scene_config, split_seed(cfg.seed, "val", i))
        i += 1
        sample = render_scene(scene, cfg.resolution)
        sel = selectable_instances(sample)
        if not sel:
            continue
        # Largest visible instance: stable and non-degenerate.
        inst = max(sel, key=lambda j: int(sample.instance_masks[j].data.sum()))
        out.append((sample.input, sample.instance_masks[inst]))
    return out


def train_width_reference_codebook(cfg: ExperimentConfig, n_episodes: int = 150):
    """Codebook trained on cue-annotated episodes whose stroke widths span
    the full sweep ranges, so no single width is privileged by the
    tokenizer. A run's own codebook sees cues only at the configured widths
    and therefore reconstructs exactly those widths best, which would mask
    the underlying wider-is-more-recoverable trend."""
    rng = np.random.default_rng(cfg.seed)
    # At small resolutions the largest sweep widths leave no room for valid
    # cue placements, so cap the sampled styles relative to the canvas.
    max_width = min(LINE_WIDTH_RANGE.stop - 1, max(2, cfg.resolution // 7))
    max_side = min(CLICK_SIDE_RANGE.stop - 1, max(3, cfg.resolution // 5))
    imgs = []
    for i in range(n_episodes):
        task, cue = _train_spec(cfg, i)
        style = CueStyle(
            line_width=int(rng.integers(LINE_WIDTH_RANGE.start, max_width + 1)),
            click_side=int(rng.integers(CLICK_SIDE_RANGE.start, max_side + 1)),
        )
        le = build_labeled_episode(
            task, cue, cfg.n_ctx, DEFAULT_PALETTE,
            split_seed(cfg.seed, "train", 800_000 + i),
            scene_cfg=cfg.scene_config, style=style, recolor=cfg.recolor,
        )
        ep = le.episode
        for t in ep.context:
            imgs.append(blend(t.input, t.cue, 0.0))
            imgs.append(t.target)
        imgs.append(blend(ep.query_input, ep.query_cue, 0.0))
        imgs.append(ep.ground_truth)
    return train_codebook(imgs, cfg.tokenizer_config, seed=cfg.seed)


def run_sweep_recoverability(cfg: ExperimentConfig, codebook_path=None, out_dir=None) -> dict:
    """Cue recoverability vs width, the with/without-cue degradation table,
    and token-change heatmaps bucketed by box size.

    With no codebook path, sweeps against the width-spanning reference
    codebook (saved next to the results)."""
    out = Path(out_dir) if out_dir else Path(cfg.out_dir) / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    if codebook_path is None:
        codebook = train_width_reference_codebook(cfg)
        save_codebook(codebook, out / "sweep_codebook.bin")
    else:
        codebook = load_codebook(codebook_path)
    scenes = _sweep_scenes(cfg, cfg.sweep_scenes)

    def roundtrip(img: Image) -> Image:
        return decode(encode(img, codebook), codebook)

    sweep_rows = []
    chosen: dict[str, int | None] = {}
    for kind in LINE_CUES + CLICK_CUES:
        widths = CLICK_SIDE_RANGE if kind in CLICK_CUES else LINE_WIDTH_RANGE
        means = []
        for width in widths:
            if kind in CLICK_CUES:
                style = CueStyle(line_width=cfg.line_width, click_side=width)
            else:
                style = CueStyle(line_width=width, click_side=cfg.click_side)
            scores = []
            for si, (img, mask) in enumerate(scenes):
                try:
                    cue = synth_cue(kind, mask, style, seed=split_seed(cfg.seed, "val", 50_000 + si))
                except CueError:
                    # No valid placement on this mask (e.g. no room for
                    # negative clicks at this side); score remaining scenes.
                    continue
                rec = roundtrip(blend(img, cue, 0.0))
                scores.append(recover_cue(rec, cue, style))
            if not scores:
                continue
            mean = float(np.mean(scores))
            means.append((width, mean))
            sweep_rows.append((kind.value, width, mean))
        sel = next((w for w, m in means if m >= 0.5), None)
        chosen[kind.value] = sel

    with open(out / "recoverability.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cue_kind", "width", "mean_recover_iou"])
        w.writerows((k, wd, f"{m:.10g}") for k, wd, m in sweep_rows)
    (out / "chosen_widths.json").write_text(json.dumps(chosen, indent=2))

    # Table-1 analog: reconstruction quality with vs without each cue.
    t1_rows = []
    base_scores = [(ssim(img, roundtrip(img)), psnr(img, roundtrip(img))) for img, _ in scenes]
    t1_rows.append(("no_cue", float(np.mean([s for s, _ in base_scores])),
                    float(np.mean([p for _, p in base_scores]))))
    for kind in LINE_CUES + CLICK_CUES:
        ss, pp = [], []
        for si, (img, mask) in enumerate(scenes):
            try:
                cue = synth_cue(kind, mask, cfg.cue_style, seed=split_seed(cfg.seed, "val", 60_000 + si))
            except CueError:
                continue
            blended = blend(img, cue, 0.0)
            rec = roundtrip(blended)
            ss.append(ssim(blended, rec))
            pp.append(psnr(blended, rec))
        t1_rows.append((kind.value, float(np.mean(ss)), float(np.mean(pp))))
    with open(out / "degradation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cue_kind", "ssim", "psnr"])
        w.writerows((k, f"{s:.10g}", f"{p:.10g}") for k, s, p in t1_rows)

    # Appendix-J analog: token-change frequency by box-size bucket (of 4 px).
    g = codebook.config.grid_size
    buckets: dict[int, list[np.ndarray]] = {}
    cue_cells: dict[int, list[np.ndarray]] = {}
    for si, (img, mask) in enumerate(scenes):
        cue = synth_cue(CueKind.BOX, mask, cfg.cue_style)
        change = token_change_map(img, cue, codebook)
        ys, xs = np.nonzero(mask.data)
        extent = max(ys.max() - ys.min() + 1, xs.max() - xs.min() + 1)
        bucket = int((extent - 1) // 4)
        p = codebook.config.patch_size
        cell_active = cue.active.data.reshape(g, p, g, p).any(axis=(1, 3))
        buckets.setdefault(bucket, []).append(change)
        cue_cells.setdefault(bucket, []).append(cell_active)
    heat_rows = []
    for bucket in sorted(buckets):
        heat = np.mean(buckets[bucket], axis=0)
        on_cue = [c[a].mean() if a.any() else 0.0
                  for c, a in zip(buckets[bucket], cue_cells[bucket])]
        off_cue = [c[~a].mean() if (~a).any() else 0.0
                   for c, a in zip(buckets[bucket], cue_cells[bucket])]
        heat_rows.append({
            "bucket": bucket,
            "size_range": f"{bucket * 4 + 1}-{bucket * 4 + 4}",
            "count": len(buckets[bucket]),
            "mean_change_on_cue_cells": float(np.mean(on_cue)),
            "mean_change_off_cue_cells": float(np.mean(off_cue)),
            "heatmap": json.dumps(np.round(heat, 6).tolist()),
        })
    with open(out / "token_change_heatmaps.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["bucket", "size_range", "count",
                                          "mean_change_on_cue_cells",
                                          "mean_change_off_cue_cells", "heatmap"])
        w.writeheader()
        w.writerows(heat_rows)

    return {"chosen_widths": chosen, "sweep": sweep_rows, "degradation": t1_rows,
            "heatmaps": heat_rows}


# ---------------------------------------------------------------------------
# ablations


def _small_cfg(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    base = dict(
        n_train=cfg.ablation_train,
        n_eval=cfg.ablation_eval,
        steps=cfg.ablation_steps,
        codebook_episodes=min(cfg.codebook_episodes, cfg.ablation_train),
    )
    base.update(overrides)
    return replace(cfg, **base)


def _train_and_token_accuracy(cfg: ExperimentConfig, eval_cue: CueKind) -> float:
    """Train under cfg and return mean eval token accuracy (single pass)."""
    art = run_training(cfg)
    params, _, _, _ = checkpoint_load(art.checkpoint_path)
    codebook = load_codebook(art.codebook_path)
    vocab = Vocab(codebook.config.codebook_size)
    gs = (codebook.config.grid_size,) * 2
    accs = []
    for i in range(cfg.n_eval):
        le = eval_episode(cfg, cfg.tasks[0], eval_cue, i)
        prefix = encode_episode_prefix(le.episode, codebook)
        grid = decode_single_pass(params, prefix, codebook.config.tokens_per_image,
                                  vocab.mask_id, gs)
        accs.append(token_accuracy(grid, encode(le.episode.ground_truth, codebook)))
    return float(np.mean(accs))


def run_ablation_masking(cfg: ExperimentConfig, seeds=(0, 1, 2), out_dir=None) -> list[dict]:
    """Token accuracy per masking ratio over shared seeds (Fig. 12 analog)."""
    out = Path(out_dir) if out_dir else Path(cfg.out_dir) / "ablations"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for ratio in (0.0, 0.5, 1.0):
        for s in seeds:
            sub = _small_cfg(
                cfg, mask_ratio=ratio, seed=cfg.seed + s,
                out_dir=str(out / f"mask_{ratio:g}_seed{s}"),
            )
            acc = _train_and_token_accuracy(sub, cfg.cues[0])
            rows.append({"mask_ratio": ratio, "seed": s, "token_accuracy": acc})
    with open(out / "masking.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["mask_ratio", "seed", "token_accuracy"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "token_accuracy": f"{r['token_accuracy']:.10g}"})
    return rows


def color_adherence(pred: Image, fg: tuple, bg: tuple) -> float:
    """Fraction of pixels whose nearest palette color is the episode's fg or
    bg — measures whether a prediction adopted the context color scheme."""
    from .imaging import snap_to_palette

    palette = [tuple(c) for c in DEFAULT_PALETTE.colors()]
    extra = [c for c in (tuple(fg), tuple(bg)) if c not in palette]
    full = palette + extra
    idx = snap_to_palette(pred, full)
    want = {full.index(tuple(fg)), full.index(tuple(bg))}
    return float(np.isin(idx, list(want)).mean())


def run_ablation_recolor(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Adherence mechanism (§ recoloring): a recolor-trained model adopts the
    episode's novel color pair, a fixed-color model keeps emitting white/black."""
    out = Path(out_dir) if out_dir else Path(cfg.out_dir) / "ablations"
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for label, recolor in (("recolored", True), ("fixed", False)):
        sub = _small_cfg(cfg, recolor=recolor, out_dir=str(out / f"recolor_{label}"))
        art = run_training(sub)
        params, _, _, _ = checkpoint_load(art.checkpoint_path)
        codebook = load_codebook(art.codebook_path)
        vocab = Vocab(codebook.config.codebook_size)
        gs = (codebook.config.grid_size,) * 2
        # Evaluate both variants on recolored episodes. Color pairs touching
        # white or black are skipped: the fixed-color model always emits a
        # white-on-black map, so those pairs would not discriminate.
        eval_cfg = replace(sub, recolor=True, seed=sub.seed + 7_777)
        scores = []
        i = 0
        while len(scores) < sub.n_eval:
            le = eval_episode(eval_cfg, sub.tasks[0], sub.cues[0], i)
            i += 1
            banned = {(1.0, 1.0, 1.0), (0.0, 0.0, 0.0)}
            if tuple(le.fg) in banned or tuple(le.bg) in banned:
                continue
            prefix = encode_episode_prefix(le.episode, codebook)
            grid = decode_single_pass(params, prefix, codebook.config.tokens_per_image,
                                      vocab.mask_id, gs)
            fg, bg = _episode_colors(le)
            scores.append(color_adherence(decode(grid, codebook), fg, bg))
        results[label] = float(np.mean(scores))
    with open(out / "recolor.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "color_adherence"])
        for k, v in results.items():
            w.writerow([k, f"{v:.10g}"])
    return results


def run_ablation_decode_modes(
    cfg: ExperimentConfig, checkpoint_path, codebook_path, out_dir=None
) -> dict:
    """Mean primary-metric delta between single-pass and token-by-token
    decoding on the default model (Table 8 analog)."""
    params, _, _, _ = checkpoint_load(checkpoint_path)
    codebook = load_codebook(codebook_path)
    out = Path(out_dir) if out_dir else Path(cfg.out_dir) / "ablations"
    out.mkdir(parents=True, exist_ok=True)
    vocab = Vocab(codebook.config.codebook_size)
    gs = (codebook.config.grid_size,) * 2
    task = cfg.tasks[0]
    metric = "iou" if task is TaskKind.SEGMENTATION else "ssim"
    singles, tbts = [], []
    for i in range(cfg.n_eval_tbt):
        le = eval_episode(cfg, task, cfg.cues[0], i)
        prefix = encode_episode_prefix(le.episode, codebook)
        out_len = codebook.config.tokens_per_image
        g1 = decode_single_pass(params, prefix, out_len, vocab.mask_id, gs)
        g2 = decode_token_by_token(params, prefix, out_len, vocab.mask_id, gs)
        singles.append(_image_metrics(decode(g1, codebook), le)[metric])
        tbts.append(_image_metrics(decode(g2, codebook), le)[metric])
    result = {
        "metric": metric,
        "single_pass": float(np.mean(singles)),
        "token_by_token": float(np.mean(tbts)),
        "abs_delta": float(abs(np.mean(singles) - np.mean(tbts))),
    }
    with open(out / "decode_modes.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "single_pass", "token_by_token", "abs_delta"])
        w.writerow([metric, f"{result['single_pass']:.10g}",
                    f"{result['token_by_token']:.10g}", f"{result['abs_delta']:.10g}"])
    return result


# ---------------------------------------------------------------------------
# token statistics


def run_token_stats(cfg: ExperimentConfig, codebook_path, out_dir=None, top_k: int = 32) -> list:
    """Token usage histogram over a deterministic episode sample."""
    codebook = load_codebook(codebook_path)
    out = Path(out_dir) if out_dir else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grids = []
    n = min(cfg.n_train, 50)
    for i in range(n):
        le = train_episode(cfg, i)
        ep = le.episode
        for t in ep.context:
            grids.append(encode(blend(t.input, t.cue, 0.0), codebook))
            grids.append(encode(t.target, codebook))
        grids.append(encode(blend(ep.query_input, ep.query_cue, 0.0), codebook))
        grids.append(encode(ep.ground_truth, codebook))
    top = token_histogram(grids, top_k)
    total = sum(g.ids.size for g in grids)
    with open(out / "token_stats.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["token_id", "count", "fraction"])
        w.writerows((i, c, f"{c / total:.10g}") for i, c in top)
    return top
