"""Procedural desk-scale scene generation and the four interactive tasks:
segmentation, object removal, region zoom, and stick-figure pose.

Scenes are described in unit coordinates and evaluated analytically at
pixel centers, so the supersampled master render, the base-resolution
render, and the per-shape visibility masks all agree on geometry. Visible
masks are computed by top-most ownership and are therefore disjoint.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .imaging import (
    ColorPalette,
    DEFAULT_PALETTE,
    Image,
    Mask,
    SkeletonSpec,
    default_keypoint_radius,
    render_seg_map,
    render_skeleton,
    resize,
)
from .interactions import CueError, CueImage, CueKind, CueStyle, synth_cue
from .sequence import (
    CANONICAL_BG,
    CANONICAL_FG,
    Episode,
    Triplet,
    recolor_augment,
    recolor_episode,
)


class TaskError(ValueError):
    pass


class TaskKind(str, Enum):
    SEGMENTATION = "segmentation"
    REMOVAL = "removal"
    ZOOM = "zoom"
    POSE = "pose"


ZOOM_CUE_KINDS = (CueKind.BOX, CueKind.ELLIPSE)
ZOOM_AREA_BOUNDS = (0.09, 0.73)

# Scene fills avoid the cue colors (pure red / pure blue).
SCENE_PALETTE = ColorPalette(
    tuple(e for e in DEFAULT_PALETTE.entries if e[0] not in ("red", "blue"))
)

STICK_JOINTS = ("head", "neck", "pelvis", "right_hand", "left_hand", "right_foot", "left_foot")
STICK_BONES = ((0, 1), (1, 2), (1, 3), (1, 4), (2, 5), (2, 6))


@dataclass(frozen=True)
class Shape:
    kind: str  # circle | rectangle | triangle | stick_figure
    color: tuple[float, float, float]
    params: dict  # unit-coordinate geometry, kind-specific


@dataclass(frozen=True)
class Scene:
    shapes: tuple[Shape, ...]  # z-order: later shapes draw on top
    background: tuple  # ("flat", color) or ("gradient", top_color, bottom_color)
    master_scale: int = 2

    def __post_init__(self):
        if not (2 <= len(self.shapes) <= 5):
            raise TaskError("scenes hold 2-5 shapes")


@dataclass(frozen=True)
class SceneConfig:
    resolution: int = 64
    master_scale: int = 2
    min_shapes: int = 2
    max_shapes: int = 5
    palette: ColorPalette = SCENE_PALETTE


@dataclass(frozen=True)
class Sample:
    input: Image
    instance_masks: tuple[Mask, ...]
    master: Image  # supersampled render, kept for zoom targets
    scene: Scene


def _sample_color(rng: np.random.Generator, palette: ColorPalette, exclude: set) -> tuple:
    colors = [c for c in palette.colors() if c not in exclude]
    return colors[int(rng.integers(len(colors)))]


def _sample_stick_joints(rng: np.random.Generator, cy: float, cx: float, scale: float) -> dict:
    """Joint positions for a 6-limb toy figure, jittered but fully inside
    the bounding square of half-extent `scale` around (cy, cx)."""
    j = lambda a, b: float(rng.uniform(a, b))
    neck = (cy - 0.25 * scale + j(-0.05, 0.05) * scale, cx + j(-0.1, 0.1) * scale)
    head = (neck[0] - 0.3 * scale, neck[1] + j(-0.1, 0.1) * scale)
    pelvis = (cy + 0.25 * scale + j(-0.05, 0.05) * scale, cx + j(-0.1, 0.1) * scale)
    rhand = (neck[0] + j(0.0, 0.4) * scale, neck[1] - (0.4 + j(0.0, 0.3)) * scale)
    lhand = (neck[0] + j(0.0, 0.4) * scale, neck[1] + (0.4 + j(0.0, 0.3)) * scale)
    rfoot = (pelvis[0] + (0.4 + j(0.0, 0.2)) * scale, pelvis[1] - (0.15 + j(0.0, 0.25)) * scale)
    lfoot = (pelvis[0] + (0.4 + j(0.0, 0.2)) * scale, pelvis[1] + (0.15 + j(0.0, 0.25)) * scale)
    return {
        "joints": [head, neck, pelvis, rhand, lhand, rfoot, lfoot],
        "limb_radius": 0.035 * scale + 0.01,
        "head_radius": 0.16 * scale,
    }


def gen_scene(cfg: SceneConfig, seed: int) -> Scene:
    """Seeded sampling of background, shape kinds, colors, geometry, z-order."""
    rng = np.random.Generator(np.random.PCG64(seed))
    if rng.random() < 0.5:
        bg = ("flat", _sample_color(rng, cfg.palette, set()))
    else:
        top = _sample_color(rng, cfg.palette, set())
        bottom = _sample_color(rng, cfg.palette, {top})
        bg = ("gradient", top, bottom)
    bg_colors = set(bg[1:])
    n = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    shapes = []
    for _ in range(n):
        kind = ("circle", "rectangle", "triangle", "stick_figure")[int(rng.integers(4))]
        color = _sample_color(rng, cfg.palette, bg_colors)
        if kind == "circle":
            r = float(rng.uniform(0.08, 0.18))
            cy = float(rng.uniform(r, 1 - r))
            cx = float(rng.uniform(r, 1 - r))
            params = {"cy": cy, "cx": cx, "r": r}
        elif kind == "rectangle":
            hy = float(rng.uniform(0.06, 0.17))
            hx = float(rng.uniform(0.06, 0.17))
            cy = float(rng.uniform(hy, 1 - hy))
            cx = float(rng.uniform(hx, 1 - hx))
            params = {"cy": cy, "cx": cx, "hy": hy, "hx": hx}
        elif kind == "triangle":
            h = float(rng.uniform(0.12, 0.3))
            cy = float(rng.uniform(h / 2, 1 - h / 2))
            cx = float(rng.uniform(h / 2, 1 - h / 2))
            pts = []
            for ang in (rng.uniform(0, 2 * math.pi) + np.array([0.0, 2.2, 4.2])):
                rr = float(rng.uniform(0.6, 1.0)) * h / 2
                pts.append((cy + rr * math.sin(ang), cx + rr * math.cos(ang)))
            params = {"pts": pts}
        else:
            scale = float(rng.uniform(0.14, 0.22))
            cy = float(rng.uniform(scale + 0.02, 1 - scale - 0.02))
            cx = float(rng.uniform(scale + 0.02, 1 - scale - 0.02))
            params = _sample_stick_joints(rng, cy, cx, scale)
        shapes.append(Shape(kind, color, params))
    return Scene(tuple(shapes), bg, cfg.master_scale)


def _pixel_centers(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(resolution) + 0.5) / resolution
    return np.meshgrid(c, c, indexing="ij")  # (yy, xx)


def _shape_coverage(shape: Shape, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    p = shape.params
    if shape.kind == "circle":
        return (yy - p["cy"]) ** 2 + (xx - p["cx"]) ** 2 <= p["r"] ** 2
    if shape.kind == "rectangle":
        return (np.abs(yy - p["cy"]) <= p["hy"]) & (np.abs(xx - p["cx"]) <= p["hx"])
    if shape.kind == "triangle":
        (y0, x0), (y1, x1), (y2, x2) = p["pts"]
        d0 = (xx - x1) * (y0 - y1) - (yy - y1) * (x0 - x1)
        d1 = (xx - x2) * (y1 - y2) - (yy - y2) * (x1 - x2)
        d2 = (xx - x0) * (y2 - y0) - (yy - y0) * (x2 - x0)
        neg = (d0 <= 0) & (d1 <= 0) & (d2 <= 0)
        pos = (d0 >= 0) & (d1 >= 0) & (d2 >= 0)
        return neg | pos
    if shape.kind == "stick_figure":
        joints = p["joints"]
        cover = (yy - joints[0][0]) ** 2 + (xx - joints[0][1]) ** 2 <= p["head_radius"] ** 2
        r2 = p["limb_radius"] ** 2
        for a, b in STICK_BONES:
            (ya, xa), (yb, xb) = joints[a], joints[b]
            dy, dx = yb - ya, xb - xa
            ln2 = dy * dy + dx * dx
            if ln2 == 0:
                d2 = (yy - ya) ** 2 + (xx - xa) ** 2
            else:
                t = np.clip(((yy - ya) * dy + (xx - xa) * dx) / ln2, 0.0, 1.0)
                d2 = (yy - ya - t * dy) ** 2 + (xx - xa - t * dx) ** 2
            cover |= d2 <= r2
        return cover
    raise TaskError(f"unknown shape kind {shape.kind}")


def _background_image(scene: Scene, resolution: int) -> np.ndarray:
    out = np.empty((resolution, resolution, 3), dtype=np.float64)
    if scene.background[0] == "flat":
        out[:, :] = scene.background[1]
    else:
        top = np.asarray(scene.background[1])
        bottom = np.asarray(scene.background[2])
        t = ((np.arange(resolution) + 0.5) / resolution)[:, None]
        out[:, :] = (1 - t)[:, :, None] * top[None, None] + t[:, :, None] * bottom[None, None]
    return out


def _render_at(scene: Scene, resolution: int, skip: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Painter's-algorithm render; returns (rgb, owner) where owner[y, x] is
    the index of the top-most covering shape or -1 for background."""
    yy, xx = _pixel_centers(resolution)
    rgb = _background_image(scene, resolution)
    owner = np.full((resolution, resolution), -1, dtype=np.int64)
    for i, shape in enumerate(scene.shapes):
        if i == skip:
            continue
        cover = _shape_coverage(shape, yy, xx)
        rgb[cover] = shape.color
        owner[cover] = i
    return rgb, owner


def render_scene(scene: Scene, resolution: int, skip: int | None = None) -> Sample:
    """Render the scene at resolution * master_scale, downsample to the base
    resolution, and compute disjoint per-shape visibility masks."""
    master_rgb, _ = _render_at(scene, resolution * scene.master_scale, skip=skip)
    master = Image(master_rgb)
    base = resize(master, resolution, resolution)
    _, owner = _render_at(scene, resolution, skip=skip)
    masks = tuple(Mask(owner == i) for i in range(len(scene.shapes)))
    return Sample(base, masks, master, scene)


def selectable_instances(sample: Sample) -> list[int]:
    """Shapes with a non-empty visible mask (fully occluded ones drop out)."""
    return [i for i, m in enumerate(sample.instance_masks) if not m.is_empty()]


def stick_skeleton_spec(shape: Shape, resolution: int) -> SkeletonSpec:
    if shape.kind != "stick_figure":
        raise TaskError("pose targets require a stick_figure instance")
    joints = shape.params["joints"]
    keypoints = tuple(
        (name, x * resolution, y * resolution, True)
        for name, (y, x) in zip(STICK_JOINTS, joints)
    )
    return SkeletonSpec(keypoints, STICK_BONES)


@dataclass(frozen=True)
class ZoomRegion:
    r0: int
    r1: int
    c0: int
    c1: int  # inclusive pixel bounds at base resolution

    def mask(self, resolution: int) -> Mask:
        m = np.zeros((resolution, resolution), dtype=bool)
        m[self.r0 : self.r1 + 1, self.c0 : self.c1 + 1] = True
        return Mask(m)

    def area_fraction(self, resolution: int) -> float:
        return ((self.r1 - self.r0 + 1) * (self.c1 - self.c0 + 1)) / resolution**2


def sample_zoom_region(resolution: int, rng: np.random.Generator) -> ZoomRegion:
    """Region with area fraction uniform in [0.09, 0.73], aspect in [0.5, 2]."""
    lo, hi = ZOOM_AREA_BOUNDS
    for _ in range(100):
        area = float(rng.uniform(lo, hi))
        aspect = float(rng.uniform(0.5, 2.0))
        hfrac = min(1.0, math.sqrt(area * aspect))
        wfrac = min(1.0, math.sqrt(area / aspect))
        h = max(2, round(hfrac * resolution))
        w = max(2, round(wfrac * resolution))
        frac = (h * w) / resolution**2
        if not (lo <= frac <= hi):
            continue
        r0 = int(rng.integers(0, resolution - h + 1))
        c0 = int(rng.integers(0, resolution - w + 1))
        return ZoomRegion(r0, r0 + h - 1, c0, c0 + w - 1)
    raise TaskError("could not sample a zoom region within the area bounds")


def make_target(
    scene: Scene,
    sample: Sample,
    task: TaskKind,
    instance: int,
    resolution: int,
    zoom_region: ZoomRegion | None = None,
) -> Image:
    """Exact ground-truth output for (task, instance).

    Segmentation targets use the canonical white-on-black coloring; episode
    construction recolors them afterwards.
    """
    if task is TaskKind.SEGMENTATION:
        return render_seg_map(sample.instance_masks[instance], CANONICAL_FG, CANONICAL_BG)
    if task is TaskKind.REMOVAL:
        return render_scene(scene, resolution, skip=instance).input
    if task is TaskKind.POSE:
        spec = stick_skeleton_spec(scene.shapes[instance], resolution)
        return render_skeleton(spec, (resolution, resolution), default_keypoint_radius(resolution))
    if task is TaskKind.ZOOM:
        if zoom_region is None:
            raise TaskError("zoom targets require a region")
        frac = zoom_region.area_fraction(resolution)
        if not (ZOOM_AREA_BOUNDS[0] <= frac <= ZOOM_AREA_BOUNDS[1]):
            raise TaskError(f"zoom region area {frac:.3f} outside {ZOOM_AREA_BOUNDS}")
        ms = scene.master_scale
        crop = sample.master.data[
            zoom_region.r0 * ms : (zoom_region.r1 + 1) * ms,
            zoom_region.c0 * ms : (zoom_region.c1 + 1) * ms,
        ]
        return resize(Image(crop), resolution, resolution)
    raise TaskError(f"unknown task {task}")


def _episode_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def _one_example(
    task: TaskKind,
    cue_kind: CueKind,
    cfg: SceneConfig,
    style: CueStyle,
    rng: np.random.Generator,
    n_neg: int,
) -> tuple[Image, CueImage, Image]:
    """One (input, cue, target) for the task, resampling scenes until the
    task's constraints (selectable instance, pose figure) are satisfied."""
    for _ in range(200):
        scene_seed = int(rng.integers(2**63))
        scene = gen_scene(cfg, scene_seed)
        sample = render_scene(scene, cfg.resolution)
        if task is TaskKind.ZOOM:
            region = sample_zoom_region(cfg.resolution, rng)
            cue = synth_cue(cue_kind, region.mask(cfg.resolution), style,
                            seed=int(rng.integers(2**63)), n_neg=n_neg)
            target = make_target(scene, sample, task, 0, cfg.resolution, zoom_region=region)
            return sample.input, cue, target
        choices = selectable_instances(sample)
        if task is TaskKind.POSE:
            choices = [i for i in choices if scene.shapes[i].kind == "stick_figure"]
        if not choices:
            continue
        instance = choices[int(rng.integers(len(choices)))]
        try:
            cue = synth_cue(cue_kind, sample.instance_masks[instance], style,
                            seed=int(rng.integers(2**63)), n_neg=n_neg)
        except CueError:
            # Some masks admit no valid cue placement (e.g. no room for
            # negative clicks near the canvas edge); sample a fresh scene.
            continue
        target = make_target(scene, sample, task, instance, cfg.resolution)
        return sample.input, cue, target
    raise TaskError(f"could not generate a valid scene for task {task}")


@dataclass(frozen=True)
class LabeledEpisode:
    """An episode plus the evaluation metadata that is not part of the
    sequence itself: the segmentation color pair and the generation seed."""

    episode: Episode
    seed: int
    fg: tuple | None = None  # segmentation episodes only
    bg: tuple | None = None


def build_labeled_episode(
    task: TaskKind,
    cue_kind: CueKind,
    n_ctx: int,
    palette: ColorPalette,
    seed: int,
    scene_cfg: SceneConfig | None = None,
    style: CueStyle | None = None,
    n_neg: int = 2,
    recolor: bool = True,
) -> LabeledEpisode:
    """Sample n_ctx + 1 independent scenes sharing (task, cue_kind) and wrap
    them into an episode. Segmentation episodes get one episode-wide random
    color pair; pass recolor=False to keep the canonical white-on-black maps."""
    if task is TaskKind.ZOOM and cue_kind not in ZOOM_CUE_KINDS:
        raise TaskError("zoom episodes use box or ellipse cues only")
    cfg = scene_cfg or SceneConfig()
    style = style or CueStyle.for_resolution(cfg.resolution)
    rngs = _episode_rngs(seed, n_ctx + 2)
    examples = [_one_example(task, cue_kind, cfg, style, rngs[i], n_neg) for i in range(n_ctx + 1)]
    context = tuple(Triplet(inp, cue, tgt) for inp, cue, tgt in examples[:n_ctx])
    q_in, q_cue, gt = examples[n_ctx]
    ep = Episode(context, q_in, q_cue, gt, task.value, cue_kind)
    fg = bg = None
    if task is TaskKind.SEGMENTATION:
        if recolor:
            recolor_seed = int(rngs[n_ctx + 1].integers(2**63))
            ep, fg, bg = recolor_augment(ep, palette, recolor_seed)
        else:
            fg, bg = CANONICAL_FG, CANONICAL_BG
    return LabeledEpisode(ep, seed, fg, bg)


def build_episode(
    task: TaskKind,
    cue_kind: CueKind,
    n_ctx: int,
    palette: ColorPalette,
    seed: int,
    scene_cfg: SceneConfig | None = None,
    style: CueStyle | None = None,
    n_neg: int = 2,
    recolor: bool = True,
) -> Episode:
    return build_labeled_episode(
        task, cue_kind, n_ctx, palette, seed, scene_cfg, style, n_neg, recolor
    ).episode


def split_seed(base_seed: int, split: str, index: int) -> int:
    """Disjoint deterministic seed ranges per split."""
    offset = {"train": 0, "val": 1_000_000_000, "test": 2_000_000_000}[split]
    return base_seed + offset + index


def generate_corpus(
    directory,
    task: TaskKind,
    cue_kinds: list[CueKind],
    counts: dict[str, int],
    base_seed: int,
    palette: ColorPalette = DEFAULT_PALETTE,
    scene_cfg: SceneConfig | None = None,
    style: CueStyle | None = None,
    n_ctx: int = 3,
) -> Path:
    """Write a corpus directory: one subdirectory per episode plus an index
    CSV listing (episode, split, task, cue_kind, seed)."""
    from .sequence import save_episode

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for split, count in counts.items():
        for i in range(count):
            seed = split_seed(base_seed, split, i)
            kind = cue_kinds[i % len(cue_kinds)]
            labeled = build_labeled_episode(task, kind, n_ctx, palette, seed, scene_cfg, style)
            name = f"{task.value}_{split}_{i:05d}"
            extra = {"seed": seed, "split": split}
            if labeled.fg is not None:
                extra["fg"] = list(labeled.fg)
                extra["bg"] = list(labeled.bg)
            save_episode(labeled.episode, d / name, extra)
            rows.append({"episode": name, "split": split, "task": task.value,
                         "cue_kind": kind.value, "seed": seed})
    with open(d / "index.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["episode", "split", "task", "cue_kind", "seed"])
        writer.writeheader()
        writer.writerows(rows)
    return d
