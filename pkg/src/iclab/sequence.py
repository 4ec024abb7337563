"""Episode-to-sequence assembly, output-token masking, recoloring
augmentation, and token distribution statistics.

An episode's images are encoded separately and concatenated in a fixed
row-major raster order: [blend(in_0), out_0, ..., blend(in_n-1), out_n-1,
blend(q_in)] forms the prefix, the encoded ground truth is the target.
No separator tokens: the vocabulary is the N codebook ids plus a reserved
MASK symbol used only on the teacher-forced side.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .imaging import ColorPalette, Image, render_seg_map, snap_to_palette, save_png, load_png
from .interactions import CueImage, CueKind, blend
from .tokenizer import Codebook, TokenGrid, encode


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class Triplet:
    input: Image
    cue: CueImage
    target: Image

    def __post_init__(self):
        dims = {(x.height, x.width) for x in (self.input, self.cue.image, self.target)}
        if len(dims) != 1:
            raise SequenceError("triplet images must share one resolution")


@dataclass(frozen=True)
class Episode:
    context: tuple[Triplet, ...]
    query_input: Image
    query_cue: CueImage
    ground_truth: Image
    task: str
    cue_kind: CueKind

    def __post_init__(self):
        if len(self.context) < 1:
            raise SequenceError("context must hold at least one triplet")
        for t in self.context:
            if t.cue.kind is not self.cue_kind:
                raise SequenceError("context cue kind differs from episode cue kind")
        if self.query_cue.kind is not self.cue_kind:
            raise SequenceError("query cue kind differs from episode cue kind")


@dataclass(frozen=True)
class Vocab:
    codebook_size: int

    @property
    def mask_id(self) -> int:
        return self.codebook_size

    @property
    def size(self) -> int:
        return self.codebook_size + 1


@dataclass(frozen=True)
class SequencePair:
    prefix: np.ndarray         # (2n+1) * w * h ids
    target: np.ndarray         # w * h ids
    teacher_inputs: np.ndarray  # target shifted right by one, masked

    def __post_init__(self):
        for name in ("prefix", "target", "teacher_inputs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if len(self.teacher_inputs) != len(self.target):
            raise SequenceError("teacher_inputs and target lengths differ")

    @property
    def total_length(self) -> int:
        return len(self.prefix) + len(self.target)


def make_teacher_inputs(
    target: np.ndarray, mask_id: int, mask_ratio: float, seed: int
) -> np.ndarray:
    """Shift the target right by one (MASK at position 0), then replace each
    position independently by MASK with probability mask_ratio (seeded).
    Ratios 0 and 1 are deterministic: pure teacher forcing / all MASK."""
    if not (0.0 <= mask_ratio <= 1.0):
        raise SequenceError("mask_ratio must lie in [0, 1]")
    n = len(target)
    out = np.empty(n, dtype=np.int64)
    out[0] = mask_id
    out[1:] = target[:-1]
    if mask_ratio >= 1.0:
        out[:] = mask_id
    elif mask_ratio > 0.0:
        rng = np.random.Generator(np.random.PCG64(seed))
        out[rng.random(n) < mask_ratio] = mask_id
    return out


def encode_episode_prefix(ep: Episode, cb: Codebook, alpha: float = 0.0) -> np.ndarray:
    """Token prefix: per context triplet the blended input then the target,
    followed by the blended query input. Row-major scan per image."""
    parts = []
    for t in ep.context:
        parts.append(encode(blend(t.input, t.cue, alpha), cb).flat())
        parts.append(encode(t.target, cb).flat())
    parts.append(encode(blend(ep.query_input, ep.query_cue, alpha), cb).flat())
    return np.concatenate(parts)


def assemble(
    ep: Episode, cb: Codebook, mask_ratio: float, seed: int, alpha: float = 0.0
) -> SequencePair:
    """Build the (prefix, target, teacher_inputs) triple for one episode."""
    prefix = encode_episode_prefix(ep, cb, alpha)
    target = encode(ep.ground_truth, cb).flat()
    vocab = Vocab(cb.config.codebook_size)
    teacher = make_teacher_inputs(target, vocab.mask_id, mask_ratio, seed)
    return SequencePair(prefix, target, teacher)


# Recoloring assumes canonical two-color targets: white foreground on black.
CANONICAL_FG = (1.0, 1.0, 1.0)
CANONICAL_BG = (0.0, 0.0, 0.0)


def sample_color_pair(palette: ColorPalette, rng: np.random.Generator):
    """An ordered (fg, bg) pair drawn without replacement from the palette."""
    i, j = rng.choice(len(palette), size=2, replace=False)
    colors = palette.colors()
    return colors[int(i)], colors[int(j)]


def _recolor_two_color(img: Image, old_fg, old_bg, fg, bg) -> Image:
    idx = snap_to_palette(img, [old_fg, old_bg])
    out = np.empty_like(img.data)
    out[idx == 0] = fg
    out[idx == 1] = bg
    return Image(out)


def recolor_augment(
    ep: Episode,
    palette: ColorPalette,
    seed: int,
    current_fg=CANONICAL_FG,
    current_bg=CANONICAL_BG,
):
    """Resample the (fg, bg) colors of a two-color-target episode.

    One ordered pair is drawn (seeded, without replacement) and applied to
    every context target and the ground truth; inputs and cues are untouched
    and the mask geometry is preserved exactly. Returns (episode, fg, bg).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    fg, bg = sample_color_pair(palette, rng)
    ep2 = recolor_episode(ep, fg, bg, current_fg, current_bg)
    return ep2, fg, bg


def recolor_episode(
    ep: Episode, fg, bg, current_fg=CANONICAL_FG, current_bg=CANONICAL_BG
) -> Episode:
    """Apply a specific (fg, bg) pair to all targets of the episode."""
    for t in ep.context:
        _check_two_color(t.target, current_fg, current_bg)
    _check_two_color(ep.ground_truth, current_fg, current_bg)
    new_context = tuple(
        replace(t, target=_recolor_two_color(t.target, current_fg, current_bg, fg, bg))
        for t in ep.context
    )
    new_gt = _recolor_two_color(ep.ground_truth, current_fg, current_bg, fg, bg)
    return replace(ep, context=new_context, ground_truth=new_gt)


def _check_two_color(img: Image, fg, bg) -> None:
    flat = img.data.reshape(-1, 3)
    ok = np.all(flat == np.asarray(fg), axis=1) | np.all(flat == np.asarray(bg), axis=1)
    if not ok.all():
        raise SequenceError("recoloring requires exact two-color targets")


def token_histogram(grids: list[TokenGrid], top_k: int) -> list[tuple[int, int]]:
    """Top-k (id, count) pairs, count descending, ties to the lowest id."""
    if top_k < 1:
        raise SequenceError("top_k must be >= 1")
    if not grids:
        raise SequenceError("need at least one token grid")
    counts: Counter = Counter()
    for g in grids:
        ids, n = np.unique(g.flat(), return_counts=True)
        for i, c in zip(ids, n):
            counts[int(i)] += int(c)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ordered[:top_k]


def save_episode(ep: Episode, directory, manifest_extra: dict | None = None) -> None:
    """Directory of PNGs (context inputs/cues/targets, query, ground truth)
    plus a JSON manifest (task, cue kind, anything the caller adds)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(ep.context):
        save_png(t.input, d / f"ctx{i}_input.png")
        save_png(t.cue.image, d / f"ctx{i}_cue.png")
        save_png(t.target, d / f"ctx{i}_target.png")
    save_png(ep.query_input, d / "query_input.png")
    save_png(ep.query_cue.image, d / "query_cue.png")
    save_png(ep.ground_truth, d / "ground_truth.png")
    manifest = {"task": ep.task, "cue_kind": ep.cue_kind.value, "n_context": len(ep.context)}
    if manifest_extra:
        manifest.update(manifest_extra)
    with open(d / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)


def load_episode(directory) -> Episode:
    d = Path(directory)
    with open(d / "manifest.json") as f:
        manifest = json.load(f)
    kind = CueKind(manifest["cue_kind"])
    context = []
    for i in range(manifest["n_context"]):
        cue_img = load_png(d / f"ctx{i}_cue.png")
        cue = CueImage(cue_img, kind, _active_of(cue_img))
        context.append(Triplet(load_png(d / f"ctx{i}_input.png"), cue, load_png(d / f"ctx{i}_target.png")))
    qcue_img = load_png(d / "query_cue.png")
    qcue = CueImage(qcue_img, kind, _active_of(qcue_img))
    return Episode(
        context=tuple(context),
        query_input=load_png(d / "query_input.png"),
        query_cue=qcue,
        ground_truth=load_png(d / "ground_truth.png"),
        task=manifest["task"],
        cue_kind=kind,
    )


def _active_of(img: Image):
    from .imaging import Mask

    return Mask(img.data.any(axis=-1))


def save_sequence_pair(pair: SequencePair, path) -> None:
    """Flat little-endian int32 dump: prefix length, target length, ids."""
    with open(path, "wb") as f:
        np.asarray([len(pair.prefix), len(pair.target)], dtype="<i4").tofile(f)
        pair.prefix.astype("<i4").tofile(f)
        pair.target.astype("<i4").tofile(f)
        pair.teacher_inputs.astype("<i4").tofile(f)
