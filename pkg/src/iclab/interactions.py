"""Interaction cue synthesis, blending, and token-space recoverability.

A cue is an image that is black everywhere except where the user (or a
simulated user) drew; the active mask records exactly those pixels. Five
cue kinds are available for training plus ContourTrace, which is reserved
for unseen-cue evaluation and must never enter a training set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .imaging import RGB, Image, ImagingError, Mask, load_png, save_png


class CueError(ValueError):
    pass


class CueKind(str, Enum):
    BOX = "box"
    ELLIPSE = "ellipse"
    SCRIBBLE = "scribble"
    CLICK = "click"
    POS_NEG_CLICKS = "pos_neg_clicks"
    CONTOUR_TRACE = "contour_trace"  # evaluation-only, never trained


TRAINABLE_CUE_KINDS = (
    CueKind.BOX,
    CueKind.ELLIPSE,
    CueKind.SCRIBBLE,
    CueKind.CLICK,
    CueKind.POS_NEG_CLICKS,
)


def default_line_width(resolution: int) -> int:
    """3 px at 256, scaled proportionally, floored at 1."""
    return max(1, round(3 * resolution / 256))


def default_click_side(resolution: int) -> int:
    """9 px at 256, scaled proportionally, floored at 3."""
    return max(3, round(9 * resolution / 256))


@dataclass(frozen=True)
class CueStyle:
    primary_color: RGB = (1.0, 0.0, 0.0)
    negative_color: RGB = (0.0, 0.0, 1.0)
    line_width: int = 3
    click_side: int = 9
    alpha: float = 0.0

    def __post_init__(self):
        if self.line_width < 1:
            raise CueError("line_width must be >= 1")
        if self.click_side < 1:
            raise CueError("click_side must be >= 1")
        if tuple(self.primary_color) == tuple(self.negative_color):
            raise CueError("primary and negative colors must differ")
        if not (0.0 <= self.alpha <= 1.0):
            raise CueError("alpha must lie in [0, 1]")

    @classmethod
    def for_resolution(cls, resolution: int, **overrides) -> "CueStyle":
        kw = dict(
            line_width=default_line_width(resolution),
            click_side=default_click_side(resolution),
        )
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True)
class CueImage:
    """An interaction rendered as an image plus its kind and active pixels."""

    image: Image
    kind: CueKind
    active: Mask

    def __post_init__(self):
        if self.active.is_empty():
            raise CueError("cue active mask must be non-empty")
        if (self.image.height, self.image.width) != (self.active.height, self.active.width):
            raise CueError("cue image and active mask dimensions differ")
        if self.image.data[~self.active.data].any():
            raise CueError("cue image must be black outside active pixels")


def _from_active(active: np.ndarray, kind: CueKind, color: RGB) -> CueImage:
    img = np.zeros(active.shape + (3,), dtype=np.float64)
    img[active] = color
    return CueImage(Image(img), kind, Mask(active))


def _require_nonempty(mask: Mask) -> None:
    if mask.is_empty():
        raise CueError("mask must contain at least one true pixel")


def mask_bbox(mask: Mask) -> tuple[int, int, int, int]:
    """Tight bounding rectangle (r0, r1, c0, c1), inclusive."""
    rows = np.flatnonzero(mask.data.any(axis=1))
    cols = np.flatnonzero(mask.data.any(axis=0))
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def box_outline_active(
    shape: tuple[int, int], r0: int, r1: int, c0: int, c1: int, width: int
) -> np.ndarray:
    """Rectangle outline band of the given width, aligned just outside the
    rectangle: the frame between the rectangle expanded by `width` and the
    rectangle itself, clipped to the canvas."""
    h, w = shape
    active = np.zeros((h, w), dtype=bool)
    er0, er1 = max(0, r0 - width), min(h - 1, r1 + width)
    ec0, ec1 = max(0, c0 - width), min(w - 1, c1 + width)
    active[er0 : er1 + 1, ec0 : ec1 + 1] = True
    ir0, ir1 = max(0, r0), min(h - 1, r1)
    ic0, ic1 = max(0, c0), min(w - 1, c1)
    active[ir0 : ir1 + 1, ic0 : ic1 + 1] = False
    return active


def synth_box(mask: Mask, style: CueStyle) -> CueImage:
    """Box cue: outline band hugging the tight bounding rectangle of the mask."""
    _require_nonempty(mask)
    r0, r1, c0, c1 = mask_bbox(mask)
    active = box_outline_active((mask.height, mask.width), r0, r1, c0, c1, style.line_width)
    if not active.any():
        # Mask fills the whole canvas: fall back to the border ring.
        active[0, :] = active[-1, :] = active[:, 0] = active[:, -1] = True
    return _from_active(active, CueKind.BOX, style.primary_color)


def ellipse_ring_active(
    shape: tuple[int, int], cy: float, cx: float, a: float, b: float, width: int
) -> np.ndarray:
    """Ellipse ring of the given width, grown outward from semi-axes (a, b).

    The ring centerline sits at (a + width/2, b + width/2), traced
    parametrically and stamped with a square of side `width`, so thin rings
    stay connected and the base ellipse interior stays cue-free.
    """
    h, w = shape
    active = np.zeros((h, w), dtype=bool)
    ca, cb = a + width / 2.0, b + width / 2.0
    # Enough samples that consecutive centerline points are < 1 px apart.
    n = max(64, int(8 * math.pi * max(ca, cb)))
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    ys = np.round(cy + ca * np.sin(t)).astype(int)
    xs = np.round(cx + cb * np.cos(t)).astype(int)
    lo, hi = -((width - 1) // 2), width // 2
    for dy in range(lo, hi + 1):
        for dx in range(lo, hi + 1):
            yy = np.clip(ys + dy, 0, h - 1)
            xx = np.clip(xs + dx, 0, w - 1)
            keep = (ys + dy >= 0) & (ys + dy < h) & (xs + dx >= 0) & (xs + dx < w)
            active[yy[keep], xx[keep]] = True
    return active


def synth_ellipse(mask: Mask, style: CueStyle) -> CueImage:
    """Ellipse cue enclosing the mask: axis-aligned ring centered on the
    bounding box, semi-axes sqrt(2) times the half-extents (floored to 1)."""
    _require_nonempty(mask)
    r0, r1, c0, c1 = mask_bbox(mask)
    cy, cx = (r0 + r1) / 2.0, (c0 + c1) / 2.0
    a = max(1.0, math.sqrt(2.0) * (r1 - r0) / 2.0)
    b = max(1.0, math.sqrt(2.0) * (c1 - c0) / 2.0)
    active = ellipse_ring_active((mask.height, mask.width), cy, cx, a, b, style.line_width)
    return _from_active(active, CueKind.ELLIPSE, style.primary_color)


def ellipse_params(mask: Mask) -> tuple[float, float, float, float]:
    """(cy, cx, a, b) of the enclosing ellipse used by synth_ellipse."""
    r0, r1, c0, c1 = mask_bbox(mask)
    cy, cx = (r0 + r1) / 2.0, (c0 + c1) / 2.0
    a = max(1.0, math.sqrt(2.0) * (r1 - r0) / 2.0)
    b = max(1.0, math.sqrt(2.0) * (c1 - c0) / 2.0)
    return cy, cx, a, b


_ZS_NEIGHBOR_OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def zhang_suen_thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to a 1-pixel skeleton. Deterministic."""
    img = np.pad(mask.astype(np.uint8), 1)

    def neighbors(padded):
        p = [padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
             for dy, dx in _ZS_NEIGHBOR_OFFSETS]
        return p  # P2..P9 clockwise from north

    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            p = neighbors(img)
            core = img[1:-1, 1:-1]
            b = sum(p)  # count of set neighbors
            ring = p + [p[0]]
            a = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.uint8) for i in range(8))
            if step == 0:
                cond = (p[0] * p[2] * p[4] == 0) & (p[2] * p[4] * p[6] == 0)
            else:
                cond = (p[0] * p[2] * p[6] == 0) & (p[0] * p[4] * p[6] == 0)
            remove = (core == 1) & (b >= 2) & (b <= 6) & (a == 1) & cond
            if remove.any():
                core[remove] = 0
                changed = True
    return img[1:-1, 1:-1].astype(bool)


def dilate_square(mask: np.ndarray, width: int) -> np.ndarray:
    """Morphological dilation with a square structuring element of side `width`."""
    if width <= 1:
        return mask.copy()
    out = np.zeros_like(mask)
    h, w = mask.shape
    lo, hi = -((width - 1) // 2), width // 2
    for dy in range(lo, hi + 1):
        for dx in range(lo, hi + 1):
            ys0, ys1 = max(0, dy), min(h, h + dy)
            yd0, yd1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, dx), min(w, w + dx)
            xd0, xd1 = max(0, -dx), min(w, w - dx)
            out[ys0:ys1, xs0:xs1] |= mask[yd0:yd1, xd0:xd1]
    return out


def synth_scribble(mask: Mask, style: CueStyle, seed: int) -> CueImage:
    """Scribble cue: thin the mask to a skeleton, then thicken to line_width.

    The seed is accepted for interface symmetry with the other sampled cue
    synthesizers; thinning itself is deterministic.
    """
    _require_nonempty(mask)
    skel = zhang_suen_thin(mask.data)
    if not skel.any():
        # Tiny masks can thin away entirely; keep the centroid pixel.
        cy, cx = _centroid_pixel(mask)
        skel = np.zeros_like(mask.data)
        skel[cy, cx] = True
    active = dilate_square(skel, style.line_width)
    return _from_active(active, CueKind.SCRIBBLE, style.primary_color)


def _centroid_pixel(mask: Mask) -> tuple[int, int]:
    """Mask centroid rounded to a pixel; snapped to the nearest mask pixel
    (Euclidean, ties row-major) if the rounded centroid misses the mask."""
    ys, xs = np.nonzero(mask.data)
    cy = int(math.floor(ys.mean() + 0.5))
    cx = int(math.floor(xs.mean() + 0.5))
    cy = min(max(cy, 0), mask.height - 1)
    cx = min(max(cx, 0), mask.width - 1)
    if mask.data[cy, cx]:
        return cy, cx
    d2 = (ys - cy) ** 2 + (xs - cx) ** 2
    i = int(d2.argmin())  # argmin takes the first minimum: row-major tie break
    return int(ys[i]), int(xs[i])


def square_active(shape: tuple[int, int], cy: int, cx: int, side: int) -> np.ndarray:
    """Filled square of the given side centered at (cy, cx), clipped."""
    h, w = shape
    lo, hi = -((side - 1) // 2), side // 2
    active = np.zeros((h, w), dtype=bool)
    y0, y1 = max(0, cy + lo), min(h - 1, cy + hi)
    x0, x1 = max(0, cx + lo), min(w - 1, cx + hi)
    if y0 <= y1 and x0 <= x1:
        active[y0 : y1 + 1, x0 : x1 + 1] = True
    return active


def click_center(mask: Mask) -> tuple[int, int]:
    return _centroid_pixel(mask)


def synth_click(mask: Mask, style: CueStyle) -> CueImage:
    """Click cue: filled square at the mask centroid (snapped into the mask)."""
    _require_nonempty(mask)
    cy, cx = _centroid_pixel(mask)
    active = square_active((mask.height, mask.width), cy, cx, style.click_side)
    return _from_active(active, CueKind.CLICK, style.primary_color)


def negative_click_candidates(mask: Mask) -> np.ndarray:
    """Pixels outside the mask but inside the 1.5x-scaled bounding box,
    as an (n, 2) array of (row, col), row-major order."""
    r0, r1, c0, c1 = mask_bbox(mask)
    cy, cx = (r0 + r1) / 2.0, (c0 + c1) / 2.0
    hr, hc = 1.5 * (r1 - r0) / 2.0, 1.5 * (c1 - c0) / 2.0
    # Degenerate extents still need somewhere to sample.
    hr, hc = max(hr, 1.5), max(hc, 1.5)
    rr0, rr1 = max(0, int(math.floor(cy - hr))), min(mask.height - 1, int(math.ceil(cy + hr)))
    cc0, cc1 = max(0, int(math.floor(cx - hc))), min(mask.width - 1, int(math.ceil(cx + hc)))
    box = np.zeros_like(mask.data)
    box[rr0 : rr1 + 1, cc0 : cc1 + 1] = True
    ring = box & ~mask.data
    ys, xs = np.nonzero(ring)
    return np.stack([ys, xs], axis=1)


def synth_pos_neg_clicks(mask: Mask, style: CueStyle, n_neg: int, seed: int) -> CueImage:
    """One positive click on the mask plus n_neg negative clicks sampled
    uniformly (seeded) from the ring around the bounding box, with rejection
    of any overlap with the mask or previously placed clicks."""
    _require_nonempty(mask)
    if n_neg < 1:
        raise CueError("n_neg must be >= 1")
    shape = (mask.height, mask.width)
    cy, cx = _centroid_pixel(mask)
    pos = square_active(shape, cy, cx, style.click_side)
    candidates = negative_click_candidates(mask)
    if len(candidates) == 0:
        raise CueError("no background pixels available in the sampling ring")
    rng = np.random.Generator(np.random.PCG64(seed))
    occupied = pos.copy()
    neg = np.zeros(shape, dtype=bool)
    for _ in range(n_neg):
        placed = False
        for _attempt in range(1000):
            y, x = candidates[int(rng.integers(len(candidates)))]
            sq = square_active(shape, int(y), int(x), style.click_side)
            if not sq.any():
                continue
            if (sq & mask.data).any() or (sq & occupied).any():
                continue
            neg |= sq
            occupied |= sq
            placed = True
            break
        if not placed:
            raise CueError("no valid negative click location after 1000 attempts")
    img = np.zeros(shape + (3,), dtype=np.float64)
    img[pos] = style.primary_color
    img[neg] = style.negative_color
    return CueImage(Image(img), CueKind.POS_NEG_CLICKS, Mask(pos | neg))


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """4-connected boundary: mask pixels with at least one non-mask
    4-neighbor; out-of-canvas neighbors count as non-mask."""
    padded = np.pad(mask, 1, constant_values=False)
    inner = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~inner


def synth_contour(mask: Mask, style: CueStyle) -> CueImage:
    """Contour trace: the mask boundary dilated to line_width. Evaluation-only."""
    _require_nonempty(mask)
    active = dilate_square(boundary_pixels(mask.data), style.line_width)
    return _from_active(active, CueKind.CONTOUR_TRACE, style.primary_color)


def synth_cue(
    kind: CueKind, mask: Mask, style: CueStyle, seed: int = 0, n_neg: int = 2
) -> CueImage:
    """Dispatch to the synthesizer for the given cue kind."""
    if kind is CueKind.BOX:
        return synth_box(mask, style)
    if kind is CueKind.ELLIPSE:
        return synth_ellipse(mask, style)
    if kind is CueKind.SCRIBBLE:
        return synth_scribble(mask, style, seed)
    if kind is CueKind.CLICK:
        return synth_click(mask, style)
    if kind is CueKind.POS_NEG_CLICKS:
        return synth_pos_neg_clicks(mask, style, n_neg, seed)
    if kind is CueKind.CONTOUR_TRACE:
        return synth_contour(mask, style)
    raise CueError(f"unknown cue kind {kind}")


def blend(img: Image, cue: CueImage, alpha: float) -> Image:
    """Blend a cue into an image: untouched where the cue is inactive,
    alpha * image + (1 - alpha) * cue on active pixels."""
    if (img.height, img.width) != (cue.image.height, cue.image.width):
        raise CueError("image and cue dimensions differ")
    if not (0.0 <= alpha <= 1.0):
        raise CueError("alpha must lie in [0, 1]")
    out = img.data.copy()
    m = cue.active.data
    out[m] = alpha * img.data[m] + (1.0 - alpha) * cue.image.data[m]
    return Image(out)


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """Vectorized RGB->HSV, hue in [0, 1)."""
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    mx = img.max(axis=-1)
    mn = img.min(axis=-1)
    delta = mx - mn
    hue = np.zeros_like(mx)
    nz = delta > 0
    rmax = nz & (mx == r)
    gmax = nz & (mx == g) & ~rmax
    bmax = nz & ~rmax & ~gmax
    with np.errstate(invalid="ignore", divide="ignore"):
        hue[rmax] = ((g - b)[rmax] / delta[rmax]) % 6.0
        hue[gmax] = (b - r)[gmax] / delta[gmax] + 2.0
        hue[bmax] = (r - g)[bmax] / delta[bmax] + 4.0
    hue /= 6.0
    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([hue, sat, mx], axis=-1)


def _color_hue(color: RGB) -> float:
    return float(rgb_to_hsv(np.asarray(color, dtype=np.float64)[None, None, :])[0, 0, 0])


def _hue_within(hue: np.ndarray, target: float, tol_deg: float = 10.0) -> np.ndarray:
    d = np.abs(hue - target)
    d = np.minimum(d, 1.0 - d)
    return d <= tol_deg / 360.0


def _enclosed_interior(active: np.ndarray) -> np.ndarray:
    """Non-active pixels not reachable from the crop border (the box hole)."""
    from collections import deque

    h, w = active.shape
    reach = np.zeros((h, w), dtype=bool)
    dq = deque()
    for y in range(h):
        for x in (0, w - 1):
            if not active[y, x] and not reach[y, x]:
                reach[y, x] = True
                dq.append((y, x))
    for x in range(w):
        for y in (0, h - 1):
            if not active[y, x] and not reach[y, x]:
                reach[y, x] = True
                dq.append((y, x))
    while dq:
        y, x = dq.popleft()
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and not active[ny, nx] and not reach[ny, nx]:
                reach[ny, nx] = True
                dq.append((ny, nx))
    return ~active & ~reach


def recover_cue(reconstructed: Image, original: CueImage, style: CueStyle) -> float:
    """IoU between the HSV-recovered cue pixels of a reconstruction and the
    original cue, inside the cue bounding box expanded by 2 px. For box cues
    the enclosed interior is zeroed before classification. A pixel counts as
    cue-colored when its hue is within 10 degrees of the cue hue (primary or
    negative) and both saturation and value are at least 0.39."""
    if (reconstructed.height, reconstructed.width) != (original.image.height, original.image.width):
        raise CueError("image dimensions differ")
    r0, r1, c0, c1 = mask_bbox(original.active)
    r0, c0 = max(0, r0 - 2), max(0, c0 - 2)
    r1 = min(original.image.height - 1, r1 + 2)
    c1 = min(original.image.width - 1, c1 + 2)
    rec = reconstructed.data[r0 : r1 + 1, c0 : c1 + 1].copy()
    act = original.active.data[r0 : r1 + 1, c0 : c1 + 1]
    if original.kind is CueKind.BOX:
        rec[_enclosed_interior(act)] = 0.0
    hsv = rgb_to_hsv(rec)
    hue, sat, val = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    match = _hue_within(hue, _color_hue(style.primary_color))
    match |= _hue_within(hue, _color_hue(style.negative_color))
    recovered = match & (sat >= 0.39) & (val >= 0.39)
    inter = (recovered & act).sum()
    union = (recovered | act).sum()
    return float(inter) / float(union) if union else 1.0


def save_cue(cue: CueImage, png_path, sidecar_path, seed: int | None = None, style: CueStyle | None = None) -> None:
    """PNG plus a JSON sidecar (kind, seed, style)."""
    save_png(cue.image, png_path)
    record = {"kind": cue.kind.value, "seed": seed}
    if style is not None:
        record["style"] = {
            "primary_color": list(style.primary_color),
            "negative_color": list(style.negative_color),
            "line_width": style.line_width,
            "click_side": style.click_side,
            "alpha": style.alpha,
        }
    with open(sidecar_path, "w") as f:
        json.dump(record, f, indent=2)


def load_cue(png_path, sidecar_path) -> CueImage:
    img = load_png(png_path)
    with open(sidecar_path) as f:
        record = json.load(f)
    active = Mask(img.data.any(axis=-1))
    return CueImage(img, CueKind(record["kind"]), active)
