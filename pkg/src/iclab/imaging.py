"""Core raster types, palettes, and deterministic rendering primitives.

Images are float arrays in [0, 1], shape (height, width, 3), row-major.
Masks are boolean arrays of shape (height, width). All rasterization here
is integer midpoint-style and fully deterministic: no anti-aliasing, no
alpha channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage


class ImagingError(ValueError):
    """Raised for invalid raster inputs (bad shapes, bad colors, ...)."""


RGB = tuple[float, float, float]


@dataclass(frozen=True)
class Image:
    """An RGB raster with channel values in [0, 1]."""

    data: np.ndarray  # (h, w, 3) float64

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ImagingError(f"image data must be (h, w, 3), got {d.shape}")
        if not np.isfinite(d).all():
            raise ImagingError("image contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ImagingError("image channel values must lie in [0, 1]")
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def full(cls, width: int, height: int, color: RGB = (0.0, 0.0, 0.0)) -> "Image":
        d = np.empty((height, width, 3), dtype=np.float64)
        d[:, :] = color
        return cls(d)


@dataclass(frozen=True)
class Mask:
    """A per-pixel boolean selection, same grid as its source image."""

    data: np.ndarray  # (h, w) bool

    def __post_init__(self):
        d = np.asarray(self.data, dtype=bool)
        if d.ndim != 2:
            raise ImagingError(f"mask data must be (h, w), got {d.shape}")
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def is_empty(self) -> bool:
        return not self.data.any()


# The twelve recoloring colors (name, (r, g, b)).
DEFAULT_PALETTE_ENTRIES: tuple[tuple[str, RGB], ...] = (
    ("black", (0.000, 0.000, 0.000)),
    ("white", (1.000, 1.000, 1.000)),
    ("red", (1.000, 0.000, 0.000)),
    ("green", (0.000, 1.000, 0.000)),
    ("blue", (0.000, 0.000, 1.000)),
    ("yellow", (1.000, 1.000, 0.000)),
    ("pink", (0.984, 0.059, 0.750)),
    ("cyan", (0.000, 1.000, 1.000)),
    ("orange", (0.816, 0.523, 0.000)),
    ("brown", (0.586, 0.293, 0.000)),
    ("purple", (0.625, 0.125, 0.938)),
    ("gray", (0.500, 0.500, 0.500)),
)


@dataclass(frozen=True)
class ColorPalette:
    """An ordered list of named, pairwise-distinct RGB triples."""

    entries: tuple[tuple[str, RGB], ...] = DEFAULT_PALETTE_ENTRIES

    def __post_init__(self):
        colors = [c for _, c in self.entries]
        if len(set(colors)) != len(colors):
            raise ImagingError("palette entries must be pairwise distinct")

    def __len__(self) -> int:
        return len(self.entries)

    def colors(self) -> list[RGB]:
        return [c for _, c in self.entries]

    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def color(self, name: str) -> RGB:
        for n, c in self.entries:
            if n == name:
                return c
        raise KeyError(name)

    def save(self, path) -> None:
        """Write as a plain text file: one `name r g b` row per entry."""
        with open(path, "w") as f:
            for name, (r, g, b) in self.entries:
                f.write(f"{name} {r:.6f} {g:.6f} {b:.6f}\n")

    @classmethod
    def load(cls, path) -> "ColorPalette":
        entries = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                name, r, g, b = line.split()
                entries.append((name, (float(r), float(g), float(b))))
        return cls(tuple(entries))


DEFAULT_PALETTE = ColorPalette()


# Keypoint color groups for toy stick figures (subset of the pose color table).
SKELETON_COLORS: dict[str, RGB] = {
    "head": (1.000, 1.000, 0.000),     # head top: yellow
    "neck": (0.984, 0.059, 0.750),     # neck/thorax group: pink
    "pelvis": (0.984, 0.059, 0.750),   # pelvis group: pink
    "right_hand": (1.000, 0.000, 0.000),  # right arm group: red
    "left_hand": (0.000, 0.000, 1.000),   # left arm group: blue
    "right_foot": (0.000, 1.000, 0.000),  # right leg group: green
    "left_foot": (0.000, 1.000, 1.000),   # left leg group: cyan
}


@dataclass(frozen=True)
class SkeletonSpec:
    """A toy figure: keypoints (name, x, y, present) plus bone index pairs.

    Per-keypoint colors default to the body-part color table above.
    """

    keypoints: tuple[tuple[str, float, float, bool], ...]
    bones: tuple[tuple[int, int], ...]
    colors: tuple[RGB, ...] = field(default=())

    def __post_init__(self):
        n = len(self.keypoints)
        for a, b in self.bones:
            if not (0 <= a < n and 0 <= b < n):
                raise ImagingError(f"bone ({a}, {b}) references invalid keypoint")
        if not self.colors:
            object.__setattr__(
                self,
                "colors",
                tuple(SKELETON_COLORS[name] for name, _, _, _ in self.keypoints),
            )
        elif len(self.colors) != n:
            raise ImagingError("colors must match keypoint count")


def default_keypoint_radius(resolution: int) -> int:
    """Pose dot radius: 5 px at 256, scaled proportionally with a floor of 2."""
    return max(2, round(5 * resolution / 256))


def resize(img: Image, w: int, h: int) -> Image:
    """Bilinear resize with half-pixel center alignment.

    Identity when the size is unchanged; constant images stay constant.
    """
    if w < 1 or h < 1:
        raise ImagingError(f"resize target must be >= 1x1, got {w}x{h}")
    if w == img.width and h == img.height:
        return Image(img.data.copy())
    src = img.data
    sh, sw = src.shape[0], src.shape[1]
    # Map destination pixel centers into source coordinates.
    ys = (np.arange(h) + 0.5) * (sh / h) - 0.5
    xs = (np.arange(w) + 0.5) * (sw / w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, sh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return Image(np.clip(out, 0.0, 1.0))


def render_seg_map(mask: Mask, fg: RGB, bg: RGB) -> Image:
    """Two-color map: fg exactly where the mask is true, bg elsewhere."""
    if tuple(fg) == tuple(bg):
        raise ImagingError("foreground and background colors must differ")
    out = np.empty((mask.height, mask.width, 3), dtype=np.float64)
    out[:, :] = bg
    out[mask.data] = fg
    return Image(out)


def snap_to_palette(img: Image, palette: list[RGB]) -> np.ndarray:
    """Map each pixel to the index of the nearest palette color.

    Nearest by Euclidean RGB distance; ties break to the lowest index.
    Returns an (h, w) int array.
    """
    if len(palette) == 0:
        raise ImagingError("palette must be non-empty")
    pal = np.asarray(palette, dtype=np.float64)  # (k, 3)
    diff = img.data[:, :, None, :] - pal[None, None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    return d2.argmin(axis=-1)


def draw_disc(canvas: np.ndarray, cy: int, cx: int, radius: int, color: RGB) -> None:
    """Fill a rasterized disc in place: pixels with center distance <= radius."""
    h, w = canvas.shape[:2]
    y0, y1 = max(0, cy - radius), min(h - 1, cy + radius)
    x0, x1 = max(0, cx - radius), min(w - 1, cx + radius)
    if y0 > y1 or x0 > x1:
        return
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
    canvas[y0 : y1 + 1, x0 : x1 + 1][inside] = color


def disc_pixel_count(radius: int) -> int:
    """Number of pixels the disc rasterizer fills at a given radius."""
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return int(((yy * yy + xx * xx) <= radius * radius).sum())


def line_pixels(y0: int, x0: int, y1: int, x1: int) -> list[tuple[int, int]]:
    """Bresenham midpoint line between two integer points, inclusive."""
    pts = []
    dy, dx = abs(y1 - y0), abs(x1 - x0)
    sy = 1 if y0 < y1 else -1
    sx = 1 if x0 < x1 else -1
    err = dx - dy
    y, x = y0, x0
    while True:
        pts.append((y, x))
        if y == y1 and x == x1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return pts


def draw_line(canvas: np.ndarray, y0: int, x0: int, y1: int, x1: int, width: int, color: RGB) -> None:
    """Draw a line of the given width by stamping discs along the midpoint path."""
    r = max(0, width // 2)
    for y, x in line_pixels(y0, x0, y1, x1):
        if r == 0:
            if 0 <= y < canvas.shape[0] and 0 <= x < canvas.shape[1]:
                canvas[y, x] = color
        else:
            draw_disc(canvas, y, x, r, color)


def render_skeleton(spec: SkeletonSpec, canvas: tuple[int, int], radius: int) -> Image:
    """Render a stick figure on black: colored joint discs plus bone lines.

    Bones with an absent endpoint are skipped. Line width equals the radius
    and takes the color of the bone's first endpoint.
    """
    if radius < 1:
        raise ImagingError("radius must be >= 1")
    w, h = canvas
    out = np.zeros((h, w, 3), dtype=np.float64)
    present = [p for _, _, _, p in spec.keypoints]
    coords = [(int(round(y)), int(round(x))) for _, x, y, _ in spec.keypoints]
    for a, b in spec.bones:
        if not (present[a] and present[b]):
            continue
        (ya, xa), (yb, xb) = coords[a], coords[b]
        draw_line(out, ya, xa, yb, xb, radius, spec.colors[a])
    for i, ((y, x), p) in enumerate(zip(coords, present)):
        if p:
            draw_disc(out, y, x, radius, spec.colors[i])
    return Image(out)


def save_png(img: Image, path) -> None:
    """Write 8-bit PNG; channels quantized by round(v * 255)."""
    q = np.round(img.data * 255.0).astype(np.uint8)
    PILImage.fromarray(q, mode="RGB").save(path, format="PNG")


def load_png(path) -> Image:
    arr = np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64)
    return Image(arr / 255.0)


def png_bytes(img: Image) -> bytes:
    import io

    q = np.round(img.data * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(q, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> Image:
    import io

    arr = np.asarray(PILImage.open(io.BytesIO(data)).convert("RGB"), dtype=np.float64)
    return Image(arr / 255.0)
