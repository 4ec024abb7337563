"""From-scratch vector-quantized patch tokenizer.

Images are cut into non-overlapping square patches; a codebook of patch
vectors is learned with seeded k-means (k-means++ init, Lloyd iterations)
and encoding assigns every patch its nearest codebook row. This is a
deliberately simple, CPU-trainable stand-in for a learned autoencoder
tokenizer: it keeps the contract (discrete token grid over an N-entry
codebook, lossy reconstruction) without any neural machinery.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .imaging import Image, save_png


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerConfig:
    patch_size: int = 8
    codebook_size: int = 512
    resolution: int = 64

    def __post_init__(self):
        if self.resolution % self.patch_size != 0:
            raise TokenizerError("resolution must be divisible by patch_size")
        if self.codebook_size < 2:
            raise TokenizerError("codebook_size must be >= 2")

    @property
    def grid_size(self) -> int:
        return self.resolution // self.patch_size

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def tokens_per_image(self) -> int:
        return self.grid_size * self.grid_size


@dataclass(frozen=True)
class Codebook:
    vectors: np.ndarray  # (N, patch_dim) float64 in [0, 1]
    config: TokenizerConfig
    training_seed: int

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.shape != (self.config.codebook_size, self.config.patch_dim):
            raise TokenizerError(
                f"codebook shape {v.shape} does not match config "
                f"({self.config.codebook_size}, {self.config.patch_dim})"
            )
        if not np.isfinite(v).all():
            raise TokenizerError("codebook contains non-finite values")
        object.__setattr__(self, "vectors", v)


@dataclass(frozen=True)
class TokenGrid:
    ids: np.ndarray  # (h, w) int, row-major

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 2:
            raise TokenizerError("token grid must be 2-D")
        object.__setattr__(self, "ids", ids)

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    def flat(self) -> np.ndarray:
        return self.ids.reshape(-1)


def extract_patches(img: Image, patch_size: int) -> np.ndarray:
    """Non-overlapping patches as (n_patches, patch_dim), row-major grid order."""
    h, w = img.height, img.width
    if h % patch_size or w % patch_size:
        raise TokenizerError("image dimensions must be divisible by patch_size")
    gh, gw = h // patch_size, w // patch_size
    d = img.data.reshape(gh, patch_size, gw, patch_size, 3)
    return d.transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch_size * patch_size * 3)


def _pairwise_sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (len(x), len(c)), computed in chunks."""
    out = np.empty((x.shape[0], c.shape[0]), dtype=np.float64)
    c2 = (c * c).sum(axis=1)
    chunk = max(1, 2_000_000 // max(1, c.shape[0]))
    for i in range(0, x.shape[0], chunk):
        xi = x[i : i + chunk]
        out[i : i + chunk] = (xi * xi).sum(axis=1)[:, None] - 2.0 * xi @ c.T + c2[None, :]
    np.maximum(out, 0.0, out=out)
    return out


def _kmeans_pp_init(patches: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = patches.shape[0]
    centers = np.empty((k, patches.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = patches[first]
    d2 = ((patches - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = patches[int(rng.integers(n))]
        else:
            probs = d2 / total
            idx = int(rng.choice(n, p=probs))
            centers[j] = patches[idx]
        d2 = np.minimum(d2, ((patches - centers[j]) ** 2).sum(axis=1))
    return centers


def train_codebook(
    images: list[Image],
    config: TokenizerConfig,
    seed: int,
    max_iters: int = 100,
    tol: float = 1e-5,
    objective_log: list | None = None,
) -> Codebook:
    """Seeded k-means over all non-overlapping patches of the corpus.

    Empty clusters are re-seeded to the patch farthest from its assigned
    centroid. Stops when the max centroid shift drops below `tol` or after
    `max_iters` Lloyd iterations. Pass `objective_log` to record the k-means
    objective after each assignment step (it is non-increasing).
    """
    if not images:
        raise TokenizerError("need at least one training image")
    patches = np.concatenate([extract_patches(img, config.patch_size) for img in images])
    k = config.codebook_size
    if len(np.unique(patches, axis=0)) < k:
        raise TokenizerError(
            f"need at least {k} distinct patches, got {len(np.unique(patches, axis=0))}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    centers = _kmeans_pp_init(patches, k, rng)
    for _ in range(max_iters):
        d2 = _pairwise_sq_dists(patches, centers)
        labels = d2.argmin(axis=1)
        mind2 = d2[np.arange(len(patches)), labels]
        if objective_log is not None:
            objective_log.append(float(mind2.sum()))
        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, patches)
        nonempty = counts > 0
        new_centers[nonempty] = sums[nonempty] / counts[nonempty][:, None]
        # Re-seed empty clusters to the farthest patches (distinct picks).
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            order = np.argsort(-mind2, kind="stable")
            for j, pi in zip(empty, order[: len(empty)]):
                new_centers[j] = patches[pi]
        shift = np.abs(new_centers - centers).max()
        centers = new_centers
        if shift < tol:
            break
    return Codebook(np.clip(centers, 0.0, 1.0), config, seed)


def encode(img: Image, cb: Codebook) -> TokenGrid:
    """Assign every patch its nearest codebook row (ties: lowest id)."""
    if img.height != cb.config.resolution or img.width != cb.config.resolution:
        raise TokenizerError(
            f"image is {img.width}x{img.height}, codebook expects "
            f"{cb.config.resolution}x{cb.config.resolution}"
        )
    patches = extract_patches(img, cb.config.patch_size)
    d2 = _pairwise_sq_dists(patches, cb.vectors)
    ids = d2.argmin(axis=1)
    g = cb.config.grid_size
    return TokenGrid(ids.reshape(g, g))


def decode(grid: TokenGrid, cb: Codebook) -> Image:
    """Replace every cell with its codebook patch and reassemble."""
    g, p = cb.config.grid_size, cb.config.patch_size
    if grid.ids.shape != (g, g):
        raise TokenizerError(f"grid shape {grid.ids.shape} does not match config ({g}, {g})")
    if grid.ids.min() < 0 or grid.ids.max() >= cb.config.codebook_size:
        raise TokenizerError("token id out of codebook range")
    tiles = cb.vectors[grid.ids.reshape(-1)].reshape(g, g, p, p, 3)
    return Image(tiles.transpose(0, 2, 1, 3, 4).reshape(g * p, g * p, 3))


def recon_metrics(img: Image, cb: Codebook) -> tuple[float, float]:
    """(SSIM, PSNR) of the encode/decode round trip against the input."""
    from .metrics import psnr, ssim

    rec = decode(encode(img, cb), cb)
    return ssim(img, rec), psnr(img, rec)


def token_change_map(img: Image, cue, cb: Codebook) -> np.ndarray:
    """Boolean grid: cells whose token flips when the cue is blended in."""
    from .interactions import blend

    base = encode(img, cb)
    cued = encode(blend(img, cue, 0.0), cb)
    return base.ids != cued.ids


_CODEBOOK_MAGIC = b"ICLCB\x00\x01\x00"


def save_codebook(cb: Codebook, path) -> None:
    """Versioned binary: magic, config ints, seed, little-endian f32 rows."""
    with open(path, "wb") as f:
        f.write(_CODEBOOK_MAGIC)
        f.write(struct.pack("<iiiq", cb.config.patch_size, cb.config.codebook_size,
                            cb.config.resolution, cb.training_seed))
        f.write(cb.vectors.astype("<f4").tobytes())


def load_codebook(path) -> Codebook:
    with open(path, "rb") as f:
        magic = f.read(len(_CODEBOOK_MAGIC))
        if magic != _CODEBOOK_MAGIC:
            raise TokenizerError("not a codebook file (bad magic)")
        patch_size, n, resolution, seed = struct.unpack("<iiiq", f.read(20))
        config = TokenizerConfig(patch_size=patch_size, codebook_size=n, resolution=resolution)
        data = np.frombuffer(f.read(4 * n * config.patch_dim), dtype="<f4")
        if data.size != n * config.patch_dim:
            raise TokenizerError("truncated codebook file")
    return Codebook(data.astype(np.float64).reshape(n, config.patch_dim), config, seed)


def export_codebook_atlas(cb: Codebook, path, columns: int = 32) -> None:
    """PNG atlas of all codebook patches for eyeballing."""
    p = cb.config.patch_size
    n = cb.config.codebook_size
    rows = (n + columns - 1) // columns
    atlas = np.zeros((rows * p, columns * p, 3), dtype=np.float64)
    for i in range(n):
        r, c = divmod(i, columns)
        atlas[r * p : (r + 1) * p, c * p : (c + 1) * p] = cb.vectors[i].reshape(p, p, 3)
    save_png(Image(np.clip(atlas, 0.0, 1.0)), path)
