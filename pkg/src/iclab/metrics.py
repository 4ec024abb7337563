"""Evaluation measures: palette-snapped IoU, SSIM, PSNR, token accuracy,
token perplexity, and the per-episode report container."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate

from .imaging import RGB, Image, snap_to_palette
from .tokenizer import TokenGrid


class MetricError(ValueError):
    pass


PSNR_CAP_DB = 99.0  # reported value for a zero-MSE comparison


def iou(pred: Image, gt: Image, fg: RGB, bg: RGB) -> float:
    """Intersection over union of the foreground sets after snapping both
    images to the {fg, bg} pair. Returns 1.0 when both foregrounds are empty."""
    if tuple(fg) == tuple(bg):
        raise MetricError("fg and bg must differ")
    if pred.data.shape != gt.data.shape:
        raise MetricError("image dimensions differ")
    palette = [fg, bg]
    p = snap_to_palette(pred, palette) == 0
    g = snap_to_palette(gt, palette) == 0
    union = (p | g).sum()
    if union == 0:
        return 1.0
    return float((p & g).sum()) / float(union)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = size // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: Image, b: Image, window_size: int = 11, sigma: float = 1.5) -> float:
    """Channel-averaged windowed SSIM with an 11x11 Gaussian window
    (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0, mean over the windows
    that fit entirely inside the image."""
    if a.data.shape != b.data.shape:
        raise MetricError("image dimensions differ")
    if a.height < window_size or a.width < window_size:
        raise MetricError(f"images must be at least {window_size}x{window_size}")
    win = _gaussian_window(window_size, sigma)
    k1, k2, dr = 0.01, 0.03, 1.0
    c1, c2 = (k1 * dr) ** 2, (k2 * dr) ** 2
    pad = window_size // 2
    scores = []
    for ch in range(3):
        x = a.data[:, :, ch]
        y = b.data[:, :, ch]
        mu_x = correlate(x, win, mode="constant")
        mu_y = correlate(y, win, mode="constant")
        mu_xx = correlate(x * x, win, mode="constant")
        mu_yy = correlate(y * y, win, mode="constant")
        mu_xy = correlate(x * y, win, mode="constant")
        var_x = mu_xx - mu_x * mu_x
        var_y = mu_yy - mu_y * mu_y
        cov = mu_xy - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        )
        scores.append(s[pad:-pad, pad:-pad].mean())
    return float(np.mean(scores))


def psnr(a: Image, b: Image) -> float:
    """10 * log10(1 / MSE) with peak 1.0; zero MSE reports the 99 dB cap."""
    if a.data.shape != b.data.shape:
        raise MetricError("image dimensions differ")
    mse = float(((a.data - b.data) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def token_accuracy(pred: TokenGrid, gt: TokenGrid) -> float:
    if pred.ids.shape != gt.ids.shape:
        raise MetricError("token grid dimensions differ")
    return float((pred.ids == gt.ids).mean())


def token_perplexity(per_position_nll) -> float:
    """exp of the mean negative log-likelihood over output positions."""
    nll = np.asarray(per_position_nll, dtype=np.float64)
    if nll.size == 0:
        raise MetricError("need at least one NLL value")
    if not np.isfinite(nll).all():
        raise MetricError("non-finite NLL values")
    return float(np.exp(nll.mean()))


@dataclass
class MetricReport:
    """Per-episode metric rows plus recomputable corpus aggregates.

    Each row is a dict with at least: episode, task, cue_kind, method,
    and one key per metric name.
    """

    rows: list[dict] = field(default_factory=list)

    def add(self, *, episode, task: str, cue_kind: str, method: str, **metrics) -> None:
        row = {"episode": episode, "task": task, "cue_kind": cue_kind, "method": method}
        row.update(metrics)
        self.rows.append(row)

    def metric_names(self) -> list[str]:
        reserved = {"episode", "task", "cue_kind", "method"}
        names: list[str] = []
        for row in self.rows:
            for k in row:
                if k not in reserved and k not in names:
                    names.append(k)
        return names

    def aggregate(self) -> list[dict]:
        """Mean/std/count per (task, cue_kind, method, metric)."""
        groups: dict[tuple, dict[str, list[float]]] = {}
        for row in self.rows:
            key = (row["task"], row["cue_kind"], row["method"])
            bucket = groups.setdefault(key, {})
            for name in self.metric_names():
                if name in row and row[name] is not None:
                    bucket.setdefault(name, []).append(float(row[name]))
        out = []
        for (task, cue_kind, method), metrics in sorted(groups.items()):
            for name, vals in sorted(metrics.items()):
                arr = np.asarray(vals)
                out.append({
                    "task": task,
                    "cue_kind": cue_kind,
                    "method": method,
                    "metric": name,
                    "mean": float(arr.mean()),
                    "std": float(arr.std()),
                    "count": int(arr.size),
                })
        return out

    def mean(self, task: str, cue_kind: str, method: str, metric: str) -> float:
        vals = [
            float(r[metric])
            for r in self.rows
            if r["task"] == task and r["cue_kind"] == cue_kind
            and r["method"] == method and r.get(metric) is not None
        ]
        if not vals:
            raise MetricError(f"no rows for ({task}, {cue_kind}, {method}, {metric})")
        return float(np.mean(vals))

    def to_csv(self, path) -> None:
        fields = ["episode", "task", "cue_kind", "method"] + self.metric_names()
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            for row in self.rows:
                out = {k: row.get(k, "") for k in fields}
                for k, v in out.items():
                    if isinstance(v, float):
                        out[k] = f"{v:.10g}"
                writer.writerow(out)

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"aggregates": self.aggregate()}, f, indent=2)
