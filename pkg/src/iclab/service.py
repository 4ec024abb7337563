"""HTTP inference service: live interactive sessions where a client supplies
a query scene, draws a cue as stroke primitives, and receives the decoded
prediction plus the blended-input echo.

Strokes are rasterized with the exact primitives the cue synthesizers use, so
server-drawn cues are bit-identical to corpus cues for equivalent geometry.
Predictions are pure functions of (model snapshot, session context, query,
strokes, decode mode).
"""

from __future__ import annotations

import asyncio
import base64
import os
import secrets
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, field_validator
from starlette.concurrency import run_in_threadpool

from .harness import ExperimentConfig, eval_episode
from .imaging import (
    DEFAULT_PALETTE,
    Image,
    Mask,
    image_from_png_bytes,
    line_pixels,
    png_bytes,
)
from .interactions import (
    CueImage,
    CueKind,
    CueStyle,
    blend,
    box_outline_active,
    dilate_square,
    ellipse_ring_active,
    square_active,
)
from .metrics import iou, psnr, ssim
from .model import checkpoint_load, decode_single_pass, decode_token_by_token
from .sequence import Triplet, Vocab
from .tasks import SceneConfig, TaskKind, ZOOM_CUE_KINDS, build_labeled_episode
from .tokenizer import decode as vq_decode
from .tokenizer import encode as vq_encode
from .tokenizer import load_codebook


class ServiceError(Exception):
    def __init__(self, code: str, message: str, status: int = 400, retry_after: int | None = None):
        self.code = code
        self.message = message
        self.status = status
        self.retry_after = retry_after
        super().__init__(message)


# ---------------------------------------------------------------------------
# wire schemas


ColorRole = Literal["primary", "negative"]


class PolylinePrimitive(BaseModel):
    type: Literal["polyline"] = "polyline"
    points: list[tuple[int, int]] = Field(min_length=1)  # (row, col)
    width: int = Field(ge=1, le=31)
    color: ColorRole = "primary"
    freeform: bool = False


class BoxPrimitive(BaseModel):
    type: Literal["box"] = "box"
    corners: tuple[tuple[int, int], tuple[int, int]]
    width: int = Field(ge=1, le=31)
    color: ColorRole = "primary"


class EllipsePrimitive(BaseModel):
    type: Literal["ellipse"] = "ellipse"
    center: tuple[float, float]
    radii: tuple[float, float]  # (semi-axis rows, semi-axis cols)
    width: int = Field(ge=1, le=31)
    color: ColorRole = "primary"

    @field_validator("radii")
    @classmethod
    def _positive(cls, v):
        if v[0] <= 0 or v[1] <= 0:
            raise ValueError("radii must be positive")
        return v


class PointPrimitive(BaseModel):
    type: Literal["point"] = "point"
    center: tuple[int, int]
    side: int = Field(ge=1, le=31)
    color: ColorRole = "primary"


Primitive = PolylinePrimitive | BoxPrimitive | EllipsePrimitive | PointPrimitive


class StrokeSet(BaseModel):
    primitives: list[Primitive] = Field(min_length=1)


class CreateSessionRequest(BaseModel):
    task: TaskKind = TaskKind.SEGMENTATION
    seed: int | None = None
    cue_kind: CueKind | None = None
    context: list[dict] | None = None  # [{input, cue, target}: base64 PNG]


class QueryRef(BaseModel):
    png: str | None = None          # base64 PNG at model resolution
    corpus_index: int | None = None  # seeded test-corpus episode


class PredictRequest(BaseModel):
    query: QueryRef
    strokes: StrokeSet | None = None  # None = no-interaction probe
    mode: Literal["single", "tbt"] = "single"


# ---------------------------------------------------------------------------
# rasterization (shared-primitive contract)


def _clamp_point(p, shape) -> tuple[int, int]:
    return (
        int(min(max(p[0], 0), shape[0] - 1)),
        int(min(max(p[1], 0), shape[1] - 1)),
    )


def rasterize_strokes(
    strokes: StrokeSet, style: CueStyle, canvas: tuple[int, int]
) -> CueImage:
    """Rasterize wire primitives with the cue synthesizers' own geometry
    routines. Kind is the dominant primitive's cue kind; freeform polylines
    map to ContourTrace; mixed-color points map to positive/negative clicks."""
    if not strokes.primitives:
        raise ServiceError("empty_strokes", "stroke set has no primitives")
    h, w = canvas
    image = np.zeros((h, w, 3))
    active = np.zeros((h, w), dtype=bool)
    counts: dict[CueKind, int] = {}
    for prim in strokes.primitives:
        color = style.primary_color if prim.color == "primary" else style.negative_color
        if isinstance(prim, BoxPrimitive):
            (r0, c0), (r1, c1) = (
                _clamp_point(prim.corners[0], canvas),
                _clamp_point(prim.corners[1], canvas),
            )
            a = box_outline_active(canvas, min(r0, r1), max(r0, r1),
                                   min(c0, c1), max(c0, c1), prim.width)
            kind = CueKind.BOX
        elif isinstance(prim, EllipsePrimitive):
            a = ellipse_ring_active(canvas, prim.center[0], prim.center[1],
                                    prim.radii[0], prim.radii[1], prim.width)
            kind = CueKind.ELLIPSE
        elif isinstance(prim, PointPrimitive):
            cy, cx = _clamp_point(prim.center, canvas)
            a = square_active(canvas, cy, cx, prim.side)
            kind = CueKind.POS_NEG_CLICKS if prim.color == "negative" else CueKind.CLICK
        else:  # polyline
            path = np.zeros((h, w), dtype=bool)
            pts = [_clamp_point(p, canvas) for p in prim.points]
            if len(pts) == 1:
                path[pts[0]] = True
            for (y0, x0), (y1, x1) in zip(pts, pts[1:]):
                for y, x in line_pixels(y0, x0, y1, x1):
                    path[y, x] = True
            a = dilate_square(path, prim.width)
            kind = CueKind.CONTOUR_TRACE if prim.freeform else CueKind.SCRIBBLE
        if not a.any():
            raise ServiceError("degenerate_primitive", f"{prim.type} rasterized to nothing")
        image[a] = color
        active |= a
        counts[kind] = counts.get(kind, 0) + 1
    if CueKind.CLICK in counts and CueKind.POS_NEG_CLICKS in counts:
        counts[CueKind.POS_NEG_CLICKS] += counts.pop(CueKind.CLICK)
    dominant = max(counts, key=lambda k: (counts[k], k.value))
    return CueImage(Image(image), dominant, Mask(active))


# ---------------------------------------------------------------------------
# sessions


@dataclass
class Session:
    id: str
    task: TaskKind
    context: tuple[Triplet, ...]
    seed: int
    created_at: float
    style: CueStyle
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)


@dataclass(frozen=True)
class ServiceConfig:
    checkpoint_path: str
    codebook_path: str
    experiment_seed: int = 0
    session_ttl: float = 3600.0
    workers: int = 2
    cors_origins: tuple[str, ...] = ("*",)

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        def pick(key, cast, default):
            if key in overrides and overrides[key] is not None:
                return overrides[key]
            env = os.environ.get("ICLAB_" + key.upper())
            return cast(env) if env is not None else default

        checkpoint = pick("checkpoint_path", str, None)
        codebook = pick("codebook_path", str, None)
        if checkpoint is None or codebook is None:
            raise ServiceError("config", "checkpoint_path and codebook_path are required", 500)
        return cls(
            checkpoint_path=checkpoint,
            codebook_path=codebook,
            experiment_seed=pick("experiment_seed", int, 0),
            session_ttl=pick("session_ttl", float, 3600.0),
            workers=pick("workers", int, 2),
            cors_origins=tuple(pick("cors_origins", lambda s: s.split(","), ("*",))),
        )


class ModelSnapshot:
    """Immutable per-process model + tokenizer pair."""

    def __init__(self, cfg: ServiceConfig):
        self.params, _, _, self.step = checkpoint_load(cfg.checkpoint_path)
        self.codebook = load_codebook(cfg.codebook_path)
        tok = self.codebook.config
        self.resolution = tok.resolution
        self.tokens_per_image = tok.tokens_per_image
        self.grid_shape = (tok.grid_size, tok.grid_size)
        self.vocab = Vocab(tok.codebook_size)
        images = self.params.cfg.context_len // tok.tokens_per_image
        self.n_ctx = (images - 2) // 2
        if (2 * self.n_ctx + 2) * tok.tokens_per_image != self.params.cfg.context_len:
            raise ServiceError("config", "checkpoint context length does not fit the codebook grid", 500)

    def experiment_config(self, seed: int) -> ExperimentConfig:
        return ExperimentConfig(
            seed=seed, out_dir=".", resolution=self.resolution,
            patch_size=self.codebook.config.patch_size,
            codebook_size=self.codebook.config.codebook_size, n_ctx=self.n_ctx,
        )


def _b64_png(img: Image) -> str:
    return base64.b64encode(png_bytes(img)).decode()


def _img_from_b64(data: str, resolution: int) -> Image:
    try:
        img = image_from_png_bytes(base64.b64decode(data))
    except Exception as e:
        raise ServiceError("bad_png", f"could not decode PNG: {e}") from e
    if img.width != resolution or img.height != resolution:
        raise ServiceError(
            "resolution_mismatch",
            f"expected {resolution}x{resolution}, got {img.width}x{img.height}",
        )
    return img


def create_app(cfg: ServiceConfig) -> FastAPI:
    snapshot = ModelSnapshot(cfg)
    sessions: dict[str, Session] = {}
    pool = asyncio.Semaphore(cfg.workers)
    app = FastAPI(title="interactive in-context inference service")
    app.add_middleware(
        CORSMiddleware, allow_origins=list(cfg.cors_origins),
        allow_methods=["*"], allow_headers=["*"],
    )

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        headers = {}
        if exc.retry_after is not None:
            headers["Retry-After"] = str(exc.retry_after)
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message},
            headers=headers,
        )

    def get_session(sid: str) -> Session:
        now = time.monotonic()
        expired = [k for k, s in sessions.items() if now - s.created_at > cfg.session_ttl]
        for k in expired:
            del sessions[k]
        if sid not in sessions:
            raise ServiceError("unknown_session", "session does not exist or expired", 404)
        return sessions[sid]

    @app.get("/api/info")
    async def info():
        return {
            "resolution": snapshot.resolution,
            "n_ctx": snapshot.n_ctx,
            "patch_size": snapshot.codebook.config.patch_size,
            "codebook_size": snapshot.codebook.config.codebook_size,
            "model": {
                "layers": snapshot.params.cfg.layers,
                "heads": snapshot.params.cfg.heads,
                "embed_dim": snapshot.params.cfg.embed_dim,
                "context_len": snapshot.params.cfg.context_len,
                "trained_steps": snapshot.step,
            },
            "tasks": [t.value for t in TaskKind],
            "cue_kinds": [c.value for c in CueKind],
            "style": {
                "primary_color": list(CueStyle().primary_color),
                "negative_color": list(CueStyle().negative_color),
                "line_width": CueStyle().line_width,
                "click_side": CueStyle().click_side,
            },
            "workers": cfg.workers,
        }

    @app.post("/api/sessions", status_code=201)
    async def create_session(req: CreateSessionRequest):
        res = snapshot.resolution
        style = CueStyle(line_width=3, click_side=7)
        if req.context is not None:
            triplets = []
            for item in req.context:
                try:
                    inp = _img_from_b64(item["input"], res)
                    cue_img = _img_from_b64(item["cue"], res)
                    tgt = _img_from_b64(item["target"], res)
                except KeyError as e:
                    raise ServiceError("bad_context", f"context item missing key {e}") from e
                active = Mask(cue_img.data.any(axis=2))
                if not active.data.any():
                    raise ServiceError("bad_context", "context cue image is empty")
                triplets.append(Triplet(inp, CueImage(cue_img, CueKind.BOX, active), tgt))
            if len(triplets) != snapshot.n_ctx:
                raise ServiceError("bad_context", f"need exactly {snapshot.n_ctx} context triplets")
            context = tuple(triplets)
            seed = req.seed if req.seed is not None else -1
        else:
            seed = req.seed if req.seed is not None else secrets.randbelow(2**31)
            cue = req.cue_kind or (CueKind.BOX if req.task is not TaskKind.ZOOM else ZOOM_CUE_KINDS[0])
            if req.task is TaskKind.ZOOM and cue not in ZOOM_CUE_KINDS:
                raise ServiceError("bad_cue", "zoom sessions require box or ellipse context cues")
            le = await run_in_threadpool(
                build_labeled_episode, req.task, cue, snapshot.n_ctx,
                DEFAULT_PALETTE, seed,
                SceneConfig(resolution=res), style, 2, False,
            )
            context = le.episode.context
        sid = secrets.token_urlsafe(16)
        sessions[sid] = Session(
            id=sid, task=req.task, context=context, seed=seed,
            created_at=time.monotonic(), style=style,
        )
        return {
            "id": sid,
            "task": req.task.value,
            "seed": seed,
            "resolution": res,
            "n_ctx": snapshot.n_ctx,
        }

    @app.get("/api/sessions/{sid}/context")
    async def session_context(sid: str):
        s = get_session(sid)
        items = []
        for t in s.context:
            items.append({
                "input": _b64_png(t.input),
                "cue": _b64_png(t.cue.image),
                "target": _b64_png(t.target),
                "blended": _b64_png(blend(t.input, t.cue, 0.0)),
                "cue_kind": t.cue.kind.value,
            })
        return {"id": sid, "context": items}

    @app.delete("/api/sessions/{sid}", status_code=204)
    async def delete_session(sid: str):
        get_session(sid)
        del sessions[sid]
        return None

    def _resolve_query(s: Session, q: QueryRef):
        """Return (query image, ground truth or None)."""
        if (q.png is None) == (q.corpus_index is None):
            raise ServiceError("bad_query", "provide exactly one of png or corpus_index")
        if q.png is not None:
            return _img_from_b64(q.png, snapshot.resolution), None
        ecfg = snapshot.experiment_config(cfg.experiment_seed)
        le = eval_episode(ecfg, s.task, ecfg.cues[0], int(q.corpus_index))
        return le.episode.query_input, (le.episode.ground_truth, le.fg, le.bg)

    def _predict_sync(s: Session, req: PredictRequest):
        query, gt_info = _resolve_query(s, req.query)
        if req.strokes is not None:
            cue = rasterize_strokes(req.strokes, s.style, (snapshot.resolution,) * 2)
            blended = blend(query, cue, 0.0)
            cue_kind = cue.kind.value
        else:
            blended = query
            cue_kind = None
        parts = []
        for t in s.context:
            parts.append(vq_encode(blend(t.input, t.cue, 0.0), snapshot.codebook).flat())
            parts.append(vq_encode(t.target, snapshot.codebook).flat())
        parts.append(vq_encode(blended, snapshot.codebook).flat())
        prefix = np.concatenate(parts)
        decoder = decode_single_pass if req.mode == "single" else decode_token_by_token
        grid = decoder(snapshot.params, prefix, snapshot.tokens_per_image,
                       snapshot.vocab.mask_id, snapshot.grid_shape)
        pred = vq_decode(grid, snapshot.codebook)
        out = {
            "prediction": _b64_png(pred),
            "blended": _b64_png(blended),
            "cue_kind": cue_kind,
            "mode": req.mode,
        }
        if gt_info is not None:
            gt, fg, bg = gt_info
            metrics = {"ssim": ssim(pred, gt), "psnr": psnr(pred, gt)}
            if s.task is TaskKind.SEGMENTATION and fg is not None:
                metrics["iou"] = iou(pred, gt, tuple(fg), tuple(bg))
            out["metrics"] = metrics
        return out

    @app.post("/api/sessions/{sid}/predict")
    async def predict(sid: str, req: PredictRequest):
        s = get_session(sid)
        if pool.locked():
            raise ServiceError("busy", "all inference workers are busy; retry shortly",
                               status=503, retry_after=1)
        async with pool:
            async with s.lock:
                return await run_in_threadpool(_predict_sync, s, req)

    return app


def main(checkpoint=None, codebook=None, host="127.0.0.1", port=8000, **kw):
    import uvicorn

    cfg = ServiceConfig.from_env(checkpoint_path=checkpoint, codebook_path=codebook, **kw)
    uvicorn.run(create_app(cfg), host=host, port=port)
