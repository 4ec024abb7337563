"""End-to-end acceptance suite.

Verifies the package's top-level guarantees: exact cue blending, geometric
correctness of every synthesized interaction, tokenizer optimality, cue
recoverability and reconstruction-degradation trends, transformer numerics,
the hold-one-interaction-out generalization ordering after the default
training run, ablation orderings, metric oracles, bit-level determinism, and
the HTTP service contract.

The default-scale fixtures (three seeded training runs, the recoverability
sweep, and the ablations) are session-scoped and shared across tests; the
whole suite takes a few hours on a single CPU core.
"""

import base64
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from scipy.spatial.distance import cdist
from scipy.stats import spearmanr
from skimage.metrics import structural_similarity

from iclab.harness import (
    PROBE_COLUMN,
    ExperimentConfig,
    run_ablation_decode_modes,
    run_ablation_masking,
    run_ablation_recolor,
    run_eval,
    run_sweep_recoverability,
    run_training,
)
from iclab.imaging import Image, Mask, image_from_png_bytes, line_pixels, png_bytes
from iclab.interactions import (
    CueKind,
    CueStyle,
    blend,
    boundary_pixels,
    dilate_square,
    ellipse_params,
    mask_bbox,
    synth_box,
    synth_click,
    synth_contour,
    synth_cue,
    synth_ellipse,
    synth_pos_neg_clicks,
    synth_scribble,
)
from iclab.metrics import MetricError, iou, psnr, ssim, token_perplexity
from iclab.model import (
    ModelConfig,
    TrainConfig,
    batch_loss,
    forward,
    init_params,
    make_optimizer,
    train_step,
)
from iclab.sequence import SequencePair
from iclab.service import (
    BoxPrimitive,
    EllipsePrimitive,
    PointPrimitive,
    PolylinePrimitive,
    ServiceConfig,
    StrokeSet,
    create_app,
    rasterize_strokes,
)
from iclab.tasks import SceneConfig, TaskKind, gen_scene, render_scene
from iclab.tokenizer import (
    TokenizerConfig,
    decode,
    encode,
    extract_patches,
    train_codebook,
)

from conftest import tiny_config

SEG = TaskKind.SEGMENTATION.value


# ---------------------------------------------------------------------------
# shared helpers


def random_blob(h: int, w: int, seed: int, margin: int = 0) -> Mask:
    """A connected random blob; with margin > 0, clipped away from borders."""
    rng = np.random.default_rng(seed)
    m = np.zeros((h, w), dtype=bool)
    y, x = int(rng.integers(h // 4, 3 * h // 4)), int(rng.integers(w // 4, 3 * w // 4))
    m[y, x] = True
    frontier = [(y, x)]
    target = int(rng.integers(h * w // 16, h * w // 4))
    while frontier and m.sum() < target:
        y, x = frontier.pop(int(rng.integers(len(frontier))))
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if (
                margin <= ny < h - margin
                and margin <= nx < w - margin
                and not m[ny, nx]
                and rng.random() < 0.8
            ):
                m[ny, nx] = True
                frontier.append((ny, nx))
    return Mask(m)


def scene_image(seed: int, resolution: int = 64) -> Image:
    cfg = SceneConfig(resolution=resolution)
    return render_scene(gen_scene(cfg, seed), resolution).input


# ---------------------------------------------------------------------------
# default-scale fixtures (shared by the expensive criteria)


@pytest.fixture(scope="session")
def default_runs(tmp_path_factory):
    """The default experiment trained and evaluated over three seeds."""
    out = []
    for seed in (0, 1, 2):
        d = tmp_path_factory.mktemp(f"default_seed{seed}")
        cfg = ExperimentConfig(seed=seed, out_dir=str(d))
        art = run_training(cfg)
        report = run_eval(cfg, art.checkpoint_path, art.codebook_path)
        out.append((cfg, art, report))
    return out


@pytest.fixture(scope="session")
def sweep_results(tmp_path_factory):
    """Width sweep against the width-spanning reference codebook."""
    d = tmp_path_factory.mktemp("sweep")
    cfg = ExperimentConfig(seed=0, out_dir=str(d))
    t0 = time.monotonic()
    results = run_sweep_recoverability(cfg, out_dir=d)
    return results, time.monotonic() - t0


def column_mean(report, cue: str, method: str, metric: str = "iou") -> float:
    return report.mean(SEG, cue, method, metric)


# ---------------------------------------------------------------------------
# 1. cue blending


class TestBlending:
    def test_blend_identities(self):
        t0 = time.monotonic()
        style = CueStyle(line_width=3, click_side=7)
        rng = np.random.default_rng(0)
        for i in range(10):
            img = scene_image(i)
            mask = random_blob(64, 64, 100 + i, margin=6)
            cue = synth_cue(CueKind.BOX, mask, style, seed=i)
            act = cue.active.data

            # alpha = 1: bit-exact identity
            out1 = blend(img, cue, 1.0)
            assert np.array_equal(out1.data, img.data)

            # alpha = 0: active pixels overwritten exactly, others untouched
            out0 = blend(img, cue, 0.0)
            assert np.array_equal(out0.data[act], cue.image.data[act])
            assert np.array_equal(out0.data[~act], img.data[~act])

            # arbitrary alpha: linear interpolation on active pixels
            a = float(rng.uniform(0.05, 0.95))
            outa = blend(img, cue, a)
            want = a * img.data[act] + (1 - a) * cue.image.data[act]
            assert np.abs(outa.data[act] - want).max() < 1e-12
            assert np.array_equal(outa.data[~act], img.data[~act])
        assert time.monotonic() - t0 < 1.0


# ---------------------------------------------------------------------------
# 2. cue synthesis geometry


class TestCueGeometry:
    N_MASKS = 100

    def masks(self):
        return [random_blob(64, 64, 1000 + i, margin=8) for i in range(self.N_MASKS)]

    def test_geometric_oracles(self):
        t0 = time.monotonic()
        style = CueStyle(line_width=3, click_side=5)
        w = style.line_width
        yy, xx = np.mgrid[0:64, 0:64]
        for mask in self.masks():
            m = mask.data
            r0, r1, c0, c1 = mask_bbox(mask)

            # box: the active set is exactly the outside-aligned frame
            box = synth_box(mask, style)
            in_expanded = (
                (yy >= r0 - w) & (yy <= r1 + w) & (xx >= c0 - w) & (xx <= c1 + w)
            )
            in_rect = (yy >= r0) & (yy <= r1) & (xx >= c0) & (xx <= c1)
            assert np.array_equal(box.active.data, in_expanded & ~in_rect)
            assert not (box.active.data & m).any()

            # ellipse: ring encircles the mask without dipping inside the
            # fitted base ellipse (up to rasterization slack)
            ell = synth_ellipse(mask, style)
            cy, cx, a, b = ellipse_params(mask)
            ys, xs = np.nonzero(ell.active.data)
            slack_in = w / 2.0 + 1.0
            dy = np.abs(ys - cy) + slack_in
            dx = np.abs(xs - cx) + slack_in
            assert not ((dy / a) ** 2 + (dx / b) ** 2 < 1.0 - 1e-9).any()
            slack_out = w + 1.5
            dy = np.maximum(np.abs(ys - cy) - slack_out, 0.0)
            dx = np.maximum(np.abs(xs - cx) - slack_out, 0.0)
            assert not ((dy / a) ** 2 + (dx / b) ** 2 > 1.0 + 1e-9).any()

            # scribble: dilated skeleton stays within the dilated mask
            scr = synth_scribble(mask, style, seed=0)
            allowed = dilate_square(m, 2 * w + 1)
            assert not (scr.active.data & ~allowed).any()

            # click: one filled square whose center pixel lies on the mask
            clk = synth_click(mask, style)
            ys, xs = np.nonzero(clk.active.data)
            assert len(ys) == style.click_side**2
            assert m[(ys.min() + ys.max()) // 2, (xs.min() + xs.max()) // 2]

            # pos/neg clicks: negative squares never touch the mask
            pnc = synth_pos_neg_clicks(mask, style, n_neg=2, seed=0)
            neg = (
                np.all(pnc.image.data == style.negative_color, axis=-1)
                & pnc.active.data
            )
            assert neg.any()
            assert not (neg & m).any()

            # contour: exhaustive 4-neighborhood boundary, dilated to width
            bound = boundary_pixels(m)
            shifted = [
                np.pad(m, ((1, 0), (0, 0)))[:-1],
                np.pad(m, ((0, 1), (0, 0)))[1:],
                np.pad(m, ((0, 0), (1, 0)))[:, :-1],
                np.pad(m, ((0, 0), (0, 1)))[:, 1:],
            ]
            interior = m & shifted[0] & shifted[1] & shifted[2] & shifted[3]
            assert np.array_equal(bound, m & ~interior)
            con = synth_contour(mask, style)
            assert np.array_equal(con.active.data, dilate_square(bound, w))
        assert time.monotonic() - t0 < 30.0


# ---------------------------------------------------------------------------
# 3. tokenizer optimality


class TestTokenizer:
    def test_quantization_vs_brute_force(self):
        t0 = time.monotonic()
        tc = TokenizerConfig(resolution=64, patch_size=8, codebook_size=64)
        train = [scene_image(2000 + i) for i in range(20)]
        log: list[float] = []
        cb = train_codebook(train, tc, seed=0, objective_log=log)

        # k-means objective is monotonically non-increasing
        assert all(b <= a + 1e-9 for a, b in zip(log, log[1:]))

        for i in range(50):
            img = scene_image(3000 + i)
            grid = encode(img, cb)
            patches = extract_patches(img, tc.patch_size)
            d = cdist(patches, cb.vectors, "sqeuclidean")
            # optimal assignment up to exact distance ties
            brute = np.argmin(d, axis=1)
            got = d[np.arange(len(patches)), grid.flat()]
            best = d[np.arange(len(patches)), brute]
            assert np.allclose(got, best, atol=1e-12)

            # decode(encode(x)) is a fixed point of encode
            again = encode(decode(grid, cb), cb)
            assert np.array_equal(again.ids, grid.ids)
        assert time.monotonic() - t0 < 60.0


# ---------------------------------------------------------------------------
# 4 + 5. recoverability and degradation trends


class TestRecoverabilitySweep:
    def test_runtime(self, sweep_results):
        _, elapsed = sweep_results
        # covers both the width sweep and the degradation table
        assert elapsed < 600.0

    def test_recoverability_monotone_and_chosen_widths(self, sweep_results):
        results, _ = sweep_results
        by_kind: dict[str, list[tuple[int, float]]] = {}
        for kind, width, mean in results["sweep"]:
            by_kind.setdefault(kind, []).append((width, mean))
        assert len(by_kind) == 6
        for kind, rows in by_kind.items():
            rows.sort()
            widths = [w for w, _ in rows]
            means = [m for _, m in rows]
            rho = spearmanr(widths, means).statistic
            assert rho >= 0.9, f"{kind}: rho={rho:.3f} over {rows}"
        for kind, chosen in results["chosen_widths"].items():
            assert chosen is not None, f"{kind}: no width reaches 0.5 recover IoU"

    def test_degradation_bounds(self, sweep_results):
        results, _ = sweep_results
        rows = {k: (s, p) for k, s, p in results["degradation"]}
        assert set(rows) == {
            "no_cue", "box", "ellipse", "scribble", "contour_trace",
            "click", "pos_neg_clicks",
        }
        base_ssim, base_psnr = rows["no_cue"]
        for kind, (s, p) in rows.items():
            if kind == "no_cue":
                continue
            assert base_psnr - p <= 3.0, f"{kind}: psnr drop {base_psnr - p:.2f} dB"
            assert s <= base_ssim + 1e-9, f"{kind}: ssim {s} above no-cue {base_ssim}"


# ---------------------------------------------------------------------------
# 6. model numerics


class TestModelNumerics:
    MICRO = ModelConfig(vocab=11, layers=2, heads=2, embed_dim=16, context_len=32)

    @staticmethod
    def pair(seed=0, lp=12, lt=4, vocab=11):
        rng = np.random.default_rng(seed)
        return SequencePair(
            rng.integers(0, vocab - 1, lp),
            rng.integers(0, vocab - 1, lt),
            np.full(lt, vocab - 1),
        )

    def test_numerics(self):
        t0 = time.monotonic()

        # finite-difference gradient check (float64 micro-config)
        cfg = ModelConfig(vocab=7, layers=1, heads=1, embed_dim=8, context_len=16)
        m = init_params(cfg, 11).double()
        pair = self.pair(5, lp=6, lt=2, vocab=7)
        batch_loss(m, [pair]).backward()
        rng = np.random.default_rng(0)
        for name, p in m.named_parameters():
            if p.grad is None:
                continue
            flat = p.detach().reshape(-1)
            gflat = p.grad.reshape(-1)
            for _ in range(2):
                i = int(rng.integers(len(flat)))
                eps, orig = 1e-6, float(flat[i])
                with torch.no_grad():
                    flat[i] = orig + eps
                    up = float(batch_loss(m, [pair]))
                    flat[i] = orig - eps
                    down = float(batch_loss(m, [pair]))
                    flat[i] = orig
                fd = (up - down) / (2 * eps)
                an = float(gflat[i])
                denom = max(abs(fd), abs(an), 1e-8)
                assert abs(fd - an) / denom < 1e-4, f"{name}[{i}]"

        # causal masking: perturbing position 8 leaves logits [0, 8) bitwise
        m = init_params(self.MICRO, 4)
        ids = np.random.default_rng(1).integers(0, 11, 12)
        base = forward(m, ids).detach().numpy()
        ids2 = ids.copy()
        ids2[8] = (ids2[8] + 1) % 11
        pert = forward(m, ids2).detach().numpy()
        assert np.array_equal(base[:8], pert[:8])
        assert not np.array_equal(base[8:], pert[8:])

        # softmax rows normalize to 1 within 1e-6
        probs = torch.softmax(forward(m, np.arange(8) % 11), dim=-1)
        assert torch.allclose(probs.sum(-1), torch.ones(8), atol=1e-6)

        # freshly initialized loss sits within 5% of ln(vocab)
        val = float(batch_loss(init_params(self.MICRO, 7), [self.pair(1)]).detach())
        assert abs(val - math.log(11)) < 0.05 * math.log(11)

        # a single batch is memorized to < 0.1 ln(vocab) within 500 steps
        tcfg = TrainConfig(steps=500, seed=0, batch_size=2, base_lr=3e-3, min_lr=3e-4)
        m = init_params(self.MICRO, 12)
        opt = make_optimizer(m, tcfg)
        batch = [self.pair(6), self.pair(7)]
        final = math.inf
        for s in range(tcfg.steps):
            final = train_step(m, opt, batch, tcfg, s)
            if final < 0.1 * math.log(11):
                break
        assert final < 0.1 * math.log(11)
        assert time.monotonic() - t0 < 300.0


# ---------------------------------------------------------------------------
# 7. hold-one-interaction-out generalization ordering


class TestGeneralizationOrdering:
    def stats(self, default_runs):
        seen, hold, floor, probe, contour = [], [], [], [], []
        for cfg, _, report in default_runs:
            seen.append(
                float(np.mean([
                    column_mean(report, c.value, "model_single") for c in cfg.cues
                ]))
            )
            hold.append(column_mean(report, cfg.holdout.value, "model_single"))
            cols = [c.value for c in cfg.eval_cues]
            floor.append(
                float(np.mean([column_mean(report, c, "copy_target") for c in cols]))
            )
            probe.append(column_mean(report, PROBE_COLUMN, "model_probe"))
            contour.append(
                column_mean(report, CueKind.CONTOUR_TRACE.value, "model_single")
            )
        return tuple(float(np.mean(v)) for v in (seen, hold, floor, probe, contour))

    def test_seen_beats_holdout_beats_floor(self, default_runs):
        seen, hold, floor, _, _ = self.stats(default_runs)
        assert seen > hold > floor
        assert seen - hold >= 0.10, f"seen={seen:.3f} holdout={hold:.3f}"
        assert hold - floor >= 0.10, f"holdout={hold:.3f} floor={floor:.3f}"

    def test_probe_sits_at_the_floor(self, default_runs):
        _, _, floor, probe, _ = self.stats(default_runs)
        assert abs(probe - floor) <= 0.05, f"probe={probe:.3f} floor={floor:.3f}"

    def test_contour_trace_transfers(self, default_runs):
        _, _, floor, _, contour = self.stats(default_runs)
        assert contour >= floor + 0.10, f"contour={contour:.3f} floor={floor:.3f}"


# ---------------------------------------------------------------------------
# 8. ablation orderings


@pytest.fixture(scope="session")
def ablation_cfg(default_runs, tmp_path_factory):
    cfg, _, _ = default_runs[0]
    return replace(cfg, out_dir=str(tmp_path_factory.mktemp("ablations")))


class TestAblations:
    def test_masking_ratio_ordering(self, ablation_cfg):
        rows = run_ablation_masking(ablation_cfg)
        by_ratio: dict[float, list[float]] = {}
        for r in rows:
            by_ratio.setdefault(r["mask_ratio"], []).append(r["token_accuracy"])
        means = {k: float(np.mean(v)) for k, v in by_ratio.items()}
        stds = {k: float(np.std(v)) for k, v in by_ratio.items()}
        for lo, hi in ((0.0, 0.5), (0.5, 1.0)):
            tol = max(stds[lo], stds[hi])
            assert means[hi] >= means[lo] - tol, (
                f"mask {hi} acc {means[hi]:.3f} < mask {lo} acc {means[lo]:.3f}"
                f" beyond std {tol:.3f}"
            )

    def test_recoloring_controls_color_adherence(self, ablation_cfg):
        results = run_ablation_recolor(ablation_cfg)
        assert results["recolored"] >= 0.70, results
        assert results["fixed"] <= results["recolored"] - 0.25, results

    def test_decode_modes_near_parity(self, default_runs):
        cfg, art, _ = default_runs[0]
        result = run_ablation_decode_modes(
            replace(cfg, n_eval_tbt=8), art.checkpoint_path, art.codebook_path
        )
        assert result["abs_delta"] <= 0.05, result


# ---------------------------------------------------------------------------
# 9. metric oracles


class TestMetricOracles:
    def test_metric_closed_forms_and_second_implementations(self):
        t0 = time.monotonic()
        fg, bg = (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)

        # IoU of two rectangles with a known overlap: 4x4 over 4x8+4x8-4x4
        a = np.zeros((16, 16, 3))
        b = np.zeros((16, 16, 3))
        a[4:8, 0:8] = 1.0
        b[4:8, 4:12] = 1.0
        assert iou(Image(a), Image(b), fg, bg) == pytest.approx(16 / 48, abs=1e-12)

        # SSIM against scikit-image on random and structured pairs
        rng = np.random.default_rng(4)
        x = Image(rng.random((32, 32, 3)))
        y = Image(np.clip(x.data + rng.normal(0, 0.1, x.data.shape), 0, 1))
        ref = np.mean([
            structural_similarity(
                x.data[:, :, c], y.data[:, :, c], gaussian_weights=True,
                sigma=1.5, use_sample_covariance=False, data_range=1.0,
                win_size=11,
            )
            for c in range(3)
        ])
        assert ssim(x, y) == pytest.approx(float(ref), abs=1e-6)
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)

        # PSNR closed form: constant offset d gives -20 log10(d)
        base = Image(np.full((16, 16, 3), 0.5))
        off = Image(np.full((16, 16, 3), 0.6))
        assert psnr(base, off) == pytest.approx(-20 * math.log10(0.1), abs=1e-9)

        # perplexity closed form: constant nll c gives exp(c)
        assert token_perplexity(np.full(10, 1.7)) == pytest.approx(
            math.exp(1.7), rel=1e-12
        )
        assert time.monotonic() - t0 < 60.0

    def test_vq_oracle_tops_every_eval_table(self, default_runs):
        for cfg, _, report in default_runs:
            methods = {r["method"] for r in report.rows}
            for cue in [c.value for c in cfg.eval_cues]:
                vq = column_mean(report, cue, "vq_oracle")
                for m in methods - {"vq_oracle", "model_probe"}:
                    try:
                        other = column_mean(report, cue, m)
                    except MetricError:
                        continue
                    assert vq >= other - 1e-9, f"{cue}: {m}={other:.3f} > vq={vq:.3f}"


# ---------------------------------------------------------------------------
# 10. determinism


class TestDeterminism:
    def test_full_pipeline_rerun_is_byte_identical(self, tmp_path):
        def one(d: Path) -> dict[str, bytes]:
            cfg = tiny_config(str(d), sweep_scenes=4)
            art = run_training(cfg)
            run_eval(cfg, art.checkpoint_path, art.codebook_path)
            run_sweep_recoverability(cfg, art.codebook_path)
            names = [
                "train_log.csv", "codebook_objective.csv", "audit.json",
                "eval/report.csv", "eval/table_segmentation.csv",
                "sweep/recoverability.csv", "sweep/chosen_widths.json",
                "sweep/degradation.csv", "sweep/token_change_heatmaps.csv",
            ]
            return {n: (d / n).read_bytes() for n in names}

        a = one(tmp_path / "a")
        b = one(tmp_path / "b")
        assert set(a) == set(b)
        for name in a:
            assert a[name] == b[name], f"{name} differs between reruns"


# ---------------------------------------------------------------------------
# 11. service contract


@pytest.fixture(scope="session")
def service_client(default_runs):
    cfg, art, _ = default_runs[0]
    scfg = ServiceConfig(
        checkpoint_path=str(art.checkpoint_path),
        codebook_path=str(art.codebook_path),
        experiment_seed=cfg.seed,
    )
    with TestClient(create_app(scfg)) as c:
        yield c, cfg


class TestService:
    STYLE = CueStyle(line_width=3, click_side=7)

    def test_rasterization_bit_identical_on_50_fixtures(self):
        rng = np.random.default_rng(7)
        checked = 0
        i = 0
        while checked < 50:
            mask = random_blob(64, 64, 9000 + i, margin=10)
            i += 1
            which = checked % 4
            if which == 0:
                r0, r1, c0, c1 = mask_bbox(mask)
                prim = BoxPrimitive(corners=((r0, c0), (r1, c1)), width=3)
                ref = synth_box(mask, self.STYLE)
            elif which == 1:
                cy, cx, a, b = ellipse_params(mask)
                prim = EllipsePrimitive(center=(cy, cx), radii=(a, b), width=3)
                ref = synth_ellipse(mask, self.STYLE)
            elif which == 2:
                ref = synth_click(mask, self.STYLE)
                ys, xs = np.nonzero(ref.active.data)
                if len(ys) != self.STYLE.click_side**2:
                    continue  # border-clipped square: center is ambiguous
                prim = PointPrimitive(
                    center=(int((ys.min() + ys.max()) // 2),
                            int((xs.min() + xs.max()) // 2)),
                    side=self.STYLE.click_side,
                )
            else:
                pts = [
                    (int(rng.integers(64)), int(rng.integers(64))) for _ in range(4)
                ]
                prim = PolylinePrimitive(points=pts, width=3)
                path = np.zeros((64, 64), dtype=bool)
                for p, q in zip(pts, pts[1:]):
                    for y, x in line_pixels(*p, *q):
                        path[y, x] = True
                ref = None
                expected = dilate_square(path, 3)
            cue = rasterize_strokes(
                StrokeSet(primitives=[prim]), self.STYLE, (64, 64)
            )
            if ref is not None:
                assert np.array_equal(cue.active.data, ref.active.data), checked
                assert np.array_equal(cue.image.data, ref.image.data), checked
            else:
                assert np.array_equal(cue.active.data, expected), checked
            checked += 1

    @staticmethod
    def _session(client):
        r = client.post("/api/sessions", json={"task": "segmentation", "seed": 11})
        assert r.status_code == 201, r.text
        return r.json()["id"]

    BOX_STROKES = {
        "primitives": [{"type": "box", "corners": [[10, 10], [40, 44]], "width": 3}]
    }

    def test_predict_deterministic(self, service_client):
        client, _ = service_client
        sid = self._session(client)
        req = {"query": {"corpus_index": 0}, "strokes": self.BOX_STROKES,
               "mode": "single"}
        a = client.post(f"/api/sessions/{sid}/predict", json=req).json()
        b = client.post(f"/api/sessions/{sid}/predict", json=req).json()
        assert a["prediction"] == b["prediction"]
        assert a["blended"] == b["blended"]

    def test_client_preview_matches_echo_to_quantization(self, service_client):
        from iclab.harness import eval_episode

        client, cfg = service_client
        sid = self._session(client)
        r = client.post(f"/api/sessions/{sid}/predict", json={
            "query": {"corpus_index": 2}, "strokes": self.BOX_STROKES,
            "mode": "single",
        })
        assert r.status_code == 200, r.text
        echo = image_from_png_bytes(base64.b64decode(r.json()["blended"]))
        le = eval_episode(cfg, TaskKind.SEGMENTATION, cfg.cues[0], 2)
        cue = rasterize_strokes(
            StrokeSet.model_validate(self.BOX_STROKES), self.STYLE, (64, 64)
        )
        expected = blend(le.episode.query_input, cue, 0.0)
        assert np.abs(echo.data - expected.data).max() <= 0.5 / 255 + 1e-9

    def test_round_trip_under_two_seconds(self, service_client):
        client, _ = service_client
        sid = self._session(client)
        body = {"query": {"corpus_index": 1}, "strokes": self.BOX_STROKES,
                "mode": "single"}
        client.post(f"/api/sessions/{sid}/predict", json=body)  # warm-up
        t0 = time.monotonic()
        r = client.post(f"/api/sessions/{sid}/predict", json=body)
        elapsed = time.monotonic() - t0
        assert r.status_code == 200
        assert elapsed < 2.0, f"predict round trip took {elapsed:.2f}s"
