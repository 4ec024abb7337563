from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from iclab.imaging import Image, Mask
from iclab.interactions import (
    TRAINABLE_CUE_KINDS,
    CueError,
    CueImage,
    CueKind,
    CueStyle,
    blend,
    boundary_pixels,
    box_outline_active,
    default_click_side,
    default_line_width,
    dilate_square,
    ellipse_params,
    load_cue,
    mask_bbox,
    negative_click_candidates,
    recover_cue,
    rgb_to_hsv,
    save_cue,
    synth_box,
    synth_click,
    synth_contour,
    synth_cue,
    synth_ellipse,
    synth_pos_neg_clicks,
    synth_scribble,
    zhang_suen_thin,
)


def random_blob(h: int, w: int, seed: int) -> Mask:
    """A connected random blob grown from a seed pixel by BFS."""
    rng = np.random.default_rng(seed)
    m = np.zeros((h, w), dtype=bool)
    y, x = int(rng.integers(h // 4, 3 * h // 4)), int(rng.integers(w // 4, 3 * w // 4))
    m[y, x] = True
    frontier = [(y, x)]
    target = int(rng.integers(h * w // 16, h * w // 4))
    while frontier and m.sum() < target:
        y, x = frontier.pop(int(rng.integers(len(frontier))))
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and not m[ny, nx] and rng.random() < 0.8:
                m[ny, nx] = True
                frontier.append((ny, nx))
    return Mask(m)


def connected_components(mask: np.ndarray, diagonal: bool = False) -> int:
    seen = np.zeros_like(mask)
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if diagonal:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    n = 0
    for sy, sx in zip(*np.nonzero(mask)):
        if seen[sy, sx]:
            continue
        n += 1
        dq = deque([(sy, sx)])
        seen[sy, sx] = True
        while dq:
            y, x = dq.popleft()
            for dy, dx in steps:
                ny, nx = y + dy, x + dx
                if (
                    0 <= ny < mask.shape[0]
                    and 0 <= nx < mask.shape[1]
                    and mask[ny, nx]
                    and not seen[ny, nx]
                ):
                    seen[ny, nx] = True
                    dq.append((ny, nx))
    return n


STYLE = CueStyle(line_width=3, click_side=9)


class TestDefaults:
    def test_line_width_at_256(self):
        assert default_line_width(256) == 3

    def test_line_width_floor(self):
        assert default_line_width(64) == 1
        assert default_line_width(16) == 1

    def test_click_side_at_256(self):
        assert default_click_side(256) == 9

    def test_click_side_floor(self):
        assert default_click_side(64) == 3
        assert default_click_side(16) == 3

    def test_style_validation(self):
        with pytest.raises(CueError):
            CueStyle(line_width=0)
        with pytest.raises(CueError):
            CueStyle(primary_color=(1, 0, 0), negative_color=(1, 0, 0))
        with pytest.raises(CueError):
            CueStyle(alpha=1.5)


class TestCueImage:
    def test_rejects_color_outside_active(self):
        img = np.zeros((4, 4, 3))
        img[0, 0] = (1, 0, 0)
        active = np.zeros((4, 4), dtype=bool)
        active[1, 1] = True
        with pytest.raises(CueError):
            CueImage(Image(img), CueKind.CLICK, Mask(active))

    def test_rejects_empty_active(self):
        with pytest.raises(CueError):
            CueImage(Image.full(4, 4), CueKind.CLICK, Mask(np.zeros((4, 4), dtype=bool)))


class TestBox:
    def test_single_pixel_hollow_ring(self):
        m = np.zeros((7, 7), dtype=bool)
        m[3, 3] = True
        cue = synth_box(Mask(m), CueStyle(line_width=1, click_side=3))
        expected = np.zeros((7, 7), dtype=bool)
        expected[2:5, 2:5] = True
        expected[3, 3] = False
        assert np.array_equal(cue.active.data, expected)

    def test_full_canvas_border_fallback(self):
        cue = synth_box(Mask(np.ones((8, 8), dtype=bool)), STYLE)
        expected = np.zeros((8, 8), dtype=bool)
        expected[0, :] = expected[-1, :] = expected[:, 0] = expected[:, -1] = True
        assert np.array_equal(cue.active.data, expected)

    def test_band_matches_brute_force(self):
        # Oracle: per-pixel membership test of the outside-aligned frame.
        for seed in range(5):
            m = random_blob(24, 24, seed)
            w = 2
            cue = synth_box(m, CueStyle(line_width=w, click_side=3))
            r0, r1, c0, c1 = mask_bbox(m)
            expected = np.zeros((24, 24), dtype=bool)
            for y in range(24):
                for x in range(24):
                    inside_expanded = (r0 - w <= y <= r1 + w) and (c0 - w <= x <= c1 + w)
                    inside_rect = (r0 <= y <= r1) and (c0 <= x <= c1)
                    expected[y, x] = inside_expanded and not inside_rect
            assert np.array_equal(cue.active.data, expected)

    def test_never_overlaps_bbox(self):
        for seed in range(10):
            m = random_blob(32, 32, 100 + seed)
            cue = synth_box(m, STYLE)
            r0, r1, c0, c1 = mask_bbox(m)
            assert not cue.active.data[r0 : r1 + 1, c0 : c1 + 1].any()

    def test_color_is_primary(self):
        m = np.zeros((9, 9), dtype=bool)
        m[4, 4] = True
        cue = synth_box(Mask(m), STYLE)
        assert np.all(cue.image.data[cue.active.data] == STYLE.primary_color)


class TestEllipse:
    def test_single_pixel_ring_encircles(self):
        m = np.zeros((11, 11), dtype=bool)
        m[5, 5] = True
        cue = synth_ellipse(Mask(m), CueStyle(line_width=1, click_side=3))
        assert not cue.active.data[5, 5]
        assert cue.active.data.any()

    def test_ring_hugs_base_ellipse_from_outside(self):
        # Active pixels stay within the rasterization slack (rounding plus
        # the square stamp) of the base ellipse; none dip deep inside it.
        for seed in range(5):
            m = random_blob(32, 32, 200 + seed)
            w = 2
            cue = synth_ellipse(m, CueStyle(line_width=w, click_side=3))
            cy, cx, a, b = ellipse_params(m)
            slack = w / 2.0 + 1.0
            ys, xs = np.nonzero(cue.active.data)
            dy = np.maximum(np.abs(ys - cy) + slack, 0.0)
            dx = np.maximum(np.abs(xs - cx) + slack, 0.0)
            inside = (dy / a) ** 2 + (dx / b) ** 2 < 1.0 - 1e-9
            assert not inside.any()

    def test_ring_within_one_width_of_base(self):
        for seed in range(5):
            m = random_blob(32, 32, 300 + seed)
            w = 2
            cue = synth_ellipse(m, CueStyle(line_width=w, click_side=3))
            cy, cx, a, b = ellipse_params(m)
            slack = w + 1.5
            ys, xs = np.nonzero(cue.active.data)
            dy = np.maximum(np.abs(ys - cy) - slack, 0.0)
            dx = np.maximum(np.abs(xs - cx) - slack, 0.0)
            outside = (dy / a) ** 2 + (dx / b) ** 2 > 1.0 + 1e-9
            assert not outside.any()

    def test_ring_connected(self):
        m = np.zeros((40, 40), dtype=bool)
        m[15:25, 12:28] = True
        cue = synth_ellipse(Mask(m), CueStyle(line_width=1, click_side=3))
        assert connected_components(cue.active.data, diagonal=True) == 1


class TestScribble:
    def test_thin_line_fixed_point(self):
        m = np.zeros((16, 16), dtype=bool)
        m[8, 2:14] = True
        skel = zhang_suen_thin(m)
        # A 1-px line thins to itself minus (at most) its endpoints.
        assert skel.sum() >= 10
        assert not skel[~m].any()

    def test_scribble_inside_dilated_mask(self):
        for seed in range(5):
            m = random_blob(24, 24, 400 + seed)
            w = 3
            cue = synth_scribble(m, CueStyle(line_width=w, click_side=3), seed=0)
            allowed = dilate_square(m.data, 2 * w + 1)
            assert not (cue.active.data & ~allowed).any()

    def test_skeleton_subset_of_mask(self):
        for seed in range(5):
            m = random_blob(24, 24, 500 + seed)
            skel = zhang_suen_thin(m.data)
            assert not (skel & ~m.data).any()

    def test_connectivity_preserved(self):
        # An L-shaped stroke stays one component after thinning.
        m = np.zeros((20, 20), dtype=bool)
        m[4:16, 4:7] = True
        m[13:16, 4:16] = True
        skel = zhang_suen_thin(m)
        assert connected_components(skel, diagonal=True) == 1

    def test_tiny_mask_falls_back_to_pixel(self):
        m = np.zeros((8, 8), dtype=bool)
        m[3, 3] = m[3, 4] = True
        cue = synth_scribble(Mask(m), CueStyle(line_width=1, click_side=3), seed=0)
        assert cue.active.data.sum() >= 1

    def test_deterministic(self):
        m = random_blob(24, 24, 600)
        a = synth_scribble(m, STYLE, seed=1)
        b = synth_scribble(m, STYLE, seed=2)
        assert np.array_equal(a.active.data, b.active.data)


class TestClick:
    def test_centered_square(self):
        m = np.zeros((16, 16), dtype=bool)
        m[6:10, 6:10] = True
        cue = synth_click(Mask(m), CueStyle(line_width=1, click_side=3))
        expected = np.zeros((16, 16), dtype=bool)
        expected[7:10, 7:10] = True
        assert np.array_equal(cue.active.data, expected)

    def test_annulus_snaps_to_mask(self):
        # Centroid of a ring lies in the hole; the click must land on the ring.
        yy, xx = np.mgrid[0:32, 0:32]
        d2 = (yy - 16) ** 2 + (xx - 16) ** 2
        m = Mask((d2 >= 64) & (d2 <= 144))
        cue = synth_click(m, CueStyle(line_width=1, click_side=1))
        y, x = np.argwhere(cue.active.data)[0]
        assert m.data[y, x]

    def test_click_side_area(self):
        m = np.zeros((64, 64), dtype=bool)
        m[30:34, 30:34] = True
        cue = synth_click(Mask(m), CueStyle(line_width=1, click_side=9))
        assert cue.active.data.sum() == 81


class TestPosNegClicks:
    def test_deterministic(self):
        m = random_blob(48, 48, 700)
        style = CueStyle(line_width=1, click_side=3)
        a = synth_pos_neg_clicks(m, style, n_neg=2, seed=42)
        b = synth_pos_neg_clicks(m, style, n_neg=2, seed=42)
        assert np.array_equal(a.image.data, b.image.data)

    def test_seed_changes_layout(self):
        m = random_blob(48, 48, 701)
        style = CueStyle(line_width=1, click_side=3)
        layouts = {synth_pos_neg_clicks(m, style, 2, s).image.data.tobytes() for s in range(8)}
        assert len(layouts) > 1

    def test_negatives_never_touch_mask(self):
        style = CueStyle(line_width=1, click_side=3)
        for seed in range(10):
            m = random_blob(48, 48, 800 + seed)
            cue = synth_pos_neg_clicks(m, style, n_neg=2, seed=seed)
            neg = np.all(cue.image.data == style.negative_color, axis=-1) & cue.active.data
            assert not (neg & m.data).any()

    def test_has_one_positive_and_n_negatives(self):
        style = CueStyle(line_width=1, click_side=3)
        m = random_blob(48, 48, 900)
        cue = synth_pos_neg_clicks(m, style, n_neg=3, seed=0)
        pos = np.all(cue.image.data == style.primary_color, axis=-1) & cue.active.data
        neg = np.all(cue.image.data == style.negative_color, axis=-1) & cue.active.data
        assert connected_components(pos) == 1
        assert connected_components(neg) == 3

    def test_candidates_uniform_chi_square(self):
        # Sampling positions before rejection is uniform over the candidate
        # ring: bucket many draws by candidate index and chi-square test.
        m = np.zeros((32, 32), dtype=bool)
        m[14:18, 14:18] = True
        mask = Mask(m)
        cands = negative_click_candidates(mask)
        style = CueStyle(line_width=1, click_side=1)
        centers = []
        for seed in range(1500):
            cue = synth_pos_neg_clicks(mask, style, n_neg=1, seed=seed)
            neg = np.all(cue.image.data == style.negative_color, axis=-1)
            y, x = np.argwhere(neg)[0]
            centers.append((int(y), int(x)))
        index = {tuple(c): i for i, c in enumerate(cands)}
        counts = np.zeros(len(cands))
        for c in centers:
            counts[index[c]] += 1
        # 1x1 clicks are never rejected here, so the draw is exactly uniform.
        chi2, p = stats.chisquare(counts)
        assert p > 1e-4

    def test_error_when_no_room(self):
        m = np.ones((8, 8), dtype=bool)
        m[0, 0] = False
        with pytest.raises(CueError):
            synth_pos_neg_clicks(Mask(m), CueStyle(line_width=1, click_side=3), 1, 0)


class TestContour:
    def test_full_canvas_boundary_ring(self):
        m = np.ones((10, 10), dtype=bool)
        b = boundary_pixels(m)
        expected = np.zeros((10, 10), dtype=bool)
        expected[0, :] = expected[-1, :] = expected[:, 0] = expected[:, -1] = True
        assert np.array_equal(b, expected)

    def test_single_pixel(self):
        m = np.zeros((5, 5), dtype=bool)
        m[2, 2] = True
        assert np.array_equal(boundary_pixels(m), m)

    def test_boundary_matches_brute_force(self):
        for seed in range(5):
            m = random_blob(24, 24, 1000 + seed).data
            b = boundary_pixels(m)
            for y in range(24):
                for x in range(24):
                    if not m[y, x]:
                        assert not b[y, x]
                        continue
                    nbr = []
                    for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                        nbr.append(m[ny, nx] if 0 <= ny < 24 and 0 <= nx < 24 else False)
                    assert b[y, x] == (not all(nbr))

    def test_contour_cue_is_dilated_boundary(self):
        m = random_blob(24, 24, 1100)
        cue = synth_contour(m, CueStyle(line_width=3, click_side=3))
        assert np.array_equal(cue.active.data, dilate_square(boundary_pixels(m.data), 3))
        assert cue.kind is CueKind.CONTOUR_TRACE


class TestDispatch:
    def test_all_kinds_dispatch(self):
        m = random_blob(32, 32, 1200)
        style = CueStyle(line_width=2, click_side=3)
        for kind in TRAINABLE_CUE_KINDS + (CueKind.CONTOUR_TRACE,):
            cue = synth_cue(kind, m, style, seed=5)
            assert cue.kind is kind
            assert not cue.active.is_empty()

    def test_contour_not_trainable(self):
        assert CueKind.CONTOUR_TRACE not in TRAINABLE_CUE_KINDS
        assert len(TRAINABLE_CUE_KINDS) == 5


class TestBlend:
    def _cue(self, h=8, w=8):
        active = np.zeros((h, w), dtype=bool)
        active[2:5, 2:5] = True
        img = np.zeros((h, w, 3))
        img[active] = (1, 0, 0)
        return CueImage(Image(img), CueKind.CLICK, Mask(active))

    def test_alpha_zero_replaces(self):
        cue = self._cue()
        base = Image.full(8, 8, (0.2, 0.4, 0.6))
        out = blend(base, cue, 0.0)
        assert np.all(out.data[cue.active.data] == (1, 0, 0))
        assert np.all(out.data[~cue.active.data] == (0.2, 0.4, 0.6))

    def test_alpha_one_identity(self):
        cue = self._cue()
        rng = np.random.default_rng(8)
        base = Image(rng.random((8, 8, 3)))
        out = blend(base, cue, 1.0)
        assert np.array_equal(out.data, base.data)

    def test_alpha_half_average(self):
        cue = self._cue()
        base = Image.full(8, 8, (0.5, 0.5, 0.5))
        out = blend(base, cue, 0.5)
        assert np.allclose(out.data[cue.active.data], (0.75, 0.25, 0.25))

    @given(st.floats(0.0, 1.0))
    @settings(max_examples=25, deadline=None)
    def test_inactive_pixels_untouched(self, alpha):
        cue = self._cue()
        rng = np.random.default_rng(9)
        base = Image(rng.random((8, 8, 3)))
        out = blend(base, cue, alpha)
        inactive = ~cue.active.data
        assert np.array_equal(out.data[inactive], base.data[inactive])

    def test_dimension_mismatch(self):
        with pytest.raises(CueError):
            blend(Image.full(9, 9), self._cue(), 0.0)


class TestHsv:
    def test_primaries(self):
        px = np.asarray([[[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]], [[0.0, 0.0, 1.0]]])
        hsv = rgb_to_hsv(px)
        assert np.allclose(hsv[:, 0, 0], [0.0, 1 / 3, 2 / 3])
        assert np.allclose(hsv[..., 1], 1.0) and np.allclose(hsv[..., 2], 1.0)

    def test_gray_zero_saturation(self):
        hsv = rgb_to_hsv(np.full((2, 2, 3), 0.5))
        assert np.allclose(hsv[..., 1], 0.0)

    def test_matches_colorsys(self):
        import colorsys

        rng = np.random.default_rng(10)
        arr = rng.random((6, 6, 3))
        hsv = rgb_to_hsv(arr)
        for y in range(6):
            for x in range(6):
                h, s, v = colorsys.rgb_to_hsv(*arr[y, x])
                assert np.allclose(hsv[y, x], (h, s, v), atol=1e-12)


class TestRecoverCue:
    def test_perfect_blend_recovers_fully(self):
        style = CueStyle(line_width=2, click_side=5)
        for kind in TRAINABLE_CUE_KINDS + (CueKind.CONTOUR_TRACE,):
            m = random_blob(32, 32, 1300)
            cue = synth_cue(kind, m, style, seed=3)
            base = Image.full(32, 32, (0.0, 0.8, 0.0))
            rec = blend(base, cue, 0.0)
            assert recover_cue(rec, cue, style) == 1.0

    def test_black_reconstruction_recovers_nothing(self):
        style = CueStyle(line_width=2, click_side=5)
        m = random_blob(32, 32, 1400)
        cue = synth_cue(CueKind.BOX, m, style)
        assert recover_cue(Image.full(32, 32), cue, style) == 0.0

    def test_box_interior_red_not_counted(self):
        # A red fill inside the box hole must not inflate recovery.
        style = CueStyle(line_width=2, click_side=5)
        m = np.zeros((32, 32), dtype=bool)
        m[12:20, 12:20] = True
        cue = synth_box(Mask(m), style)
        rec = blend(Image.full(32, 32), cue, 0.0).data.copy()
        rec[13:19, 13:19] = (1.0, 0.0, 0.0)
        score = recover_cue(Image(rec), cue, style)
        assert score == 1.0

    def test_desaturated_pixels_rejected(self):
        style = CueStyle(line_width=2, click_side=5)
        m = random_blob(32, 32, 1500)
        cue = synth_cue(CueKind.SCRIBBLE, m, style)
        washed = Image(cue.image.data * 0.3)  # value drops below threshold
        assert recover_cue(washed, cue, style) == 0.0

    def test_hue_shift_within_tolerance_counts(self):
        import colorsys

        style = CueStyle(line_width=2, click_side=5)
        m = random_blob(32, 32, 1600)
        cue = synth_cue(CueKind.CLICK, m, style)
        shifted_color = colorsys.hsv_to_rgb(8.0 / 360.0, 1.0, 1.0)
        rec = np.zeros((32, 32, 3))
        rec[cue.active.data] = shifted_color
        assert recover_cue(Image(rec), cue, style) == 1.0


class TestCueIO:
    def test_round_trip(self, tmp_path):
        style = CueStyle(line_width=2, click_side=5)
        m = random_blob(32, 32, 1700)
        cue = synth_cue(CueKind.ELLIPSE, m, style, seed=7)
        save_cue(cue, tmp_path / "c.png", tmp_path / "c.json", seed=7, style=style)
        loaded = load_cue(tmp_path / "c.png", tmp_path / "c.json")
        assert loaded.kind is cue.kind
        assert np.array_equal(loaded.active.data, cue.active.data)
        assert np.allclose(loaded.image.data, cue.image.data, atol=0.5 / 255 + 1e-12)
