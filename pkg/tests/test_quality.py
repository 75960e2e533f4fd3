import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.random import default_rng

import oracles
import synth
from viris.geometry import BinaryMask, Ellipse, rasterize_ellipse
from viris.quality import (
    DEFAULT_THRESHOLDS,
    METRIC_ORDER,
    QualityThresholds,
    assess,
    grayscale_utilization,
    iris_pupil_concentricity,
    iris_pupil_contrast,
    iris_pupil_ratio,
    iris_sclera_contrast,
    iso_sharpness,
    margin_adequacy,
    overall_quality,
    pupil_circularity,
    usable_iris_area,
)
from viris.raster import Raster
from viris.segment import SegmentationResult, SegSource


def make_seg(iris, pupil, w, h):
    return SegmentationResult(
        iris_mask=rasterize_ellipse(iris, w, h),
        pupil_mask=rasterize_ellipse(pupil, w, h),
        iris=iris,
        pupil=pupil,
        source=SegSource.EXTERNAL_MASK,
    )


def disk_seg(w=256, h=256, cx=128.0, cy=128.0, r_iris=100.0, r_pupil=40.0):
    return make_seg(
        Ellipse(cx, cy, r_iris, r_iris, 0), Ellipse(cx, cy, r_pupil, r_pupil, 0), w, h
    )


@pytest.fixture(scope="module")
def texture_pattern():
    # low orders survive heavy blur, keeping entropy clear of its
    # threshold in the blurred-eye construction
    return synth.random_pattern(default_rng(21), order_range=(3, 40), rms=0.05)


@pytest.fixture(scope="module")
def clean_eye(texture_pattern):
    return synth.render_eye(texture_pattern, noise_rng=default_rng(7))


class TestGrayscaleUtilization:
    def test_constant_region(self):
        gray = Raster(np.full((256, 256), 0.5))
        assert grayscale_utilization(gray, disk_seg()) == 0.0

    def test_uniform_histogram(self):
        rows = (np.arange(256) / 255.0)[:, None] * np.ones((1, 256))
        gray = Raster(rows)
        seg = disk_seg(r_iris=200.0, r_pupil=80.0)  # bbox clips to the full frame
        assert abs(grayscale_utilization(gray, seg) - 8.0) < 1e-12

    def test_two_levels(self):
        rows = (np.arange(256) % 2).astype(float)[:, None] * np.ones((1, 256))
        assert abs(grayscale_utilization(Raster(rows), disk_seg(r_iris=200.0)) - 1.0) < 1e-12

    def test_matches_entropy_reference(self):
        data = default_rng(0).uniform(0, 1, (64, 64))
        seg = disk_seg(64, 64, 31.5, 31.5, 25.0, 10.0)
        got = grayscale_utilization(Raster(data), seg)
        want = oracles.entropy_reference(data[6:58, 6:58])
        assert abs(got - want) < 1e-9

    def test_region_outside_image(self):
        gray = Raster(np.zeros((64, 64)))
        seg = make_seg(
            Ellipse(-200, -200, 20, 20, 0), Ellipse(-200, -200, 8, 8, 0), 64, 64
        )
        with pytest.raises(ValueError):
            grayscale_utilization(gray, seg)


class TestConcentricity:
    def test_identical_centres(self):
        gray = Raster(np.zeros((256, 256)))
        assert iris_pupil_concentricity(gray, disk_seg()) == 100.0

    def test_offset_five(self):
        gray = Raster(np.zeros((256, 256)))
        seg = make_seg(
            Ellipse(128, 128, 100, 100, 0), Ellipse(133, 128, 40, 40, 0), 256, 256
        )
        assert abs(iris_pupil_concentricity(gray, seg) - 95.0) < 1e-9

    def test_offset_beyond_radius(self):
        gray = Raster(np.zeros((400, 400)))
        seg = make_seg(
            Ellipse(100, 100, 100, 100, 0), Ellipse(210, 100, 20, 20, 0), 400, 400
        )
        assert iris_pupil_concentricity(gray, seg) == 0.0

    @given(st.floats(-30, 30), st.floats(-30, 30))
    @settings(max_examples=30, deadline=None)
    def test_translation_invariant(self, dx, dy):
        gray = Raster(np.zeros((256, 256)))
        a = make_seg(Ellipse(128, 128, 80, 80, 0), Ellipse(131, 126, 30, 30, 0), 256, 256)
        b = make_seg(
            Ellipse(128 + dx, 128 + dy, 80, 80, 0),
            Ellipse(131 + dx, 126 + dy, 30, 30, 0),
            256,
            256,
        )
        assert abs(
            iris_pupil_concentricity(gray, a) - iris_pupil_concentricity(gray, b)
        ) < 1e-9


def two_level_image(inner, outer, r=42.0, w=256, h=256):
    ys, xs = np.mgrid[0:h, 0:w]
    d = np.hypot(xs - 128, ys - 128)
    return Raster(np.where(d <= r, inner, outer).astype(float))


class TestIrisPupilContrast:
    def test_synthetic_disks(self):
        score = iris_pupil_contrast(two_level_image(0.2, 0.6), disk_seg())
        assert abs(score - 49.8) < 0.5

    def test_equal_medians(self):
        assert iris_pupil_contrast(Raster(np.full((256, 256), 0.4)), disk_seg()) == 0.0

    def test_brighter_pupil_clamped(self):
        assert iris_pupil_contrast(two_level_image(0.7, 0.2), disk_seg()) == 0.0

    def test_degenerate_bands(self):
        seg = disk_seg(r_iris=100.0, r_pupil=95.0)
        with pytest.raises(ValueError):
            iris_pupil_contrast(two_level_image(0.2, 0.6), seg)

    @given(st.floats(0.2, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_gain_tracks_weber_form(self, k):
        # gain cancels up to the epsilon in the denominator
        img = two_level_image(0.2 * k, 0.6 * k)
        expected = 100.0 * (0.4 * k) / (0.8 * k + 1.0 / 255.0)
        assert abs(iris_pupil_contrast(img, disk_seg()) - expected) < 0.5
        base = iris_pupil_contrast(two_level_image(0.2, 0.6), disk_seg())
        assert abs(iris_pupil_contrast(img, disk_seg()) - base) < 5.0


class TestIrisPupilRatio:
    def test_thirty_percent(self):
        gray = Raster(np.zeros((256, 256)))
        assert iris_pupil_ratio(gray, disk_seg(r_pupil=30.0)) == 30.0

    def test_equal_radii_capped(self):
        gray = Raster(np.zeros((300, 300)))
        seg = make_seg(
            Ellipse(150, 150, 100, 100, 0), Ellipse(150, 150, 100, 100, 0), 300, 300
        )
        assert iris_pupil_ratio(gray, seg) == 100.0

    def test_fifteen_fails_band(self, clean_eye):
        gray = Raster(np.zeros((256, 256)))
        seg = disk_seg(r_pupil=15.0)
        assert iris_pupil_ratio(gray, seg) == 15.0
        rep = assess(two_level_image(0.2, 0.6, r=16.0), seg)
        assert not rep.metrics["iris_pupil_ratio"].passed

    @given(st.floats(0.5, 3.0))
    @settings(max_examples=30, deadline=None)
    def test_scale_invariant(self, k):
        gray = Raster(np.zeros((2000, 2000)))
        a = make_seg(
            Ellipse(1000, 1000, 100, 100, 0), Ellipse(1000, 1000, 35, 35, 0), 2000, 2000
        )
        b = make_seg(
            Ellipse(1000, 1000, 100 * k, 100 * k, 0),
            Ellipse(1000, 1000, 35 * k, 35 * k, 0),
            2000,
            2000,
        )
        assert abs(iris_pupil_ratio(gray, a) - iris_pupil_ratio(gray, b)) < 1e-9


def sclera_image(iris_val, sclera_val, w=300, h=300, r=82.0):
    ys, xs = np.mgrid[0:h, 0:w]
    d = np.hypot(xs - 150, ys - 150)
    return Raster(np.where(d <= r, iris_val, sclera_val).astype(float))


def sclera_seg(cx=150.0, w=300, h=300):
    return make_seg(Ellipse(cx, 150, 80, 80, 0), Ellipse(cx, 150, 36, 36, 0), w, h)


class TestIrisScleraContrast:
    def test_synthetic_eye(self):
        score = iris_sclera_contrast(sclera_image(0.45, 0.9), sclera_seg())
        assert 32.5 < score < 34.0

    def test_equal_medians(self):
        assert iris_sclera_contrast(Raster(np.full((300, 300), 0.5)), sclera_seg()) == 0.0

    def test_dark_sclera_clamped(self):
        assert iris_sclera_contrast(sclera_image(0.6, 0.2), sclera_seg()) == 0.0

    def test_annulus_exits_image(self):
        with pytest.raises(ValueError, match="annulus"):
            iris_sclera_contrast(sclera_image(0.45, 0.9), sclera_seg(cx=90.0))


class TestMarginAdequacy:
    def test_centred_with_room(self):
        gray = Raster(np.zeros((800, 800)))
        seg = make_seg(
            Ellipse(400, 400, 100, 100, 0), Ellipse(400, 400, 40, 40, 0), 800, 800
        )
        assert margin_adequacy(gray, seg) == 100.0

    def test_tangent_to_edge(self):
        gray = Raster(np.zeros((800, 800)))
        seg = make_seg(
            Ellipse(100, 400, 100, 100, 0), Ellipse(100, 400, 40, 40, 0), 800, 800
        )
        assert margin_adequacy(gray, seg) == 0.0

    def test_half_required_margin(self):
        gray = Raster(np.zeros((800, 2000)))
        seg = make_seg(
            Ellipse(130, 400, 100, 100, 0), Ellipse(130, 400, 40, 40, 0), 2000, 800
        )
        assert abs(margin_adequacy(gray, seg) - 50.0) < 1e-9


class TestPupilCircularity:
    def test_rasterized_circle(self):
        gray = Raster(np.zeros((128, 128)))
        seg = make_seg(Ellipse(64, 64, 60, 60, 0), Ellipse(64, 64, 40, 40, 0), 128, 128)
        assert pupil_circularity(gray, seg) >= 98.0

    def test_ellipse_matches_oracle(self):
        gray = Raster(np.zeros((160, 160)))
        seg = make_seg(
            Ellipse(80, 80, 70, 70, 0), Ellipse(80, 80, 48, 40, 0.4), 160, 160
        )
        got = pupil_circularity(gray, seg)
        want = oracles.circularity_reference(48, 40, 0.4)
        assert abs(got - want) <= 1.0

    def test_star_below_circle(self):
        ys, xs = np.mgrid[0:160, 0:160]
        theta = np.arctan2(ys - 80.0, xs - 80.0)
        rr = np.hypot(xs - 80.0, ys - 80.0)
        star_bits = rr <= 40.0 + 4.0 * np.cos(5.0 * theta)
        gray = Raster(np.zeros((160, 160)))
        star_seg = SegmentationResult(
            iris_mask=rasterize_ellipse(Ellipse(80, 80, 70, 70, 0), 160, 160),
            pupil_mask=BinaryMask(star_bits),
            iris=Ellipse(80, 80, 70, 70, 0),
            pupil=Ellipse(80, 80, 42, 42, 0),
            source=SegSource.EXTERNAL_MASK,
        )
        circle_seg = make_seg(
            Ellipse(80, 80, 70, 70, 0), Ellipse(80, 80, 40, 40, 0), 160, 160
        )
        assert pupil_circularity(gray, star_seg) < pupil_circularity(gray, circle_seg)

    def test_too_few_points(self):
        gray = Raster(np.zeros((64, 64)))
        seg = make_seg(Ellipse(32, 32, 20, 20, 0), Ellipse(32, 32, 2, 2, 0), 64, 64)
        with pytest.raises(ValueError):
            pupil_circularity(gray, seg)


class TestIsoSharpness:
    def test_constant(self):
        assert iso_sharpness(Raster(np.full((32, 32), 0.3))) == 0.0

    def test_knee_calibration(self):
        assert abs(100.0 * 70.0**2 / (70.0**2 + 35.0**2) - 80.0) < 1e-12
        a = 70.0 / 1020.0  # stripes +/-a give raw S of ~70 on the 8-bit scale
        cols = np.where(np.arange(512) % 2 == 0, 0.5 - a, 0.5 + a)
        img = Raster(np.tile(cols[None, :], (16, 1)))
        assert abs(iso_sharpness(img) - 80.0) < 0.5

    def test_saturates_high(self):
        cols = (np.arange(512) % 2).astype(float)
        img = Raster(np.tile(cols[None, :], (16, 1)))
        assert iso_sharpness(img) > 99.0


class TestUsableIrisArea:
    def seg64(self):
        return make_seg(
            Ellipse(31.5, 31.5, 20, 20, 0), Ellipse(31.5, 31.5, 9, 9, 0), 64, 64
        )

    def test_no_occlusion(self):
        assert usable_iris_area(self.seg64(), None) == 100.0

    def test_top_half(self):
        occ = np.zeros((64, 64), dtype=bool)
        occ[:32] = True
        assert usable_iris_area(self.seg64(), BinaryMask(occ)) == 50.0

    def test_occlusion_inside_pupil_only(self):
        seg = self.seg64()
        assert usable_iris_area(seg, seg.pupil_mask) == 100.0

    def test_empty_annulus(self):
        seg = make_seg(
            Ellipse(31.5, 31.5, 20, 20, 0), Ellipse(31.5, 31.5, 20, 20, 0), 64, 64
        )
        with pytest.raises(ValueError):
            usable_iris_area(seg, None)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_pixel_counting(self, seed):
        rng = default_rng(seed)
        cx, cy = rng.uniform(20, 44, 2)
        ri = rng.uniform(10, 18)
        rp = rng.uniform(3, ri - 4)
        seg = make_seg(Ellipse(cx, cy, ri, ri, 0), Ellipse(cx, cy, rp, rp, 0), 64, 64)
        occ = BinaryMask(rng.random((64, 64)) < 0.3)
        got = usable_iris_area(seg, occ)
        want = oracles.usable_counts(seg.iris_mask.bits, seg.pupil_mask.bits, occ.bits)
        assert got == want


def full_scores(**overrides):
    base = {
        "grayscale_utilization": 8.0,
        "iris_pupil_concentricity": 100.0,
        "iris_pupil_contrast": 100.0,
        "iris_pupil_ratio": 45.0,
        "iris_sclera_contrast": 100.0,
        "margin_adequacy": 100.0,
        "pupil_circularity": 100.0,
        "sharpness": 100.0,
        "usable_iris_area": 100.0,
    }
    base.update(overrides)
    return base


class TestOverallQuality:
    def test_all_perfect(self):
        assert overall_quality(full_scores()) == 100.0

    def test_min_rule(self):
        assert overall_quality(full_scores(sharpness=40.0)) == 40.0

    def test_ratio_band_edge(self):
        assert overall_quality(full_scores(iris_pupil_ratio=20.0)) == 0.0

    def test_missing_component(self):
        scores = full_scores()
        del scores["sharpness"]
        with pytest.raises(ValueError):
            overall_quality(scores)

    @given(st.floats(0, 100), st.floats(0, 100))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_subscores(self, lo, hi):
        lo, hi = min(lo, hi), max(lo, hi)
        worse = overall_quality(full_scores(sharpness=lo))
        better = overall_quality(full_scores(sharpness=hi))
        assert better >= worse


class TestThresholds:
    def test_defaults_match_published_table(self):
        t = DEFAULT_THRESHOLDS
        assert t.overall == 70
        assert t.grayscale_utilization == 6
        assert t.iris_pupil_concentricity == 90
        assert t.iris_pupil_contrast == 30
        assert t.iris_pupil_ratio == (20, 70)
        assert t.iris_sclera_contrast == 5
        assert t.margin_adequacy == 80
        assert t.pupil_circularity == 70
        assert t.sharpness == 80
        assert t.usable_iris_area == 70

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            QualityThresholds(overall=150)
        with pytest.raises(ValueError):
            QualityThresholds(iris_pupil_ratio=(70, 20))


class TestAssess:
    def test_compliant_eye_passes(self, clean_eye):
        rep = assess(clean_eye.gray, synth.seg_result(clean_eye))
        assert rep.overall_pass
        assert rep.first_failure is None
        assert all(m.passed for m in rep.metrics.values())

    def test_blurred_eye_fails_on_sharpness(self, texture_pattern):
        eye = synth.render_eye(texture_pattern, noise_rng=default_rng(7), blur_sigma=4.0)
        rep = assess(eye.gray, synth.seg_result(eye))
        assert not rep.overall_pass
        assert rep.first_failure == "sharpness"

    def test_near_border_fails_on_margin(self, texture_pattern):
        eye = synth.render_eye(texture_pattern, noise_rng=default_rng(7), cx=208.0)
        rep = assess(eye.gray, synth.seg_result(eye))
        assert not rep.overall_pass
        assert rep.first_failure == "margin_adequacy"
        assert abs(rep.metrics["margin_adequacy"].score - 50.0) < 1e-9

    def test_iris_on_edge_errors_sclera_first(self, texture_pattern):
        # tangent iris: the limbus annulus exits the frame, which fails
        # (with a diagnostic) ahead of margin in the fixed metric order
        eye = synth.render_eye(texture_pattern, noise_rng=default_rng(7), cx=160.0)
        rep = assess(eye.gray, synth.seg_result(eye))
        assert not rep.overall_pass
        assert rep.first_failure == "iris_sclera_contrast"
        assert rep.metrics["iris_sclera_contrast"].error is not None
        assert math.isnan(rep.metrics["iris_sclera_contrast"].score)

    def test_metric_order_matches_published_table(self):
        assert METRIC_ORDER == (
            "grayscale_utilization",
            "iris_pupil_concentricity",
            "iris_pupil_contrast",
            "iris_pupil_ratio",
            "iris_sclera_contrast",
            "margin_adequacy",
            "pupil_circularity",
            "sharpness",
            "usable_iris_area",
            "overall",
        )

    def test_scores_within_declared_ranges(self, texture_pattern):
        for seed in (1, 2, 3):
            eye = synth.render_eye(
                texture_pattern, noise_rng=default_rng(seed), blur_sigma=0.5 * seed
            )
            rep = assess(eye.gray, synth.seg_result(eye))
            for name, m in rep.metrics.items():
                if not math.isfinite(m.score):
                    continue
                hi = 8.0 if name == "grayscale_utilization" else 100.0
                assert 0.0 <= m.score <= hi
