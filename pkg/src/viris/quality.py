"""ISO/IEC 29794-6 style quality metrics with pass/fail thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BinaryMask, mask_to_boundary_points
from .raster import Raster, laplacian_sharpness
from .segment import SegmentationResult

WEBER_EPS = 1.0 / 255.0
SHARPNESS_KNEE = 35.0
CIRCULARITY_BINS = 256
CIRCULARITY_HARMONICS = range(2, 9)
MIN_CONTOUR_POINTS = 32
ENTROPY_SUBSCORE_GAIN = 12.5

# Per-metric evaluation order: Table-2 component rows first, aggregate last
# so a concrete failing metric is what surfaces as first_failure.
METRIC_ORDER = (
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


@dataclass(frozen=True)
class QualityThresholds:
    """Pass thresholds per metric (strict >, or inside the ratio band)."""

    overall: float = 70.0
    grayscale_utilization: float = 6.0
    iris_pupil_concentricity: float = 90.0
    iris_pupil_contrast: float = 30.0
    iris_pupil_ratio: tuple[float, float] = (20.0, 70.0)
    iris_sclera_contrast: float = 5.0
    margin_adequacy: float = 80.0
    pupil_circularity: float = 70.0
    sharpness: float = 80.0
    usable_iris_area: float = 70.0
    ratio_band_check: bool = True

    def __post_init__(self):
        if not 0.0 <= self.grayscale_utilization <= 8.0:
            raise ValueError("grayscale utilization threshold must be in [0, 8]")
        lo, hi = self.iris_pupil_ratio
        if not 0.0 <= lo < hi <= 100.0:
            raise ValueError("ratio band must satisfy 0 <= lo < hi <= 100")
        for name in (
            "overall",
            "iris_pupil_concentricity",
            "iris_pupil_contrast",
            "iris_sclera_contrast",
            "margin_adequacy",
            "pupil_circularity",
            "sharpness",
            "usable_iris_area",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} threshold must be in [0, 100]")


DEFAULT_THRESHOLDS = QualityThresholds()


@dataclass(frozen=True)
class MetricResult:
    score: float
    passed: bool
    threshold: float | tuple[float, float]
    error: str | None = None


@dataclass(frozen=True)
class QualityReport:
    metrics: dict[str, MetricResult] = field(default_factory=dict)
    overall_pass: bool = False
    first_failure: str | None = None


def _ellipse_extents(e) -> tuple[float, float]:
    ca, sa = math.cos(e.angle), math.sin(e.angle)
    ex = math.sqrt((e.rx * ca) ** 2 + (e.ry * sa) ** 2)
    ey = math.sqrt((e.rx * sa) ** 2 + (e.ry * ca) ** 2)
    return ex, ey


def grayscale_utilization(gray: Raster, seg: SegmentationResult) -> float:
    """Shannon entropy (bits) of the 8-bit histogram over the iris bounding box."""
    ex, ey = _ellipse_extents(seg.iris)
    x0 = max(0, int(math.floor(seg.iris.cx - ex)))
    x1 = min(gray.width, int(math.ceil(seg.iris.cx + ex)) + 1)
    y0 = max(0, int(math.floor(seg.iris.cy - ey)))
    y1 = min(gray.height, int(math.ceil(seg.iris.cy + ey)) + 1)
    if x0 >= x1 or y0 >= y1:
        raise ValueError("iris bounding region is empty")
    region = gray.data[y0:y1, x0:x1]
    levels = np.rint(region * 255.0).astype(np.int64)
    counts = np.bincount(levels.ravel(), minlength=256)
    p = counts[counts > 0] / levels.size
    return float(-(p * np.log2(p)).sum())


def iris_pupil_concentricity(gray: Raster, seg: SegmentationResult) -> float:
    """100 * max(0, 1 - centre offset / iris radius)."""
    offset = math.hypot(seg.pupil.cx - seg.iris.cx, seg.pupil.cy - seg.iris.cy)
    return 100.0 * max(0.0, 1.0 - offset / seg.iris.mean_radius)


def _band_median(
    gray: Raster, cx: float, cy: float, r_in: float, r_out: float
) -> float:
    ys, xs = np.mgrid[0 : gray.height, 0 : gray.width]
    d = np.hypot(xs - cx, ys - cy)
    sel = (d >= r_in) & (d <= r_out)
    if not sel.any():
        raise ValueError("sampling band is empty")
    return float(np.median(gray.data[sel]))


def iris_pupil_contrast(gray: Raster, seg: SegmentationResult) -> float:
    """Weber contrast between the pupil disk and an inner iris annulus."""
    r_p = seg.pupil.mean_radius
    r_i = seg.iris.mean_radius
    cx, cy = seg.pupil.cx, seg.pupil.cy
    outer = min(1.5 * r_p, 0.9 * r_i)
    if 1.1 * r_p >= outer:
        raise ValueError("pupil nearly fills the iris; no annulus to sample")
    m_pupil = _band_median(gray, cx, cy, 0.0, 0.8 * r_p)
    m_iris = _band_median(gray, cx, cy, 1.1 * r_p, outer)
    return 100.0 * max(0.0, (m_iris - m_pupil) / (m_iris + m_pupil + WEBER_EPS))


def iris_pupil_ratio(gray: Raster, seg: SegmentationResult) -> float:
    """Pupil-to-iris radius ratio in percent."""
    return min(100.0, 100.0 * seg.pupil.mean_radius / seg.iris.mean_radius)


def iris_sclera_contrast(gray: Raster, seg: SegmentationResult) -> float:
    """Weber contrast across the limbus.

    Sclera samples come from the annulus [1.05, 1.25] * r_iris restricted
    to horizontal +-30 degree sectors; iris samples from the full annulus
    [0.75, 0.95] * r_iris.  Errors if either annulus exits the image.
    """
    r_i = seg.iris.mean_radius
    cx, cy = seg.iris.cx, seg.iris.cy
    x_need = 1.25 * r_i
    y_need = max(0.95 * r_i, 1.25 * r_i * 0.5)
    if (
        cx - x_need < 0
        or cx + x_need > gray.width - 1
        or cy - y_need < 0
        or cy + y_need > gray.height - 1
    ):
        raise ValueError("limbus annulus exits the image")
    ys, xs = np.mgrid[0 : gray.height, 0 : gray.width]
    dx = xs - cx
    dy = ys - cy
    d = np.hypot(dx, dy)
    horizontal = np.abs(dx) >= d * math.cos(math.pi / 6.0)
    sclera_sel = (d >= 1.05 * r_i) & (d <= 1.25 * r_i) & horizontal
    iris_sel = (d >= 0.75 * r_i) & (d <= 0.95 * r_i)
    if not sclera_sel.any() or not iris_sel.any():
        raise ValueError("limbus sampling band is empty")
    m_sclera = float(np.median(gray.data[sclera_sel]))
    m_iris = float(np.median(gray.data[iris_sel]))
    return 100.0 * max(0.0, (m_sclera - m_iris) / (m_sclera + m_iris + WEBER_EPS))


def margin_adequacy(gray: Raster, seg: SegmentationResult) -> float:
    """Distance from the iris boundary to each image edge vs the required margin.

    Required margins are 0.6 * r_iris left/right and 0.2 * r_iris top/bottom.
    """
    r_i = seg.iris.mean_radius
    ex, ey = _ellipse_extents(seg.iris)
    avail = {
        "left": seg.iris.cx - ex,
        "right": (gray.width - 1) - (seg.iris.cx + ex),
        "top": seg.iris.cy - ey,
        "bottom": (gray.height - 1) - (seg.iris.cy + ey),
    }
    req = {"left": 0.6 * r_i, "right": 0.6 * r_i, "top": 0.2 * r_i, "bottom": 0.2 * r_i}
    worst = min(max(0.0, avail[k]) / req[k] for k in avail)
    return 100.0 * min(1.0, worst)


def pupil_circularity(gray: Raster, seg: SegmentationResult) -> float:
    """Low-order harmonic distortion of the pupil boundary radius profile.

    The mask boundary is binned into 256 angular samples about the pupil
    centre (empty bins filled by circular interpolation); the score is
    100 * max(0, 1 - sqrt(sum of squared harmonic amplitudes 2..8) / mean radius).
    """
    pts = mask_to_boundary_points(seg.pupil_mask)
    if pts.shape[0] < MIN_CONTOUR_POINTS:
        raise ValueError(f"need at least {MIN_CONTOUR_POINTS} contour points")
    dx = pts[:, 0] - seg.pupil.cx
    dy = pts[:, 1] - seg.pupil.cy
    rho = np.hypot(dx, dy)
    phi = np.arctan2(dy, dx) % (2.0 * math.pi)
    bins = np.minimum(
        (phi / (2.0 * math.pi) * CIRCULARITY_BINS).astype(np.int64),
        CIRCULARITY_BINS - 1,
    )
    sums = np.bincount(bins, weights=rho, minlength=CIRCULARITY_BINS)
    counts = np.bincount(bins, minlength=CIRCULARITY_BINS)
    filled = counts > 0
    profile = np.empty(CIRCULARITY_BINS)
    profile[filled] = sums[filled] / counts[filled]
    if not filled.all():
        # Circular linear interpolation across empty bins.
        idx = np.arange(CIRCULARITY_BINS, dtype=np.float64)
        xp = idx[filled]
        fp = profile[filled]
        profile[~filled] = np.interp(
            idx[~filled],
            np.concatenate([xp - CIRCULARITY_BINS, xp, xp + CIRCULARITY_BINS]),
            np.concatenate([fp, fp, fp]),
        )
    spec = np.fft.rfft(profile) / CIRCULARITY_BINS
    a0 = spec[0].real
    if a0 <= 0:
        raise ValueError("degenerate boundary profile")
    amps = 2.0 * np.abs(spec[list(CIRCULARITY_HARMONICS)])
    return 100.0 * max(0.0, 1.0 - math.sqrt(float((amps**2).sum())) / a0)


def iso_sharpness(gray: Raster) -> float:
    """Saturating map of the raw Laplacian sharpness onto [0, 100].

    S is taken on the 8-bit intensity scale; the knee constant 35 places
    S = 70 exactly at score 80, aligning the raw capture gate with the
    ISO pass threshold.
    """
    s = 255.0 * laplacian_sharpness(gray)
    return 100.0 * s * s / (s * s + SHARPNESS_KNEE * SHARPNESS_KNEE)


def usable_iris_area(
    seg: SegmentationResult, occlusion: BinaryMask | None = None
) -> float:
    """Percentage of the iris annulus (iris minus pupil) free of occlusion."""
    annulus = seg.iris_mask.bits & ~seg.pupil_mask.bits
    total = int(annulus.sum())
    if total == 0:
        raise ValueError("iris annulus is empty")
    if occlusion is None:
        clear = total
    else:
        if occlusion.bits.shape != annulus.shape:
            raise ValueError("occlusion mask dimensions mismatch")
        clear = int((annulus & ~occlusion.bits).sum())
    return 100.0 * clear / total


def _subscore(name: str, score: float, thresholds: QualityThresholds) -> float:
    if name == "grayscale_utilization":
        return min(100.0, ENTROPY_SUBSCORE_GAIN * score)
    if name == "iris_pupil_ratio":
        lo, hi = thresholds.iris_pupil_ratio
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        return 100.0 * max(0.0, 1.0 - abs(score - mid) / half)
    return score


def overall_quality(
    component_scores: dict[str, float], thresholds: QualityThresholds = DEFAULT_THRESHOLDS
) -> float:
    """Minimum of the normalized sub-scores (entropy x12.5, ratio band-mapped)."""
    missing = [n for n in METRIC_ORDER[:-1] if n not in component_scores]
    if missing:
        raise ValueError(f"missing component scores: {missing}")
    subs = []
    for name in METRIC_ORDER[:-1]:
        score = component_scores[name]
        if not math.isfinite(score):
            raise ValueError(f"component {name} did not produce a score")
        subs.append(_subscore(name, score, thresholds))
    return min(subs)


def _passes(name: str, score: float, thresholds: QualityThresholds) -> bool:
    if not math.isfinite(score):
        return False
    if name == "iris_pupil_ratio":
        lo, hi = thresholds.iris_pupil_ratio
        if thresholds.ratio_band_check:
            return bool(lo < score < hi)
        return bool(score > lo)
    return bool(score > getattr(thresholds, name))


def assess(
    gray: Raster,
    seg: SegmentationResult,
    thresholds: QualityThresholds = DEFAULT_THRESHOLDS,
    occlusion: BinaryMask | None = None,
) -> QualityReport:
    """Evaluate every metric; failures carry a diagnostic instead of crashing."""
    computers = {
        "grayscale_utilization": lambda: grayscale_utilization(gray, seg),
        "iris_pupil_concentricity": lambda: iris_pupil_concentricity(gray, seg),
        "iris_pupil_contrast": lambda: iris_pupil_contrast(gray, seg),
        "iris_pupil_ratio": lambda: iris_pupil_ratio(gray, seg),
        "iris_sclera_contrast": lambda: iris_sclera_contrast(gray, seg),
        "margin_adequacy": lambda: margin_adequacy(gray, seg),
        "pupil_circularity": lambda: pupil_circularity(gray, seg),
        "sharpness": lambda: iso_sharpness(gray),
        "usable_iris_area": lambda: usable_iris_area(seg, occlusion),
    }
    metrics: dict[str, MetricResult] = {}
    scores: dict[str, float] = {}
    for name in METRIC_ORDER[:-1]:
        try:
            score = float(computers[name]())
            err = None
        except ValueError as exc:
            score = math.nan
            err = str(exc)
        scores[name] = score
        thr = (
            thresholds.iris_pupil_ratio
            if name == "iris_pupil_ratio"
            else getattr(thresholds, name)
        )
        metrics[name] = MetricResult(
            score=score, passed=_passes(name, score, thresholds), threshold=thr, error=err
        )
    try:
        ov = overall_quality(scores, thresholds)
        ov_err = None
    except ValueError as exc:
        ov = math.nan
        ov_err = str(exc)
    metrics["overall"] = MetricResult(
        score=ov,
        passed=math.isfinite(ov) and ov > thresholds.overall,
        threshold=thresholds.overall,
        error=ov_err,
    )
    overall_pass = all(m.passed for m in metrics.values())
    first_failure = next(
        (n for n in METRIC_ORDER if not metrics[n].passed), None
    )
    if overall_pass:
        first_failure = None
    return QualityReport(
        metrics=metrics, overall_pass=overall_pass, first_failure=first_failure
    )
