"""Frame-by-frame capture gating: detect/remap, crop, sharpness, ISO checks."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import FrameStream, SampleId, format_filename
from .quality import DEFAULT_THRESHOLDS, QualityThresholds, assess
from .raster import (
    BBox,
    Raster,
    crop_standardize,
    laplacian_sharpness,
    load_png,
    remap_bbox,
    save_png,
    scale_factors,
    to_grayscale,
)
from .segment import SegmentationError, classical_localize

# Detector boxes arrive in the coordinates of frames resized for detection.
DETECTOR_FRAME_SIZE = (640, 360)
CROP_SIZE = (640, 480)
SHARPNESS_GATE_DEFAULT = 70.0
TARGET_PER_EYE_DEFAULT = 8


class FeedbackCode(enum.Enum):
    ADJUST_GAZE = "adjust_gaze"
    ADJUST_DISTANCE = "adjust_distance"
    OPEN_EYELIDS = "open_eyelids"
    HOLD_STEADY = "hold_steady"
    NO_EYE_DETECTED = "no_eye_detected"


# Dominant physical cause per failing metric.
FEEDBACK_BY_METRIC = {
    "sharpness": FeedbackCode.HOLD_STEADY,
    "margin_adequacy": FeedbackCode.ADJUST_GAZE,
    "iris_pupil_concentricity": FeedbackCode.ADJUST_GAZE,
    "pupil_circularity": FeedbackCode.ADJUST_GAZE,
    "iris_pupil_ratio": FeedbackCode.OPEN_EYELIDS,
    "usable_iris_area": FeedbackCode.OPEN_EYELIDS,
    "iris_pupil_contrast": FeedbackCode.ADJUST_DISTANCE,
    "iris_sclera_contrast": FeedbackCode.ADJUST_DISTANCE,
    "grayscale_utilization": FeedbackCode.ADJUST_DISTANCE,
    "overall": FeedbackCode.ADJUST_DISTANCE,
}


@dataclass(frozen=True)
class SessionConfig:
    """Capture-session parameters and gating thresholds."""

    subject_id: str
    session_id: int
    target_per_eye: int = TARGET_PER_EYE_DEFAULT
    sharpness_gate: float = SHARPNESS_GATE_DEFAULT
    thresholds: QualityThresholds = DEFAULT_THRESHOLDS

    def __post_init__(self):
        if self.target_per_eye < 1:
            raise ValueError("target_per_eye must be at least 1")
        if self.sharpness_gate <= 0:
            raise ValueError("sharpness gate must be positive")
        # Validates subject/session against the filename convention.
        SampleId(self.subject_id, "L", self.session_id, 1)


@dataclass(frozen=True)
class GateAccept:
    sample: SampleId
    crop: Raster
    saved_path: str | None = None


@dataclass(frozen=True)
class GateReject:
    feedback: FeedbackCode
    failing_metric: str | None = None


GateDecision = GateAccept | GateReject


@dataclass(frozen=True)
class SessionResult:
    accepted: tuple[tuple[SampleId, str | None], ...]
    frames_processed: int
    complete: bool
    rejection_histogram: dict[FeedbackCode, int] = field(default_factory=dict)


def _roi_from_iris(cx: float, cy: float, r: float) -> BBox:
    """4:3 box around the localized iris, sized to frame it comfortably."""
    return BBox(x0=cx - 2.0 * r, y0=cy - 1.5 * r, w=4.0 * r, h=3.0 * r)


def gate_frame(
    frame: Raster,
    eye_bbox: BBox | None,
    cfg: SessionConfig,
    eye: str,
    next_trial: int,
) -> GateDecision:
    """Run one frame through the fixed gating pipeline.

    Order: locate/remap -> crop to 640x480 -> grayscale -> raw sharpness
    gate -> segmentation -> ISO assessment.  The first failure
    short-circuits with its feedback code.
    """
    if eye_bbox is not None:
        s = scale_factors(frame.width, frame.height, *DETECTOR_FRAME_SIZE)
        roi = remap_bbox(eye_bbox, s)
    else:
        try:
            found = classical_localize(to_grayscale(frame))
        except (SegmentationError, ValueError):
            return GateReject(FeedbackCode.NO_EYE_DETECTED)
        roi = _roi_from_iris(found.iris.cx, found.iris.cy, found.iris.mean_radius)

    # An eye already at standard scale keeps its sensor pixels: a box
    # within 5% of the target is snapped to an integral 640x480 window so
    # the crop is a copy, not a resample.
    tw, th = CROP_SIZE
    if (
        abs(roi.w - tw) <= 0.05 * tw
        and abs(roi.h - th) <= 0.05 * th
        and frame.width >= tw
        and frame.height >= th
    ):
        x0 = int(round(roi.x0 + (roi.w - tw) / 2.0))
        y0 = int(round(roi.y0 + (roi.h - th) / 2.0))
        x0 = min(max(x0, 0), frame.width - tw)
        y0 = min(max(y0, 0), frame.height - th)
        roi = BBox(float(x0), float(y0), float(tw), float(th))

    try:
        crop = crop_standardize(frame, roi, *CROP_SIZE)
    except ValueError:
        return GateReject(FeedbackCode.NO_EYE_DETECTED)
    gray = to_grayscale(crop)

    s_raw = 255.0 * laplacian_sharpness(gray)
    if s_raw < cfg.sharpness_gate:
        return GateReject(FeedbackCode.HOLD_STEADY, failing_metric="sharpness")

    try:
        seg = classical_localize(gray)
    except (SegmentationError, ValueError):
        return GateReject(FeedbackCode.NO_EYE_DETECTED)

    report = assess(gray, seg, cfg.thresholds)
    if not report.overall_pass:
        metric = report.first_failure
        feedback = FEEDBACK_BY_METRIC.get(metric, FeedbackCode.ADJUST_DISTANCE)
        return GateReject(feedback, failing_metric=metric)

    sample = SampleId(cfg.subject_id, eye, cfg.session_id, next_trial)
    return GateAccept(sample=sample, crop=crop)


def run_session(
    stream: FrameStream,
    cfg: SessionConfig,
    eye: str | None = None,
    out_dir: str | Path | None = None,
) -> SessionResult:
    """Replay a frame stream until target_per_eye accepts or exhaustion.

    Deterministic: trial numbers increment only on accepts, so accepted
    filenames are consecutive from 1.  Crops are written to ``out_dir``
    under the standard filename when a directory is given.
    """
    eye = eye if eye is not None else stream.eye
    accepted: list[tuple[SampleId, str | None]] = []
    histogram: dict[FeedbackCode, int] = {}
    processed = 0
    for record in stream.frames:
        if len(accepted) >= cfg.target_per_eye:
            break
        processed += 1
        try:
            frame = load_png(record.path)
        except (OSError, ValueError):
            histogram[FeedbackCode.NO_EYE_DETECTED] = (
                histogram.get(FeedbackCode.NO_EYE_DETECTED, 0) + 1
            )
            continue
        decision = gate_frame(
            frame, record.eye_bbox, cfg, eye, next_trial=len(accepted) + 1
        )
        if isinstance(decision, GateAccept):
            path = None
            if out_dir is not None:
                out = Path(out_dir)
                out.mkdir(parents=True, exist_ok=True)
                path = str(out / format_filename(decision.sample))
                save_png(decision.crop, path)
            accepted.append((decision.sample, path))
        else:
            histogram[decision.feedback] = histogram.get(decision.feedback, 0) + 1
    return SessionResult(
        accepted=tuple(accepted),
        frames_processed=processed,
        complete=len(accepted) == cfg.target_per_eye,
        rejection_histogram=histogram,
    )
