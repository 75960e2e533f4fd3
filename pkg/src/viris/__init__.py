"""Visible-light iris recognition toolkit.

Capture-time quality gating, ellipse-based segmentation, rubber-sheet
normalization, log-Gabor iris codes, and verification-rate evaluation.
"""

from .config import ToolkitConfig, load_config, save_config
from .dataset import (
    FrameStream,
    ManifestEntry,
    SampleId,
    TemplateRecord,
    format_filename,
    load_manifest,
    load_template,
    parse_filename,
    save_manifest,
    save_template,
)
from .evaluation import (
    Polarity,
    ScoreSet,
    auc,
    build_pairs,
    det_curve,
    dist_stats,
    e1,
    eer,
    error_rates,
    iou_dice,
    tar_at_far,
    verification_report,
    zero_fmr,
    zero_fnmr,
)
from .gate import (
    FeedbackCode,
    GateAccept,
    GateReject,
    SessionConfig,
    gate_frame,
    run_session,
)
from .geometry import (
    BinaryMask,
    Ellipse,
    containment_check,
    fit_ellipse_lsq,
    signed_distance_transform,
    soft_boundary,
)
from .iriscode import CodeGrid, FilterBank, InsufficientOverlapError, encode, match
from .normalize import NormalizedStrip, enhance_strip, rubber_sheet
from .quality import DEFAULT_THRESHOLDS, QualityReport, QualityThresholds, assess
from .raster import BBox, Raster, load_png, save_png
from .segment import (
    SegmentationResult,
    classical_localize,
    segment_from_maps,
    segment_from_masks,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BinaryMask",
    "CodeGrid",
    "DEFAULT_THRESHOLDS",
    "Ellipse",
    "FeedbackCode",
    "FilterBank",
    "FrameStream",
    "GateAccept",
    "GateReject",
    "InsufficientOverlapError",
    "ManifestEntry",
    "NormalizedStrip",
    "Polarity",
    "QualityReport",
    "QualityThresholds",
    "Raster",
    "SampleId",
    "ScoreSet",
    "SegmentationResult",
    "SessionConfig",
    "TemplateRecord",
    "ToolkitConfig",
    "assess",
    "auc",
    "build_pairs",
    "classical_localize",
    "containment_check",
    "det_curve",
    "dist_stats",
    "e1",
    "eer",
    "encode",
    "enhance_strip",
    "error_rates",
    "fit_ellipse_lsq",
    "format_filename",
    "gate_frame",
    "iou_dice",
    "load_config",
    "load_manifest",
    "load_png",
    "load_template",
    "match",
    "parse_filename",
    "rubber_sheet",
    "run_session",
    "save_config",
    "save_manifest",
    "save_png",
    "save_template",
    "segment_from_maps",
    "segment_from_masks",
    "signed_distance_transform",
    "soft_boundary",
    "tar_at_far",
    "verification_report",
    "zero_fmr",
    "zero_fnmr",
]
