"""Segmentation ingestion, post-processing and the classical circle localizer."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .geometry import (
    BinaryMask,
    Ellipse,
    EllipseFitError,
    decode_ellipse,
    fit_ellipse_lsq,
    mask_to_edge_points,
    radius_at_angle,
    rasterize_ellipse,
)
from .raster import Raster

MAP_THRESHOLD = 0.5
FIT_MAX_RMS_RESIDUAL_PX = 2.0
FIT_MIN_AXIS_RATIO = 0.2
DEGRADED_CLIP_FRACTION = 0.5

# Classical localizer tuning.  The limbus ring is found first: under
# visible light it is by far the strongest circular edge, while the
# pupil boundary is low-contrast and must be searched for inside it.
LIMBUS_RADIUS_RANGE = (0.18, 0.45)     # of min(image dims)
PUPIL_RADIUS_RANGE = (0.18, 0.72)      # of the limbus radius
PUPIL_CENTER_SLACK = 0.15              # of the limbus radius
EDGE_PERCENTILE = 90.0
VOTE_FLOOR_PER_PERIMETER = 0.05
VOTE_FLOOR_OF_EDGES = 0.02
LIMBUS_STEP_FLOOR = 1e-3
COARSE_TARGET_DIM = 160


class SegmentationError(ValueError):
    """Raised when no usable segmentation can be produced."""


class LocalizationError(SegmentationError):
    """Raised when the classical localizer finds no acceptable circles."""


class SegSource(enum.Enum):
    EXTERNAL_MASK = "external_mask"
    REFIT = "refit"
    REGRESSED_FALLBACK = "regressed_fallback"
    CLASSICAL = "classical"


@dataclass(frozen=True, eq=False)
class SegmentationResult:
    """Masks plus fitted ellipses for one eye image."""

    iris_mask: BinaryMask
    pupil_mask: BinaryMask
    iris: Ellipse
    pupil: Ellipse
    source: SegSource
    degraded: bool = False

    def __post_init__(self):
        if self.iris_mask.bits.shape != self.pupil_mask.bits.shape:
            raise ValueError("iris and pupil masks must share dimensions")


def threshold_maps(
    iris_prob: Raster, pupil_prob: Raster, t: float = MAP_THRESHOLD
) -> tuple[BinaryMask, BinaryMask]:
    """Binarize probability maps; a pixel is set when prob >= t."""
    if not 0.0 < t < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    for r in (iris_prob, pupil_prob):
        if r.channels != 1:
            raise ValueError("probability maps must be single-channel")
    return BinaryMask(iris_prob.data >= t), BinaryMask(pupil_prob.data >= t)


def largest_component(mask: BinaryMask) -> BinaryMask:
    """Largest 8-connected component; ties go to the smallest (row, col) seed."""
    if not mask.bits.any():
        raise SegmentationError("mask has no foreground")
    labels, n = ndimage.label(mask.bits, structure=np.ones((3, 3), dtype=bool))
    if n == 1:
        return mask
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if candidates.size > 1:
        # First foreground pixel in raster order is the component's minimum.
        flat = labels.ravel()
        first = np.full(n + 1, flat.size, dtype=np.int64)
        np.minimum.at(first, flat, np.arange(flat.size))
        winner = candidates[np.argmin(first[candidates])]
    else:
        winner = candidates[0]
    return BinaryMask(labels == winner)


def _rms_radial_residual(e: Ellipse, pts: np.ndarray) -> float:
    dx = pts[:, 0] - e.cx
    dy = pts[:, 1] - e.cy
    rho = np.hypot(dx, dy)
    pred = radius_at_angle(e, np.arctan2(dy, dx))
    return float(np.sqrt(np.mean((rho - pred) ** 2)))


def _fit_class(
    mask: BinaryMask, regressed: np.ndarray | None, w: int, h: int
) -> tuple[Ellipse, BinaryMask, bool]:
    """Fit one class; returns (ellipse, mask to keep, used_fallback)."""
    try:
        comp = largest_component(mask)
        pts = mask_to_edge_points(comp)
        e = fit_ellipse_lsq(pts)
        reliable = (
            _rms_radial_residual(e, pts) < FIT_MAX_RMS_RESIDUAL_PX
            and e.ry / e.rx > FIT_MIN_AXIS_RATIO
        )
    except (SegmentationError, EllipseFitError, ValueError):
        reliable = False
    if reliable:
        return e, comp, False
    if regressed is None:
        raise SegmentationError("unreliable fit and no regressed fallback available")
    fallback = decode_ellipse(regressed, w, h)
    return fallback, rasterize_ellipse(fallback, w, h), True


def refit_or_fallback(
    iris_mask: BinaryMask,
    pupil_mask: BinaryMask,
    regressed: tuple[np.ndarray, np.ndarray] | None = None,
    source: SegSource = SegSource.REFIT,
) -> SegmentationResult:
    """Ellipses from largest components, falling back to regressed encodings.

    A fit is reliable iff its RMS radial boundary residual is < 2 px and the
    axis ratio ry/rx exceeds 0.2; otherwise the matching element of
    ``regressed`` (iris, pupil six-vectors) is decoded.  Either class
    falling back downgrades the source flag to REGRESSED_FALLBACK, and the
    fallback class's mask is replaced by its rasterized ellipse.
    """
    if iris_mask.bits.shape != pupil_mask.bits.shape:
        raise SegmentationError("iris and pupil masks must share dimensions")
    h, w = iris_mask.bits.shape
    reg_iris = regressed[0] if regressed is not None else None
    reg_pupil = regressed[1] if regressed is not None else None
    iris_e, iris_m, iris_fell = _fit_class(iris_mask, reg_iris, w, h)
    pupil_e, pupil_m, pupil_fell = _fit_class(pupil_mask, reg_pupil, w, h)
    if iris_fell or pupil_fell:
        source = SegSource.REGRESSED_FALLBACK
    return SegmentationResult(
        iris_mask=iris_m,
        pupil_mask=pupil_m,
        iris=iris_e,
        pupil=pupil_e,
        source=source,
    )


def enforce_containment(result: SegmentationResult) -> SegmentationResult:
    """Clip the pupil mask to the iris mask; flag degraded past 50% loss."""
    before = result.pupil_mask.area
    clipped = BinaryMask(result.pupil_mask.bits & result.iris_mask.bits)
    removed = before - clipped.area
    degraded = result.degraded or (before > 0 and removed > DEGRADED_CLIP_FRACTION * before)
    return replace(result, pupil_mask=clipped, degraded=degraded)


def segment_from_maps(
    iris_prob: Raster,
    pupil_prob: Raster,
    t: float = MAP_THRESHOLD,
    regressed: tuple[np.ndarray, np.ndarray] | None = None,
) -> SegmentationResult:
    """threshold -> largest component -> refit/fallback -> containment."""
    iris_m, pupil_m = threshold_maps(iris_prob, pupil_prob, t)
    return enforce_containment(refit_or_fallback(iris_m, pupil_m, regressed))


def segment_from_masks(
    iris_mask: BinaryMask,
    pupil_mask: BinaryMask,
    regressed: tuple[np.ndarray, np.ndarray] | None = None,
) -> SegmentationResult:
    """Post-process externally produced binary masks."""
    result = refit_or_fallback(
        iris_mask, pupil_mask, regressed, source=SegSource.EXTERNAL_MASK
    )
    return enforce_containment(result)


def _circle_votes(
    edge_y: np.ndarray,
    edge_x: np.ndarray,
    ny: np.ndarray,
    nx: np.ndarray,
    radius: float,
    shape: tuple[int, int],
) -> np.ndarray:
    """Accumulate one-radius Hough votes at p - r*n for unit normals n."""
    cy = np.rint(edge_y - radius * ny).astype(np.int64)
    cx = np.rint(edge_x - radius * nx).astype(np.int64)
    keep = (cy >= 0) & (cy < shape[0]) & (cx >= 0) & (cx < shape[1])
    acc = np.zeros(shape, dtype=np.float64)
    np.add.at(acc, (cy[keep], cx[keep]), 1.0)
    return acc


def _block_mean(img: np.ndarray, d: int) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h // d, w // d
    return img[: h2 * d, : w2 * d].reshape(h2, d, w2, d).mean(axis=(1, 3))


def _hough_circle(
    gray: np.ndarray, r_lo: int, r_hi: int
) -> tuple[float, float, float]:
    """Strongest circular edge by gradient-direction Hough voting.

    Intensity rises outward across both iris boundaries, so every edge
    pixel votes at p - r*g_hat.  The winner is the largest 5x5-summed
    vote peak over all radii; it must beat both a per-perimeter floor
    and a fixed fraction of the edge budget, which rejects the diffuse
    blobs pure noise produces.
    """
    h, w = gray.shape
    sigma = max(2.0, min(h, w) / 96.0)
    smoothed = ndimage.gaussian_filter(gray, sigma=sigma)
    gy, gx = np.gradient(smoothed)
    mag = np.hypot(gy, gx)
    floor = max(float(np.percentile(mag, EDGE_PERCENTILE)), 1e-6)
    edges = mag >= floor
    if not edges.any():
        raise LocalizationError("no gradient structure found")
    ey, ex = np.nonzero(edges)
    m = mag[ey, ex]
    ny = gy[ey, ex] / m
    nx = gx[ey, ex] / m

    best = None
    for r in range(r_lo, r_hi + 1):
        acc = _circle_votes(ey, ex, ny, nx, float(r), (h, w))
        # 5x5 box sum tolerates residual vote spread without blunting peaks.
        acc = ndimage.uniform_filter(acc, size=5) * 25.0
        idx = int(np.argmax(acc))
        if best is None or acc.flat[idx] > best[0]:
            best = (acc.flat[idx], r, idx)
    votes, r, idx = best
    needed = max(
        VOTE_FLOOR_PER_PERIMETER * 2.0 * math.pi * r, VOTE_FLOOR_OF_EDGES * ey.size
    )
    if votes < needed:
        raise LocalizationError("no circle above the accumulator floor")
    cy, cx = divmod(idx, w)

    # Centroid refinement over a small window around the peak.
    acc = ndimage.gaussian_filter(
        _circle_votes(ey, ex, ny, nx, float(r), (h, w)), sigma=2.0
    )
    y0, y1 = max(0, cy - 3), min(h, cy + 4)
    x0, x1 = max(0, cx - 3), min(w, cx + 4)
    win = acc[y0:y1, x0:x1]
    ys, xs = np.mgrid[y0:y1, x0:x1]
    total = win.sum()
    if total <= 0:
        return float(cx), float(cy), float(r)
    return float((win * xs).sum() / total), float((win * ys).sum() / total), float(r)


def _step_profile(
    smoothed: np.ndarray,
    centers_x: np.ndarray,
    centers_y: np.ndarray,
    radii: np.ndarray,
    angles: np.ndarray,
) -> np.ndarray:
    """Smoothed outward step of the circumferential mean, per (center, radius).

    Averaging around the ring suppresses pixel noise, so the argmax rides
    on boundary contrast alone.  Row k of the result corresponds to the
    step between radii[k] and radii[k+1].
    """
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    xs = centers_x[:, None, None] + radii[None, :, None] * cos_a[None, None, :]
    ys = centers_y[:, None, None] + radii[None, :, None] * sin_a[None, None, :]
    prof = ndimage.map_coordinates(smoothed, [ys, xs], order=1, mode="nearest")
    prof = prof.mean(axis=2)
    step = prof[:, 1:] - prof[:, :-1]
    return ndimage.gaussian_filter1d(step, sigma=1.0, axis=1)


# Horizontal wedges dodge eyelid cover when probing the limbus ring.
_SECTOR_ANGLES = np.concatenate(
    [
        np.linspace(-math.pi / 4, math.pi / 4, 32, endpoint=False),
        np.linspace(3 * math.pi / 4, 5 * math.pi / 4, 32, endpoint=False),
    ]
)
_FULL_ANGLES = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)


def _locate_limbus(gray: np.ndarray) -> tuple[float, float, float]:
    """Coarse-to-fine limbus circle.

    The Hough vote runs on a block-mean downsampled frame: averaging
    divides sensor noise by the factor while the high-contrast limbus
    ring survives untouched.  A sector-profile search then snaps the
    circle to the full-resolution boundary.
    """
    h, w = gray.shape
    d = max(1, int(round(min(h, w) / COARSE_TARGET_DIM)))
    work = _block_mean(gray, d) if d > 1 else gray
    r_lo = max(4, int(round(LIMBUS_RADIUS_RANGE[0] * min(work.shape))))
    r_hi = int(round(LIMBUS_RADIUS_RANGE[1] * min(work.shape)))
    cx, cy, r = _hough_circle(work, r_lo, r_hi)
    if d > 1:
        half = (d - 1) / 2.0
        cx, cy, r = cx * d + half, cy * d + half, r * d
    smoothed = ndimage.gaussian_filter(gray, sigma=1.5)
    slack = 2 * d
    offs = np.arange(-slack, slack + 1, dtype=np.float64)
    centers_x = cx + np.repeat(offs, offs.size)
    centers_y = cy + np.tile(offs, offs.size)
    radii = np.arange(max(3.0, r - 2 * d - 2), r + 2 * d + 3)
    step = _step_profile(smoothed, centers_x, centers_y, radii, _SECTOR_ANGLES)
    ci, ri = np.unravel_index(int(np.argmax(step)), step.shape)
    if step[ci, ri] < LIMBUS_STEP_FLOOR:
        return cx, cy, r
    return float(centers_x[ci]), float(centers_y[ci]), float(radii[ri]) + 0.5


def _locate_pupil(
    gray: np.ndarray, limbus_x: float, limbus_y: float, limbus_r: float
) -> tuple[float, float, float]:
    """Pupil circle inside a known limbus.

    Full-circle profile search over a centre grid near the limbus centre
    (the pupil sits slightly off it) and radii in a fixed fraction band,
    then a one-pixel polish around the coarse winner.
    """
    smoothed = ndimage.gaussian_filter(gray, sigma=1.5)
    slack = max(4.0, PUPIL_CENTER_SLACK * limbus_r)
    offs = np.arange(-slack, slack + 1, 3.0)
    centers_x = limbus_x + np.repeat(offs, offs.size)
    centers_y = limbus_y + np.tile(offs, offs.size)
    r_lo = max(4.0, PUPIL_RADIUS_RANGE[0] * limbus_r)
    r_hi = PUPIL_RADIUS_RANGE[1] * limbus_r
    radii = np.arange(r_lo, r_hi + 1, 2.0)
    step = _step_profile(smoothed, centers_x, centers_y, radii, _FULL_ANGLES)
    ci, ri = np.unravel_index(int(np.argmax(step)), step.shape)
    if step[ci, ri] < LIMBUS_STEP_FLOOR:
        raise LocalizationError("no pupil boundary found")
    cx, cy, r = centers_x[ci], centers_y[ci], radii[ri] + 1.0

    offs = np.arange(-2.0, 3.0)
    centers_x = cx + np.repeat(offs, offs.size)
    centers_y = cy + np.tile(offs, offs.size)
    radii = np.arange(max(3.0, r - 3.0), r + 4.0)
    step = _step_profile(smoothed, centers_x, centers_y, radii, _FULL_ANGLES)
    ci, ri = np.unravel_index(int(np.argmax(step)), step.shape)
    if step[ci, ri] < LIMBUS_STEP_FLOOR:
        return float(cx), float(cy), float(r)
    return float(centers_x[ci]), float(centers_y[ci]), float(radii[ri]) + 0.5


def classical_localize(gray: Raster) -> SegmentationResult:
    """Limbus-first circular localization.

    Returns circles as degenerate ellipses with rasterized disk masks,
    source CLASSICAL.  Raises :class:`LocalizationError` when no circle
    rises above the accumulator floor or no pupil boundary shows inside.
    """
    if gray.channels != 1:
        raise ValueError("classical localizer expects a grayscale raster")
    if min(gray.width, gray.height) < 64:
        raise ValueError("image must be at least 64x64")
    img = gray.data
    ix, iy, ir = _locate_limbus(img)
    px, py, pr = _locate_pupil(img, ix, iy, ir)
    if ir <= pr:
        raise LocalizationError("limbus radius did not exceed the pupil radius")
    h, w = img.shape
    pupil = Ellipse(px, py, pr, pr, 0.0)
    iris = Ellipse(ix, iy, ir, ir, 0.0)
    result = SegmentationResult(
        iris_mask=rasterize_ellipse(iris, w, h),
        pupil_mask=rasterize_ellipse(pupil, w, h),
        iris=iris,
        pupil=pupil,
        source=SegSource.CLASSICAL,
    )
    return enforce_containment(result)
