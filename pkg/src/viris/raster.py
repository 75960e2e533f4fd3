"""Raster value type and pixel-level operations shared by the pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

# BT.601 luma weights for RGB -> grayscale.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# 4-neighbour Laplacian used by the sharpness measure.
LAPLACIAN_KERNEL = np.array(
    [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]
)

DEFAULT_GAMMA = 0.7
STANDARD_CROP_SIZE = (640, 480)


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable image: float intensities in [0, 1], row-major, 1 or 3 channels.

    ``data`` has shape (h, w) for single-channel images and (h, w, 3) for RGB.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            pass
        elif arr.ndim == 3 and arr.shape[2] == 3:
            pass
        else:
            raise ValueError(f"raster shape {arr.shape} not (h, w) or (h, w, 3)")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("raster must have at least one pixel")
        if not np.isfinite(arr).all():
            raise ValueError("raster contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("raster intensities must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]


@dataclass(frozen=True)
class PointPx:
    """Pixel position, x right / y down."""

    x: float
    y: float


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box (top-left corner + extent) in pixel units."""

    x0: float
    y0: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("bbox extent must be positive")


@dataclass(frozen=True)
class ScalePair:
    """Per-axis multipliers taking detector coordinates back to the original frame."""

    sx: float
    sy: float


def to_grayscale(img: Raster) -> Raster:
    """BT.601 luma conversion; single-channel input passes through unchanged."""
    if img.channels == 1:
        return img
    wr, wg, wb = LUMA_WEIGHTS
    gray = wr * img.data[:, :, 0] + wg * img.data[:, :, 1] + wb * img.data[:, :, 2]
    return Raster(np.clip(gray, 0.0, 1.0))


def extract_red_channel(img: Raster) -> Raster:
    """Red plane of an RGB raster as a single-channel raster."""
    if img.channels != 3:
        raise ValueError("red-channel extraction requires a 3-channel raster")
    return Raster(img.data[:, :, 0])


def gamma_correct(img: Raster, gamma: float = DEFAULT_GAMMA, gain: float = 1.0) -> Raster:
    """Power-law mapping out = gain * in**gamma, clipped back to [0, 1]."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if gain <= 0:
        raise ValueError("gain must be positive")
    return Raster(np.clip(gain * np.power(img.data, gamma), 0.0, 1.0))


def laplacian_sharpness(img: Raster) -> float:
    """Population standard deviation of the 3x3 Laplacian response.

    Borders are handled by edge replication, so the response is defined on
    every pixel.  The value is on the scale of the stored intensities;
    multiply by 255 for the 8-bit convention used by capture gating.
    """
    if img.channels != 1:
        raise ValueError("sharpness is defined on single-channel rasters")
    if min(img.width, img.height) < 3:
        raise ValueError("image smaller than the 3x3 Laplacian kernel")
    resp = ndimage.convolve(img.data, LAPLACIAN_KERNEL, mode="nearest")
    return float(resp.std())


def scale_factors(orig_w: int, orig_h: int, resized_w: int, resized_h: int) -> ScalePair:
    """Multipliers mapping coordinates in the resized frame to the original."""
    if min(orig_w, orig_h, resized_w, resized_h) <= 0:
        raise ValueError("frame sizes must be positive")
    return ScalePair(sx=orig_w / resized_w, sy=orig_h / resized_h)


def remap_point(p: PointPx, s: ScalePair) -> PointPx:
    return PointPx(x=p.x * s.sx, y=p.y * s.sy)


def remap_bbox(b: BBox, s: ScalePair) -> BBox:
    return BBox(x0=b.x0 * s.sx, y0=b.y0 * s.sy, w=b.w * s.sx, h=b.h * s.sy)


def crop_standardize(
    img: Raster,
    roi: BBox,
    out_w: int = STANDARD_CROP_SIZE[0],
    out_h: int = STANDARD_CROP_SIZE[1],
) -> Raster:
    """Crop ``roi`` to a fixed-size ``out_w`` x ``out_h`` raster.

    The box is first expanded about its centre to the target aspect ratio
    (never squeezed), then clamped to the image bounds, and the clamped
    region is resampled bilinearly to the output grid.  A box that already
    has the target aspect, integral pixel bounds and the target size comes
    through pixel-identical.
    """
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output size must be positive")
    if (
        roi.x0 >= img.width
        or roi.y0 >= img.height
        or roi.x0 + roi.w <= 0
        or roi.y0 + roi.h <= 0
    ):
        raise ValueError("roi does not intersect the image")

    target = out_w / out_h
    cx = roi.x0 + roi.w / 2.0
    cy = roi.y0 + roi.h / 2.0
    w, h = roi.w, roi.h
    if w / h < target:
        w = h * target
    elif w / h > target:
        h = w / target

    # Clamp to the image, shifting the window before shrinking it.
    w = min(w, img.width)
    h = min(h, img.height)
    x0 = min(max(cx - w / 2.0, 0.0), img.width - w)
    y0 = min(max(cy - h / 2.0, 0.0), img.height - h)

    xs = x0 + (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = y0 + (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")

    if img.channels == 1:
        out = ndimage.map_coordinates(
            img.data, [grid_y, grid_x], order=1, mode="nearest"
        )
    else:
        planes = [
            ndimage.map_coordinates(
                img.data[:, :, c], [grid_y, grid_x], order=1, mode="nearest"
            )
            for c in range(3)
        ]
        out = np.stack(planes, axis=-1)
    return Raster(np.clip(out, 0.0, 1.0))


def load_png(path: str | Path) -> Raster:
    """Load an 8-bit single-channel or RGB PNG as a raster (v / 255)."""
    with Image.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float64)
        elif im.mode == "RGB":
            arr = np.asarray(im, dtype=np.float64)
        else:
            raise ValueError(f"unsupported PNG mode {im.mode!r}; need L or RGB")
    return Raster(arr / 255.0)


def save_png(img: Raster, path: str | Path) -> None:
    """Write a raster as an 8-bit PNG (round(v * 255))."""
    arr = np.rint(img.data * 255.0).astype(np.uint8)
    mode = "L" if img.channels == 1 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")
