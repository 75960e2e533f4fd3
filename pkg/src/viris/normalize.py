"""Rubber-sheet normalization of the iris annulus and strip enhancement."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import load_mask_png, save_mask_png
from .geometry import BinaryMask, Ellipse, radius_at_angle
from .raster import Raster, extract_red_channel, gamma_correct, load_png, save_png
from .segment import SegmentationResult

STRIP_WIDTH = 512
STRIP_HEIGHT = 64
NORM_SUFFIX = "_norm.png"
MASK_SUFFIX = "_mask.png"


@dataclass(frozen=True, eq=False)
class NormalizedStrip:
    """Unwrapped annulus texture with a per-pixel validity map."""

    texture: Raster
    validity: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.validity, dtype=bool)
        if v.shape != (self.texture.height, self.texture.width):
            raise ValueError("validity shape must match texture")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "validity", v)

    @property
    def height(self) -> int:
        return self.texture.height

    @property
    def width(self) -> int:
        return self.texture.width


def _ray_ellipse_exit(e: Ellipse, cx: np.ndarray, cy: np.ndarray, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    """Distance along rays (cx,cy)+t*(ux,uy), t>0 to the ellipse boundary."""
    ca, sa = np.cos(e.angle), np.sin(e.angle)
    # Ray origin and direction in the ellipse's axis-aligned frame.
    dx, dy = cx - e.cx, cy - e.cy
    bx = ca * dx + sa * dy
    by = -sa * dx + ca * dy
    vx = ca * ux + sa * uy
    vy = -sa * ux + ca * uy
    a = (vx / e.rx) ** 2 + (vy / e.ry) ** 2
    b = 2.0 * (bx * vx / e.rx**2 + by * vy / e.ry**2)
    c = (bx / e.rx) ** 2 + (by / e.ry) ** 2 - 1.0
    disc = b * b - 4.0 * a * c
    if np.any(disc < 0) or np.any(c >= 0):
        raise ValueError("pupil center lies outside the iris boundary")
    return (-b + np.sqrt(disc)) / (2.0 * a)


def rubber_sheet(
    image: Raster,
    seg: SegmentationResult,
    occlusion: np.ndarray | None = None,
    out_w: int = STRIP_WIDTH,
    out_h: int = STRIP_HEIGHT,
) -> NormalizedStrip:
    """Unwrap the pupil-to-limbus annulus into an out_h x out_w strip.

    Column j is the ray at angle 2*pi*j/out_w from +x; row i samples the
    point (1-r)*P + r*L on that ray at r = (i+0.5)/out_h, where P and L
    are the pupil and iris boundary crossings.  Bilinear sampling; a
    strip pixel is valid when its source lies in bounds and its nearest
    pixel is not occluded.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("strip dimensions must be positive")
    if occlusion is not None:
        occlusion = np.asarray(occlusion, dtype=bool)
        if occlusion.shape != (image.height, image.width):
            raise ValueError("occlusion shape must match image")

    theta = 2.0 * np.pi * np.arange(out_w) / out_w
    ux, uy = np.cos(theta), np.sin(theta)
    pupil, iris = seg.pupil, seg.iris
    t_pupil = radius_at_angle(pupil, theta)
    cx = np.full(out_w, pupil.cx)
    cy = np.full(out_w, pupil.cy)
    t_limbus = _ray_ellipse_exit(iris, cx, cy, ux, uy)
    if np.any(t_pupil > t_limbus):
        bad = theta[np.argmax(t_pupil - t_limbus)]
        raise ValueError(
            f"pupil boundary outside iris boundary at angle {bad:.3f} rad"
        )

    radial = (np.arange(out_h) + 0.5) / out_h
    t = (1.0 - radial[:, None]) * t_pupil[None, :] + radial[:, None] * t_limbus[None, :]
    xs = pupil.cx + t * ux[None, :]
    ys = pupil.cy + t * uy[None, :]

    coords = np.stack([ys.ravel(), xs.ravel()])
    pix = np.asarray(image.data)
    if pix.ndim == 2:
        tex = ndimage.map_coordinates(pix, coords, order=1, mode="nearest")
        tex = tex.reshape(out_h, out_w)
    else:
        planes = [
            ndimage.map_coordinates(pix[..., k], coords, order=1, mode="nearest").reshape(out_h, out_w)
            for k in range(pix.shape[2])
        ]
        tex = np.stack(planes, axis=-1)

    valid = (
        (xs >= 0.0) & (xs <= image.width - 1.0) & (ys >= 0.0) & (ys <= image.height - 1.0)
    )
    if occlusion is not None:
        yi = np.clip(np.rint(ys).astype(int), 0, image.height - 1)
        xi = np.clip(np.rint(xs).astype(int), 0, image.width - 1)
        valid &= ~occlusion[yi, xi]
    return NormalizedStrip(texture=Raster(np.clip(tex, 0.0, 1.0)), validity=valid)


def enhance_strip(strip: NormalizedStrip, gamma: float = 0.7, gain: float = 1.0) -> NormalizedStrip:
    """Red-channel extraction followed by gamma correction.

    Validity passes through untouched.  Single-channel strips cannot
    supply a red plane and are rejected.
    """
    red = extract_red_channel(strip.texture)
    out = gamma_correct(red, gamma=gamma, gain=gain)
    return NormalizedStrip(texture=out, validity=strip.validity)


def occlusion_from_masks(seg: SegmentationResult) -> np.ndarray:
    """Everything outside the segmented annulus counts as occluded."""
    return ~(seg.iris_mask.bits & ~seg.pupil_mask.bits)


def save_strip(strip: NormalizedStrip, base: str | Path) -> tuple[str, str]:
    """Write texture and validity as a paired-PNG set; returns both paths."""
    base = str(base)
    norm_path = base + NORM_SUFFIX
    mask_path = base + MASK_SUFFIX
    save_png(strip.texture, norm_path)
    save_mask_png(BinaryMask(strip.validity), mask_path)
    return norm_path, mask_path


def load_strip(base: str | Path) -> NormalizedStrip:
    """Read a paired-PNG strip written by save_strip."""
    base = str(base)
    texture = load_png(base + NORM_SUFFIX)
    validity = load_mask_png(base + MASK_SUFFIX).bits
    return NormalizedStrip(texture=texture, validity=validity)
