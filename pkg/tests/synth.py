"""Synthetic eye imagery with known geometry.

Scene model: dark pupil disk, mid-grey iris annulus carrying a
band-limited angular texture (the identity), bright sclera.  Noise and
blur are applied frame-wide, in that order, so blur degrades measured
sharpness the way defocus would.  The texture rotates rigidly via the
``rotation`` parameter, which keeps rubber-sheet equivariance exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from viris.geometry import BinaryMask, Ellipse, rasterize_ellipse
from viris.raster import Raster
from viris.segment import SegmentationResult, SegSource

PUPIL_LEVEL = 0.005
IRIS_LEVEL = 0.10
SCLERA_LEVEL = 0.88
TEXTURE_RMS = 0.03
GATE_NOISE_SIGMA = 0.07


@dataclass(frozen=True)
class IrisPattern:
    """Angular harmonic mix; amplitudes normalized to a target RMS."""

    orders: np.ndarray
    amps: np.ndarray
    phases: np.ndarray

    def value(self, theta: np.ndarray) -> np.ndarray:
        out = np.zeros_like(theta, dtype=float)
        for k, a, ph in zip(self.orders, self.amps, self.phases):
            out += a * np.cos(k * theta + ph)
        return out


def random_pattern(
    rng: np.random.Generator,
    n_components: int = 24,
    order_range: tuple[int, int] = (6, 40),
    rms: float = TEXTURE_RMS,
) -> IrisPattern:
    orders = rng.integers(order_range[0], order_range[1] + 1, n_components)
    amps = rng.uniform(0.3, 1.0, n_components)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_components)
    amps = amps * (rms / np.sqrt(np.sum(amps**2) / 2.0))
    return IrisPattern(orders, amps, phases)


@dataclass(frozen=True)
class SyntheticEye:
    image: Raster
    gray: Raster
    iris: Ellipse
    pupil: Ellipse
    iris_mask: BinaryMask
    pupil_mask: BinaryMask


def render_eye(
    pattern: IrisPattern,
    *,
    width: int = 640,
    height: int = 480,
    cx: float | None = None,
    cy: float | None = None,
    r_iris: float = 160.0,
    ratio: float = 0.45,
    rotation: float = 0.0,
    noise_sigma: float = GATE_NOISE_SIGMA,
    blur_sigma: float = 0.0,
    noise_rng: np.random.Generator | None = None,
    rgb: bool = True,
    pupil_dx: float = 0.0,
) -> SyntheticEye:
    cx = width / 2.0 if cx is None else cx
    cy = height / 2.0 if cy is None else cy
    r_pupil = ratio * r_iris
    yy, xx = np.mgrid[0:height, 0:width]
    dx, dy = xx - cx, yy - cy
    rr = np.hypot(dx, dy)
    rr_pupil = np.hypot(xx - (cx + pupil_dx), yy - cy)
    theta = np.arctan2(dy, dx) - rotation

    iris_val = IRIS_LEVEL + pattern.value(theta)
    edge = 1.5
    w_iris = np.clip((rr_pupil - (r_pupil - edge)) / (2.0 * edge), 0.0, 1.0)
    w_sclera = np.clip((rr - (r_iris - edge)) / (2.0 * edge), 0.0, 1.0)
    base = PUPIL_LEVEL + (iris_val - PUPIL_LEVEL) * w_iris
    base = base + (SCLERA_LEVEL - base) * w_sclera

    if noise_sigma > 0.0:
        rng = noise_rng if noise_rng is not None else np.random.default_rng(0)
        base = base + rng.normal(0.0, noise_sigma, base.shape)
    if blur_sigma > 0.0:
        base = ndimage.gaussian_filter(base, blur_sigma)
    base = np.clip(base, 0.0, 1.0)

    pixels = np.repeat(base[..., None], 3, axis=2) if rgb else base
    gray = Raster(base)
    iris_e = Ellipse(cx, cy, r_iris, r_iris, 0.0)
    pupil_e = Ellipse(cx + pupil_dx, cy, r_pupil, r_pupil, 0.0)
    return SyntheticEye(
        image=Raster(pixels),
        gray=gray,
        iris=iris_e,
        pupil=pupil_e,
        iris_mask=rasterize_ellipse(iris_e, width, height),
        pupil_mask=rasterize_ellipse(pupil_e, width, height),
    )


def seg_result(eye: SyntheticEye) -> SegmentationResult:
    """Ground-truth segmentation for a rendered eye."""
    return SegmentationResult(
        iris_mask=eye.iris_mask,
        pupil_mask=eye.pupil_mask,
        iris=eye.iris,
        pupil=eye.pupil,
        source=SegSource.EXTERNAL_MASK,
    )
