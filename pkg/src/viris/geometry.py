"""Ellipse geometry, mask utilities and regression-target encodings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SDT_CLIP_PX = 16.0
SOFT_BOUNDARY_SIGMA = 1.5


class EllipseFitError(ValueError):
    """Raised when a point set does not determine an ellipse."""


@dataclass(frozen=True)
class Ellipse:
    """Centre (cx, cy), semi-axes (rx, ry) and rotation of the rx axis.

    Instances are canonicalized on construction: rx >= ry and angle folded
    into [0, pi) (axes swap adds pi/2).  A circle's angle is fixed at 0.
    ``angle`` is radians from +x towards +y; orientation is only meaningful
    modulo pi.
    """

    cx: float
    cy: float
    rx: float
    ry: float
    angle: float = 0.0

    def __post_init__(self):
        if self.rx <= 0 or self.ry <= 0:
            raise ValueError("ellipse semi-axes must be positive")
        for v in (self.cx, self.cy, self.rx, self.ry, self.angle):
            if not math.isfinite(v):
                raise ValueError("ellipse parameters must be finite")
        rx, ry, ang = self.rx, self.ry, self.angle
        if ry > rx:
            rx, ry = ry, rx
            ang += 0.5 * math.pi
        # near-equal axes: orientation is numerically meaningless
        ang = 0.0 if rx - ry <= 1e-9 * rx else ang % math.pi
        object.__setattr__(self, "rx", float(rx))
        object.__setattr__(self, "ry", float(ry))
        object.__setattr__(self, "angle", float(ang))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))

    @property
    def mean_radius(self) -> float:
        return 0.5 * (self.rx + self.ry)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean raster, True = foreground, row-major (h, w)."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ValueError("mask must be 2-D")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("mask must have at least one pixel")
        arr = arr.astype(bool).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


def encode_ellipse(e: Ellipse, w: int, h: int) -> np.ndarray:
    """Six-component vector (cx/W, cy/H, rx/W, ry/H, sin a, cos a)."""
    if w <= 0 or h <= 0:
        raise ValueError("frame size must be positive")
    return np.array(
        [
            e.cx / w,
            e.cy / h,
            e.rx / w,
            e.ry / h,
            math.sin(e.angle),
            math.cos(e.angle),
        ]
    )


def decode_ellipse(vec: np.ndarray, w: int, h: int) -> Ellipse:
    """Inverse of :func:`encode_ellipse`; renormalises the (sin, cos) pair."""
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (6,):
        raise ValueError("ellipse vector must have six components")
    if w <= 0 or h <= 0:
        raise ValueError("frame size must be positive")
    s, c = v[4], v[5]
    norm = math.hypot(s, c)
    if norm < 1e-12:
        raise ValueError("degenerate orientation encoding")
    ang = math.atan2(s / norm, c / norm) % math.pi
    return Ellipse(cx=v[0] * w, cy=v[1] * h, rx=v[2] * w, ry=v[3] * h, angle=ang)


def _conic_to_ellipse(coeffs: np.ndarray) -> tuple[float, float, float, float, float]:
    """Geometric parameters (cx, cy, rmaj, rmin, angle) of an ellipse conic."""
    a, b, c, d, e, f = coeffs
    den = b * b - 4.0 * a * c
    if not den < 0.0:
        raise EllipseFitError("conic is not an ellipse")
    cx = (2.0 * c * d - b * e) / den
    cy = (2.0 * a * e - b * d) / den
    # Constant term after translating to the centre.
    mu = a * cx * cx + b * cx * cy + c * cy * cy + d * cx + e * cy + f
    q = np.array([[a, b / 2.0], [b / 2.0, c]])
    lam, vecs = np.linalg.eigh(q)
    if mu > 0.0:
        lam = -lam[::-1]
        vecs = vecs[:, ::-1]
        mu = -mu
    if not (lam > 0.0).all() or not mu < 0.0:
        raise EllipseFitError("degenerate conic")
    rmaj = math.sqrt(-mu / lam[0])
    rmin = math.sqrt(-mu / lam[1])
    ang = math.atan2(vecs[1, 0], vecs[0, 0])
    return cx, cy, rmaj, rmin, ang


def fit_ellipse_lsq(points: np.ndarray) -> Ellipse:
    """Direct least-squares ellipse fit (Halir-Flusser formulation).

    ``points`` is (n, 2) as (x, y), n >= 6.  Coordinates are shifted to
    their centroid and scaled isotropically before solving; the constrained
    eigenproblem guarantees an ellipse when one exists.  Raises
    :class:`EllipseFitError` for degenerate configurations (too few points,
    collinear, coincident, hyperbolic).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise EllipseFitError("points must be (n, 2)")
    if pts.shape[0] < 6:
        raise EllipseFitError("ellipse fit needs at least six points")
    if not np.isfinite(pts).all():
        raise EllipseFitError("points must be finite")

    mx, my = pts.mean(axis=0)
    u = pts[:, 0] - mx
    v = pts[:, 1] - my
    scale = math.sqrt(float(np.mean(u * u + v * v)) / 2.0)
    if scale < 1e-12:
        raise EllipseFitError("points are coincident")
    u /= scale
    v /= scale

    d1 = np.column_stack([u * u, u * v, v * v])
    d2 = np.column_stack([u, v, np.ones_like(u)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise EllipseFitError("degenerate point configuration") from exc
    m = s1 + s2 @ t
    # Apply inv(C1) for the constraint matrix C1 = [[0,0,2],[0,-1,0],[2,0,0]].
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    eigval, eigvec = np.linalg.eig(m)
    cond = 4.0 * eigvec[0] * eigvec[2] - eigvec[1] ** 2
    valid = np.isreal(eigval) & (np.real(cond) > 0)
    if not valid.any():
        raise EllipseFitError("no ellipse satisfies the fit constraint")
    a1 = np.real(eigvec[:, int(np.argmax(valid))])
    a2 = t @ a1
    coeffs = np.concatenate([a1, a2])

    try:
        cx_n, cy_n, rmaj, rmin, ang = _conic_to_ellipse(coeffs)
    except EllipseFitError:
        raise
    return Ellipse(
        cx=mx + scale * cx_n,
        cy=my + scale * cy_n,
        rx=scale * rmaj,
        ry=scale * rmin,
        angle=ang,
    )


def ellipse_boundary_points(e: Ellipse, n: int = 360) -> np.ndarray:
    """(n, 2) points (x, y) sampled uniformly in parametric angle."""
    if n < 1:
        raise ValueError("need at least one point")
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    ca, sa = math.cos(e.angle), math.sin(e.angle)
    x = e.cx + e.rx * np.cos(t) * ca - e.ry * np.sin(t) * sa
    y = e.cy + e.rx * np.cos(t) * sa + e.ry * np.sin(t) * ca
    return np.column_stack([x, y])


def radius_at_angle(e: Ellipse, theta: np.ndarray | float) -> np.ndarray | float:
    """Centre-to-boundary distance along direction ``theta`` (image frame)."""
    phi = np.asarray(theta, dtype=np.float64) - e.angle
    r = (e.rx * e.ry) / np.sqrt(
        (e.ry * np.cos(phi)) ** 2 + (e.rx * np.sin(phi)) ** 2
    )
    if np.isscalar(theta):
        return float(r)
    return r


def point_in_ellipse(e: Ellipse, x: float, y: float) -> bool:
    u = x - e.cx
    v = y - e.cy
    ca, sa = math.cos(e.angle), math.sin(e.angle)
    p = u * ca + v * sa
    q = -u * sa + v * ca
    return (p / e.rx) ** 2 + (q / e.ry) ** 2 <= 1.0


def rasterize_ellipse(e: Ellipse, w: int, h: int) -> BinaryMask:
    """Filled mask over a w x h frame; a pixel is set when its centre is inside."""
    if w <= 0 or h <= 0:
        raise ValueError("frame size must be positive")
    ys, xs = np.mgrid[0:h, 0:w]
    u = xs - e.cx
    v = ys - e.cy
    ca, sa = math.cos(e.angle), math.sin(e.angle)
    p = u * ca + v * sa
    q = -u * sa + v * ca
    inside = (p / e.rx) ** 2 + (q / e.ry) ** 2 <= 1.0
    return BinaryMask(inside)


def boundary_mask(mask: BinaryMask) -> BinaryMask:
    """Foreground pixels with a 4-neighbour background; outside counts as background."""
    m = mask.bits
    padded = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    nb_all = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return BinaryMask(m & ~nb_all)


def mask_to_boundary_points(mask: BinaryMask) -> np.ndarray:
    """(n, 2) boundary pixel centres as (x, y), in row-major scan order."""
    if not mask.bits.any():
        raise ValueError("mask has no foreground")
    rows, cols = np.nonzero(boundary_mask(mask).bits)
    return np.column_stack([cols, rows]).astype(np.float64)


def mask_to_edge_points(mask: BinaryMask) -> np.ndarray:
    """(n, 2) subpixel boundary samples as (x, y).

    One point per foreground/background 4-neighbour edge, at the midpoint
    of the two pixel centres; the frame border counts as background.
    Boundary pixel centres sit half a pixel inside the true curve, which
    biases a least-squares fit inward; edge midpoints do not.
    """
    m = mask.bits
    if not m.any():
        raise ValueError("mask has no foreground")
    h, w = m.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    pts = []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = padded[1 + dy : h + 1 + dy, 1 + dx : w + 1 + dx]
        rows, cols = np.nonzero(m & ~nb)
        pts.append(np.column_stack([cols + dx * 0.5, rows + dy * 0.5]))
    return np.concatenate(pts, axis=0)


def signed_distance_transform(mask: BinaryMask, clip_radius: float = SDT_CLIP_PX) -> np.ndarray:
    """Signed distance to the mask boundary, clipped and scaled to [-1, 1].

    Positive inside the mask, negative outside, zero on boundary pixels.
    Distances are Euclidean, clipped at ``clip_radius`` px and divided by it.
    """
    if clip_radius <= 0:
        raise ValueError("clip radius must be positive")
    if mask.bits.all() or not mask.bits.any():
        raise ValueError("mask must contain both foreground and background")
    boundary = boundary_mask(mask).bits
    dist = ndimage.distance_transform_edt(~boundary)
    sign = np.where(mask.bits, 1.0, -1.0)
    return sign * np.minimum(dist, clip_radius) / clip_radius


def soft_boundary(mask: BinaryMask, sigma: float = SOFT_BOUNDARY_SIGMA) -> np.ndarray:
    """Gaussian-blurred boundary indicator rescaled to peak 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not mask.bits.any():
        raise ValueError("mask has no foreground")
    b = boundary_mask(mask).bits.astype(np.float64)
    g = ndimage.gaussian_filter(b, sigma=sigma, mode="constant")
    return np.clip(g / g.max(), 0.0, 1.0)


def containment_check(
    pupil: Ellipse, iris: Ellipse, margin: float = 0.0
) -> tuple[bool, float]:
    """Whether the pupil ellipse lies inside the iris ellipse.

    The pupil boundary is sampled at 256 angles; every sample must fall
    inside the iris shrunk by ``margin`` px on both semi-axes.  The second
    return value is the rasterized pupil-minus-iris area in px^2 against
    the unshrunk iris.
    """
    pts = ellipse_boundary_points(pupil, 256)
    if margin >= iris.ry:
        contained = False
    else:
        inner = Ellipse(iris.cx, iris.cy, iris.rx - margin, iris.ry - margin, iris.angle)
        ca, sa = math.cos(inner.angle), math.sin(inner.angle)
        u = pts[:, 0] - inner.cx
        v = pts[:, 1] - inner.cy
        p = u * ca + v * sa
        q = -u * sa + v * ca
        val = (p / inner.rx) ** 2 + (q / inner.ry) ** 2
        contained = bool((val <= 1.0 + 1e-12).all())

    # Violation area on an integer grid covering the pupil.
    x0 = math.floor(pupil.cx - pupil.rx) - 1
    x1 = math.ceil(pupil.cx + pupil.rx) + 1
    y0 = math.floor(pupil.cy - pupil.rx) - 1
    y1 = math.ceil(pupil.cy + pupil.rx) + 1
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]

    def _inside(e: Ellipse) -> np.ndarray:
        ca, sa = math.cos(e.angle), math.sin(e.angle)
        u = xs - e.cx
        v = ys - e.cy
        p = u * ca + v * sa
        q = -u * sa + v * ca
        return (p / e.rx) ** 2 + (q / e.ry) ** 2 <= 1.0

    violation = float(np.sum(_inside(pupil) & ~_inside(iris)))
    return contained, violation
