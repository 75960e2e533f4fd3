"""Binary iris codes from 1-D log-Gabor phase and their comparison."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import SampleId, TemplateRecord
from .normalize import NormalizedStrip

DEFAULT_WAVELENGTHS = (18.0, 36.0, 72.0)
DEFAULT_SIGMA_RATIO = 0.5
DEFAULT_ROWS = 8
DEFAULT_COLS = 336
DEFAULT_MAX_SHIFT = 14
MIN_BITS_FRACTION = 0.2
FRAGILE_EPS = 1e-6

_POPCOUNT = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint8)
# numpy >= 2 has a popcount ufunc; fall back to the table lookup.
_popcount = getattr(np, "bitwise_count", None) or (lambda x: _POPCOUNT[x])

_SHIFT_GRID: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _shift_grid(cols: int, max_shift: int) -> tuple[np.ndarray, np.ndarray]:
    key = (cols, max_shift)
    cached = _SHIFT_GRID.get(key)
    if cached is None:
        shifts = np.arange(-max_shift, max_shift + 1)
        idx = (np.arange(cols)[None, :] + shifts[:, None]) % cols
        cached = (shifts, idx)
        _SHIFT_GRID[key] = cached
    return cached


class InsufficientOverlapError(ValueError):
    """Raised when no shift leaves enough jointly valid bits to compare."""


@dataclass(frozen=True)
class CodeGrid:
    """Angular/radial resolution of the phase code."""

    rows: int = DEFAULT_ROWS
    cols: int = DEFAULT_COLS

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid dimensions must be positive")


@dataclass(frozen=True, eq=False)
class FilterBank:
    """1-D log-Gabor kernels sampled on the DFT bins of a row of cols."""

    cols: int
    wavelengths: tuple[float, ...] = DEFAULT_WAVELENGTHS
    sigma_ratio: float = DEFAULT_SIGMA_RATIO
    kernels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.sigma_ratio < 1.0:
            raise ValueError("sigma_ratio must lie in (0, 1)")
        waves = tuple(float(w) for w in self.wavelengths)
        if not waves:
            raise ValueError("at least one wavelength required")
        if any(b <= a for a, b in zip(waves, waves[1:])):
            raise ValueError("wavelengths must be strictly increasing")
        if waves[0] < 4.0:
            raise ValueError("shortest wavelength must be at least 4 samples")
        if waves[-1] > self.cols / 2.0:
            raise ValueError("longest wavelength exceeds half the grid width")
        object.__setattr__(self, "wavelengths", waves)
        freqs = np.fft.fftfreq(self.cols)
        kernels = np.stack(
            [log_gabor_gain(freqs, 1.0 / w, self.sigma_ratio) for w in waves]
        )
        kernels.setflags(write=False)
        object.__setattr__(self, "kernels", kernels)

    @property
    def n_filters(self) -> int:
        return len(self.wavelengths)


def log_gabor_gain(f, f0: float, sigma_ratio: float = DEFAULT_SIGMA_RATIO):
    """Gain exp(-ln^2(f/f0) / (2 ln^2 sigma)); zero at f <= 0.

    Only positive frequencies pass, which makes the filtered signal
    analytic, so real/imaginary parts form the quadrature pair.
    """
    if f0 <= 0:
        raise ValueError("center frequency must be positive")
    arr = np.atleast_1d(np.asarray(f, dtype=float))
    out = np.zeros_like(arr)
    pos = arr > 0
    ratio = np.log(arr[pos] / f0)
    out[pos] = np.exp(-(ratio**2) / (2.0 * np.log(sigma_ratio) ** 2))
    return out if np.ndim(f) else float(out[0])


def _resample_periodic(rows: np.ndarray, valid: np.ndarray, cols: int):
    """Linear angular resampling treating each row as circular."""
    w = rows.shape[1]
    x = (np.arange(cols) + 0.5) * (w / cols) - 0.5
    i0 = np.floor(x).astype(int)
    frac = x - i0
    a = rows[:, i0 % w]
    b = rows[:, (i0 + 1) % w]
    tex = a * (1.0 - frac[None, :]) + b * frac[None, :]
    nearest = np.rint(x).astype(int) % w
    return tex, valid[:, nearest]


def encode(
    strip: NormalizedStrip,
    bank: FilterBank | None = None,
    grid: CodeGrid | None = None,
    sample: SampleId | None = None,
) -> TemplateRecord:
    """Phase-quantize band-averaged strip rows into a packed template.

    Each band of strip rows is averaged, resampled to grid.cols, and
    convolved (circularly) with every kernel; the signs of the real and
    imaginary responses become the code bits.  A bit's mask is set when
    the band is majority-valid at that column and the response magnitude
    clears the fragile-bit floor.
    """
    grid = grid if grid is not None else CodeGrid()
    bank = bank if bank is not None else FilterBank(grid.cols)
    if bank.cols != grid.cols:
        raise ValueError("filter bank width must match the code grid")
    tex = np.asarray(strip.texture.data)
    if tex.ndim != 2:
        raise ValueError("encoding expects a single-channel strip")
    h, w = tex.shape
    if h % grid.rows != 0:
        raise ValueError("grid rows must divide the strip height")
    if grid.cols > w:
        raise ValueError("grid cols cannot exceed the strip width")
    if not strip.validity.any():
        raise ValueError("strip has no valid pixels")

    band = h // grid.rows
    bands = tex.reshape(grid.rows, band, w).mean(axis=1)
    band_valid = strip.validity.reshape(grid.rows, band, w).mean(axis=1) >= 0.5
    tex_r, valid_r = _resample_periodic(bands, band_valid, grid.cols)

    spectra = np.fft.fft(tex_r, axis=1)
    resp = np.fft.ifft(
        spectra[:, None, :] * bank.kernels[None, :, :], axis=2
    )  # (rows, n_filters, cols)
    resp = np.transpose(resp, (0, 2, 1))  # (rows, cols, n_filters)

    code = np.stack([resp.real >= 0.0, resp.imag >= 0.0], axis=-1)
    stable = np.abs(resp) >= FRAGILE_EPS
    mask = np.repeat((valid_r[:, :, None] & stable)[..., None], 2, axis=-1)
    return TemplateRecord(
        rows=grid.rows,
        cols=grid.cols,
        n_filters=bank.n_filters,
        code_bits=code.ravel(),
        mask_bits=mask.ravel(),
        sample=sample,
    )


@dataclass(frozen=True)
class MatchScore:
    hd: float
    best_shift: int
    compared_bits: int


def column_shift(rec: TemplateRecord, k: int) -> TemplateRecord:
    """Rotate a template by k columns (output column j reads input j-k)."""
    shape = (rec.rows, rec.cols, 2 * rec.n_filters)
    code = np.roll(rec.code_bits.reshape(shape), k, axis=1)
    mask = np.roll(rec.mask_bits.reshape(shape), k, axis=1)
    return TemplateRecord(
        rows=rec.rows,
        cols=rec.cols,
        n_filters=rec.n_filters,
        code_bits=code.ravel(),
        mask_bits=mask.ravel(),
        sample=rec.sample,
    )


def _pack_columns(bits: np.ndarray, rows: int, cols: int, nf: int) -> np.ndarray:
    per_col = bits.reshape(rows, cols, 2 * nf).transpose(1, 0, 2).reshape(cols, -1)
    return np.packbits(per_col, axis=1)


def _packed(rec: TemplateRecord) -> tuple[np.ndarray, np.ndarray]:
    # Safe to memoize: the record is frozen and its bit arrays read-only.
    cached = rec.__dict__.get("_packed_columns")
    if cached is None:
        cached = (
            _pack_columns(rec.code_bits, rec.rows, rec.cols, rec.n_filters),
            _pack_columns(rec.mask_bits, rec.rows, rec.cols, rec.n_filters),
        )
        object.__setattr__(rec, "_packed_columns", cached)
    return cached


def match(
    a: TemplateRecord,
    b: TemplateRecord,
    max_shift: int = DEFAULT_MAX_SHIFT,
    min_bits_fraction: float = MIN_BITS_FRACTION,
) -> MatchScore:
    """Masked fractional Hamming distance, minimized over column shifts.

    Shifts run over [-max_shift, max_shift]; ties prefer the smaller
    |shift|, then the negative one.  A shift only competes when the
    jointly valid bit count reaches min_bits_fraction of the template.
    """
    if (a.rows, a.cols, a.n_filters) != (b.rows, b.cols, b.n_filters):
        raise ValueError("templates have mismatched dimensions")
    if max_shift < 0:
        raise ValueError("max_shift must be non-negative")

    ap, am = _packed(a)
    bp, bm = _packed(b)

    shifts, idx = _shift_grid(a.cols, max_shift)
    joint = am[None, :, :] & bm[idx]
    diff = (ap[None, :, :] ^ bp[idx]) & joint
    bits = _popcount(joint).sum(axis=(1, 2), dtype=np.int64)
    errs = _popcount(diff).sum(axis=(1, 2), dtype=np.int64)

    min_bits = min_bits_fraction * a.n_bits
    eligible = bits >= min_bits
    if not eligible.any():
        raise InsufficientOverlapError(
            f"no shift reaches {min_bits:.0f} jointly valid bits "
            f"(best {int(bits.max())})"
        )
    hd = np.where(eligible, errs / np.maximum(bits, 1), np.inf)
    best_hd = hd.min()
    candidates = np.flatnonzero(hd == best_hd)
    order = min(candidates, key=lambda i: (abs(int(shifts[i])), shifts[i] >= 0))
    return MatchScore(
        hd=float(best_hd),
        best_shift=int(shifts[order]),
        compared_bits=int(bits[order]),
    )
