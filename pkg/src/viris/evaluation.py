"""Verification-rate and segmentation-accuracy metrics."""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .dataset import SampleId
from .geometry import BinaryMask
from .raster import Raster

DEFAULT_FAR_TARGETS = (0.01, 0.0001)
DEFAULT_DET_POINTS = 100
_DEVIATE_CLIP = 1e-6


class Polarity(enum.Enum):
    """Whether small scores (DISTANCE) or large ones (SIMILARITY) match."""

    DISTANCE = "distance"
    SIMILARITY = "similarity"


@dataclass(frozen=True, eq=False)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    polarity: Polarity = Polarity.DISTANCE

    def __post_init__(self):
        for name in ("genuine", "impostor"):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} scores must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not isinstance(self.polarity, Polarity):
            raise ValueError("polarity must be a Polarity member")


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float


@dataclass(frozen=True)
class TarResult:
    far_target: float
    tar: float
    threshold: float
    resolution_limited: bool


@dataclass(frozen=True)
class DistStats:
    genuine_mean: float
    genuine_std: float
    impostor_mean: float
    impostor_std: float
    dprime: float


@dataclass(frozen=True)
class DetPoint:
    threshold: float
    fmr: float
    fnmr: float


def build_pairs(
    samples: Sequence[SampleId],
) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """All-vs-all pairing: genuine = same subject and eye, impostor =
    different subject.  Same subject, other eye is dropped entirely."""
    genuine: list[tuple[int, int]] = []
    impostor: list[tuple[int, int]] = []
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            a, b = samples[i], samples[j]
            if a.subject_id == b.subject_id:
                if a.eye == b.eye:
                    genuine.append((i, j))
            else:
                impostor.append((i, j))
    return genuine, impostor


def _require_both(scores: ScoreSet) -> None:
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise ValueError("rate computations need both genuine and impostor scores")


def error_rates(scores: ScoreSet, threshold: float) -> tuple[float, float]:
    """(FMR, FNMR) at one threshold under the set's polarity."""
    _require_both(scores)
    g, i = scores.genuine, scores.impostor
    if scores.polarity is Polarity.DISTANCE:
        fmr = float(np.mean(i <= threshold))
        fnmr = float(np.mean(g > threshold))
    else:
        fmr = float(np.mean(i >= threshold))
        fnmr = float(np.mean(g < threshold))
    return fmr, fnmr


def _operating_points(scores: ScoreSet):
    """Thresholds in loosening order with exact (fmr, fnmr) per point.

    The first point is a sentinel strictly outside the score range, so
    the sweep always starts at (fmr, fnmr) = (0, 1).
    """
    g = np.sort(scores.genuine)
    i = np.sort(scores.impostor)
    n_g, n_i = g.size, i.size
    uniq = np.unique(np.concatenate([g, i]))
    if scores.polarity is Polarity.DISTANCE:
        thresholds = np.concatenate([[uniq[0] - 1.0], uniq])
        fmr = np.searchsorted(i, thresholds, side="right") / n_i
        fnmr = 1.0 - np.searchsorted(g, thresholds, side="right") / n_g
    else:
        thresholds = np.concatenate([[uniq[-1] + 1.0], uniq[::-1]])
        fmr = (n_i - np.searchsorted(i, thresholds, side="left")) / n_i
        fnmr = np.searchsorted(g, thresholds, side="left") / n_g
    return thresholds, fmr, fnmr


def eer(scores: ScoreSet) -> EerResult:
    """Equal error rate via linear interpolation at the FMR/FNMR crossing."""
    _require_both(scores)
    t, fmr, fnmr = _operating_points(scores)
    diff = fnmr - fmr
    k = int(np.argmax(diff <= 0.0))
    if diff[k] == 0.0:
        return EerResult(eer=float(fmr[k]), threshold=float(t[k]))
    u = diff[k - 1] / (diff[k - 1] - diff[k])
    rate = fmr[k - 1] + u * (fmr[k] - fmr[k - 1])
    thr = t[k - 1] + u * (t[k] - t[k - 1])
    return EerResult(eer=float(rate), threshold=float(thr))


def tar_at_far(scores: ScoreSet, far_target: float) -> TarResult:
    """TAR at the loosest threshold whose FMR stays within far_target.

    Flags the result when the impostor list is too small to resolve the
    requested rate (far_target below 1/n_impostor).
    """
    _require_both(scores)
    if not 0.0 < far_target < 1.0:
        raise ValueError("far_target must lie in (0, 1)")
    t, fmr, fnmr = _operating_points(scores)
    eligible = np.flatnonzero(fmr <= far_target)
    k = int(eligible[-1])
    return TarResult(
        far_target=far_target,
        tar=float(1.0 - fnmr[k]),
        threshold=float(t[k]),
        resolution_limited=far_target < 1.0 / scores.impostor.size,
    )


def auc(scores: ScoreSet) -> float:
    """Probability a random genuine score beats a random impostor score,
    counting ties as half; rank-sum computation."""
    _require_both(scores)
    g, i = scores.genuine, scores.impostor
    ranks = rankdata(np.concatenate([g, i]))
    u = ranks[: g.size].sum() - g.size * (g.size + 1) / 2.0
    p_greater = u / (g.size * i.size)
    if scores.polarity is Polarity.DISTANCE:
        return float(1.0 - p_greater)
    return float(p_greater)


def dist_stats(scores: ScoreSet) -> DistStats:
    """Population means/stds per side and the d-prime separation index."""
    g, i = scores.genuine, scores.impostor
    if g.size < 2 or i.size < 2:
        raise ValueError("distribution statistics need at least two scores per side")
    gm, gs = float(g.mean()), float(g.std())
    im, istd = float(i.mean()), float(i.std())
    denom = np.sqrt((gs**2 + istd**2) / 2.0)
    if denom == 0.0:
        dp = 0.0 if gm == im else float("inf")
    else:
        dp = abs(gm - im) / denom
    return DistStats(gm, gs, im, istd, float(dp))


def zero_fmr(scores: ScoreSet) -> float:
    """FNMR at the loosest threshold that admits no impostor match."""
    _require_both(scores)
    g, i = scores.genuine, scores.impostor
    if scores.polarity is Polarity.DISTANCE:
        return float(np.mean(g >= i.min()))
    return float(np.mean(g <= i.max()))


def zero_fnmr(scores: ScoreSet) -> float:
    """FMR at the strictest threshold that rejects no genuine match."""
    _require_both(scores)
    g, i = scores.genuine, scores.impostor
    if scores.polarity is Polarity.DISTANCE:
        return float(np.mean(i <= g.max()))
    return float(np.mean(i >= g.min()))


def det_curve(scores: ScoreSet, n_points: int = DEFAULT_DET_POINTS) -> tuple[DetPoint, ...]:
    """Downsampled DET operating points, endpoints kept, EER point added."""
    _require_both(scores)
    if n_points < 2:
        raise ValueError("a DET curve needs at least two points")
    t, fmr, fnmr = _operating_points(scores)
    if t.size > n_points:
        keep = np.unique(np.linspace(0, t.size - 1, n_points).round().astype(int))
    else:
        keep = np.arange(t.size)
    points = [DetPoint(float(t[k]), float(fmr[k]), float(fnmr[k])) for k in keep]
    at = eer(scores)
    marker = DetPoint(at.threshold, at.eer, at.eer)
    if marker not in points:
        pos = bisect.bisect_left([p.fmr for p in points], marker.fmr)
        points.insert(pos, marker)
    return tuple(points)


def normal_deviate(p: float) -> float:
    """Probit transform used for DET axes, clipped away from 0 and 1."""
    return float(ndtri(min(max(p, _DEVIATE_CLIP), 1.0 - _DEVIATE_CLIP)))


@dataclass(frozen=True)
class VerificationReport:
    n_genuine: int
    n_impostor: int
    eer: float
    eer_threshold: float
    tars: tuple[TarResult, ...]
    auc: float
    stats: DistStats
    zero_fmr: float
    zero_fnmr: float
    det: tuple[DetPoint, ...]

    def to_json_dict(self) -> dict:
        return {
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "tar_at_far": [
                {
                    "far_target": t.far_target,
                    "tar": t.tar,
                    "threshold": t.threshold,
                    "resolution_limited": t.resolution_limited,
                }
                for t in self.tars
            ],
            "auc": self.auc,
            "genuine_mean": self.stats.genuine_mean,
            "genuine_std": self.stats.genuine_std,
            "impostor_mean": self.stats.impostor_mean,
            "impostor_std": self.stats.impostor_std,
            "dprime": self.stats.dprime,
            "zero_fmr": self.zero_fmr,
            "zero_fnmr": self.zero_fnmr,
            "det": [
                {"threshold": p.threshold, "fmr": p.fmr, "fnmr": p.fnmr}
                for p in self.det
            ],
        }


def verification_report(
    scores: ScoreSet,
    far_targets: Sequence[float] = DEFAULT_FAR_TARGETS,
    det_points: int = DEFAULT_DET_POINTS,
) -> VerificationReport:
    """One-stop summary of the standard verification metrics."""
    at = eer(scores)
    return VerificationReport(
        n_genuine=int(scores.genuine.size),
        n_impostor=int(scores.impostor.size),
        eer=at.eer,
        eer_threshold=at.threshold,
        tars=tuple(tar_at_far(scores, ft) for ft in far_targets),
        auc=auc(scores),
        stats=dist_stats(scores),
        zero_fmr=zero_fmr(scores),
        zero_fnmr=zero_fnmr(scores),
        det=det_curve(scores, det_points),
    )


def iou_dice(a: BinaryMask, b: BinaryMask) -> tuple[float, float]:
    """Intersection-over-union and Dice overlap; two empty masks agree
    perfectly by convention."""
    if a.bits.shape != b.bits.shape:
        raise ValueError("masks must share a shape")
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    total = int(a.area + b.area)
    if union == 0:
        return 1.0, 1.0
    return inter / union, 2.0 * inter / total


def e1(prob: Raster, gt: BinaryMask) -> float:
    """Mean absolute error between a probability map and a binary truth."""
    p = np.asarray(prob.data)
    if p.ndim != 2:
        raise ValueError("probability map must be single-channel")
    if p.shape != gt.bits.shape:
        raise ValueError("probability map and truth must share a shape")
    return float(np.abs(p - gt.bits.astype(float)).mean())
