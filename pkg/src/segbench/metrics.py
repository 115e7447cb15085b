"""Overlap and boundary-distance metrics for binary segmentation.

Conventions for degenerate masks:

* both masks empty: Dice = IoU = 1.0
* empty ground truth: sensitivity undefined (``None``)
* either mask empty: HD95 and MSD undefined (``None``)

Undefined values are skipped when averaging and counted separately.

Distances are in pixels. Boundaries are 4-connected inner boundaries, with
pixels on the image edge counted as boundary. HD95 is the nearest-rank 95th
percentile of the pooled bidirectional boundary distances.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .data import BinaryMask, ProbMask
from .edt import squared_edt
from .errors import DimensionMismatch, EmptyBoundary, EmptyInput

MaskLike = Union[BinaryMask, np.ndarray]
METRIC_NAMES = ("dice", "iou", "sensitivity", "hd95", "msd")


def _bits(m: MaskLike) -> np.ndarray:
    if isinstance(m, BinaryMask):
        return m.bits
    return np.asarray(m, dtype=bool)


def _pair(pred: MaskLike, gt: MaskLike) -> tuple[np.ndarray, np.ndarray]:
    p, g = _bits(pred), _bits(gt)
    if p.shape != g.shape:
        raise DimensionMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    return p, g


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: MaskLike, gt: MaskLike) -> ConfusionCounts:
    p, g = _pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _dice(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def _iou(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def _sensitivity(c: ConfusionCounts) -> Optional[float]:
    denom = c.tp + c.fn
    return None if denom == 0 else c.tp / denom


def dice(pred: MaskLike, gt: MaskLike) -> float:
    return _dice(confusion(pred, gt))


def iou(pred: MaskLike, gt: MaskLike) -> float:
    return _iou(confusion(pred, gt))


def sensitivity(pred: MaskLike, gt: MaskLike) -> Optional[float]:
    return _sensitivity(confusion(pred, gt))


def boundary_map(mask: MaskLike) -> np.ndarray:
    """Boolean image of foreground pixels with a 4-neighbour outside the mask or image."""
    m = _bits(mask)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def boundary(mask: MaskLike) -> list[tuple[int, int]]:
    rows, cols = np.nonzero(boundary_map(mask))
    return list(zip(rows.tolist(), cols.tolist()))


def _directed(points: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Distances from each point to its nearest target point, via an exact EDT."""
    lo = np.minimum(points.min(axis=0), target.min(axis=0))
    hi = np.maximum(points.max(axis=0), target.max(axis=0))
    canvas = np.zeros(tuple(hi - lo + 1), dtype=bool)
    t = target - lo
    canvas[t[:, 0], t[:, 1]] = True
    sq = squared_edt(canvas)
    p = points - lo
    return np.sqrt(sq[p[:, 0], p[:, 1]].astype(np.float64))


def surface_distances(a: Sequence[tuple[int, int]], b: Sequence[tuple[int, int]]) -> np.ndarray:
    """Pooled distances {d(p, b) : p in a} followed by {d(q, a) : q in b}."""
    pa = np.asarray(a, dtype=np.int64).reshape(-1, 2)
    pb = np.asarray(b, dtype=np.int64).reshape(-1, 2)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyBoundary("surface distances need two nonempty boundaries")
    return np.concatenate([_directed(pa, pb), _directed(pb, pa)])


def percentile_nearest_rank(values: np.ndarray, pct: int) -> float:
    """Nearest-rank percentile: the value at 1-based rank ceil(pct * n / 100)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if n == 0:
        raise EmptyInput("percentile of an empty set")
    rank = max(1, -(-pct * n // 100))
    return float(v[rank - 1])


def _pooled(pred: MaskLike, gt: MaskLike) -> Optional[np.ndarray]:
    p, g = _pair(pred, gt)
    if not p.any() or not g.any():
        return None
    return surface_distances(boundary(p), boundary(g))


def hd95(pred: MaskLike, gt: MaskLike) -> Optional[float]:
    d = _pooled(pred, gt)
    return None if d is None else percentile_nearest_rank(d, 95)


def hausdorff(pred: MaskLike, gt: MaskLike) -> Optional[float]:
    d = _pooled(pred, gt)
    return None if d is None else float(d.max())


def msd(pred: MaskLike, gt: MaskLike) -> Optional[float]:
    d = _pooled(pred, gt)
    return None if d is None else math.fsum(d.tolist()) / len(d)


@dataclass(frozen=True)
class FrameMetrics:
    dice: float
    iou: float
    sensitivity: Optional[float]
    hd95: Optional[float]
    msd: Optional[float]

    def as_dict(self) -> dict:
        return asdict(self)


def metrics_from_masks(pred: MaskLike, gt: MaskLike) -> FrameMetrics:
    c = confusion(pred, gt)
    d = _pooled(pred, gt)
    return FrameMetrics(
        dice=_dice(c),
        iou=_iou(c),
        sensitivity=_sensitivity(c),
        hd95=None if d is None else percentile_nearest_rank(d, 95),
        msd=None if d is None else math.fsum(d.tolist()) / len(d),
    )


def evaluate_frame(prob: Union[ProbMask, np.ndarray], gt: MaskLike, tau: float = 0.5) -> FrameMetrics:
    if not (0.0 < tau < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    probs = prob.probs if isinstance(prob, ProbMask) else np.asarray(prob, dtype=np.float64)
    g = _bits(gt)
    if probs.shape != g.shape:
        raise DimensionMismatch(f"prediction {probs.shape} vs ground truth {g.shape}")
    return metrics_from_masks(probs >= tau, g)


@dataclass(frozen=True)
class SummaryMetrics:
    dice: Optional[float]
    iou: Optional[float]
    sensitivity: Optional[float]
    hd95: Optional[float]
    msd: Optional[float]
    n_frames: int
    undefined: dict = field(default_factory=dict)

    def get(self, name: str) -> Optional[float]:
        return getattr(self, name)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SummaryMetrics":
        return cls(**{k: d.get(k) for k in (*METRIC_NAMES, "n_frames")},
                   undefined=dict(d.get("undefined", {})))


def aggregate(frames: Iterable[FrameMetrics]) -> SummaryMetrics:
    frames = list(frames)
    if not frames:
        raise EmptyInput("cannot aggregate zero frames")
    means = {}
    undefined = {}
    for name in METRIC_NAMES:
        vals = [getattr(f, name) for f in frames if getattr(f, name) is not None]
        undefined[name] = len(frames) - len(vals)
        means[name] = math.fsum(vals) / len(vals) if vals else None
    return SummaryMetrics(**means, n_frames=len(frames), undefined=undefined)
