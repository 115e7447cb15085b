"""Data-efficiency analysis: retention index, learning-curve area, log-scaling fits."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DegenerateInput, DivisionByZero, MissingFraction, TooShort, UndefinedInput
from .metrics import METRIC_NAMES, SummaryMetrics

HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"
ORIENTATION = {
    "dice": HIGHER_BETTER,
    "iou": HIGHER_BETTER,
    "sensitivity": HIGHER_BETTER,
    "hd95": LOWER_BETTER,
    "msd": LOWER_BETTER,
}


def _defined(x) -> bool:
    return x is not None and math.isfinite(x)


def retention_index(m_full: Optional[float], m_starved: Optional[float], orientation: str) -> float:
    """Fraction of full-data performance kept under starvation (1.0 = all of it).

    Higher-is-better metrics use starved/full, lower-is-better ones full/starved,
    so degradation always gives a value below 1.
    """
    if orientation not in (HIGHER_BETTER, LOWER_BETTER):
        raise ValueError(f"unknown orientation {orientation!r}")
    if not (_defined(m_full) and _defined(m_starved)):
        raise UndefinedInput("retention index needs two defined values")
    num, den = (m_starved, m_full) if orientation == HIGHER_BETTER else (m_full, m_starved)
    if den == 0:
        raise DivisionByZero("retention index denominator is zero")
    if orientation == LOWER_BETTER and (m_full < 0 or m_starved < 0):
        raise UndefinedInput("distance metrics must be non-negative")
    return num / den


def alc(curve: Sequence[float]) -> float:
    """Trapezoidal area under a per-epoch curve, divided by (epochs - 1)."""
    v = [float(x) for x in curve]
    if len(v) < 2:
        raise TooShort("ALC needs at least two epochs")
    if not all(math.isfinite(x) for x in v):
        raise UndefinedInput("learning curve contains non-finite values")
    # exact rational arithmetic so constant and linear curves come out exact
    q = [Fraction(x) for x in v]
    area = sum(q[1:-1], Fraction(0)) + (q[0] + q[-1]) / 2
    return float(area / (len(v) - 1))


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float
    n: int

    def predict(self, param_count: float) -> float:
        return self.slope * math.log(param_count) + self.intercept


def log_slope_fit(points: Iterable[tuple[float, float]]) -> ScalingFit:
    """Least-squares fit of metric = a * ln(param_count) + b."""
    pts = [(float(p), float(m)) for p, m in points]
    if len(pts) < 2:
        raise DegenerateInput("need at least two points")
    if any(p <= 0 for p, _ in pts):
        raise DegenerateInput("parameter counts must be positive")
    if len({p for p, _ in pts}) < 2:
        raise DegenerateInput("need at least two distinct parameter counts")
    x = np.log([p for p, _ in pts])
    y = np.array([m for _, m in pts])
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = math.fsum(dx * dx)
    a = math.fsum(dx * dy) / sxx
    b = ym - a * xm
    resid = y - (a * x + b)
    ss_res = math.fsum(resid * resid)
    ss_tot = math.fsum(dy * dy)
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return ScalingFit(float(a), float(b), r2, len(pts))


@dataclass(frozen=True)
class EfficiencyRecord:
    method: str
    param_count: int
    resolution: int
    fraction: float
    metrics: SummaryMetrics

    def __post_init__(self):
        if self.param_count <= 0:
            raise ValueError("param_count must be positive")
        if not (0.0 < self.fraction <= 1.0):
            raise ValueError("fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "param_count": self.param_count,
            "resolution": self.resolution,
            "fraction": self.fraction,
            "metrics": self.metrics.as_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EfficiencyRecord":
        return cls(d["method"], int(d["param_count"]), int(d["resolution"]),
                   float(d["fraction"]), SummaryMetrics.from_dict(d["metrics"]))


def _index(records: Iterable[EfficiencyRecord]) -> dict:
    idx = {}
    for r in records:
        key = (r.method, r.resolution, r.fraction)
        if key in idx:
            raise ValueError(f"duplicate efficiency record {key}")
        idx[key] = r
    return idx


def retention_table(records: Iterable[EfficiencyRecord], full: float = 1.0,
                    starved: float = 0.25, resolution: Optional[int] = None) -> list[dict]:
    """One row per (method, resolution) with an orientation-aware RI per metric.

    A metric whose value is undefined at either fraction gets ``None``.
    """
    idx = _index(records)
    keys = sorted({(m, res) for m, res, _ in idx if resolution is None or res == resolution})
    rows = []
    for method, res in keys:
        try:
            rf, rs = idx[(method, res, full)], idx[(method, res, starved)]
        except KeyError:
            have = sorted(f for m, r, f in idx if (m, r) == (method, res))
            raise MissingFraction(f"{method}@{res}: need fractions {full} and {starved}, have {have}") from None
        row = {"method": method, "resolution": res}
        for name in METRIC_NAMES:
            try:
                row[name] = retention_index(rf.metrics.get(name), rs.metrics.get(name), ORIENTATION[name])
            except (UndefinedInput, DivisionByZero):
                row[name] = None
        rows.append(row)
    return rows


def build_records(store) -> tuple[list[EfficiencyRecord], list[dict]]:
    """Normalize a results store (records or their dicts) and derive the RI table."""
    records = [r if isinstance(r, EfficiencyRecord) else EfficiencyRecord.from_dict(r) for r in store]
    return records, retention_table(records)


def scaling_points(records: Iterable[EfficiencyRecord], metric: str = "dice",
                   fraction: float = 1.0, resolution: Optional[int] = None) -> list[tuple[int, float]]:
    pts = []
    for r in records:
        if r.fraction != fraction or (resolution is not None and r.resolution != resolution):
            continue
        v = r.metrics.get(metric)
        if _defined(v):
            pts.append((r.param_count, v))
    return sorted(pts)


def table_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                    for c in columns])
    return buf.getvalue()


def fit_to_json(fit: ScalingFit) -> str:
    return json.dumps({"slope": fit.slope, "intercept": fit.intercept,
                       "r_squared": fit.r_squared, "n": fit.n}, indent=1)
