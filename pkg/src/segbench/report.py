"""Comparison tables and SVG figures built from efficiency records.

Table layout: one row per method, one column per (metric, resolution), e.g.
``dice_224``. The ``best`` column lists, separated by ``;``, every column in
which the row holds the best value (max for overlap metrics, min for
distances). Exact ties flag every tied row.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .efficiency import HIGHER_BETTER, ORIENTATION, EfficiencyRecord, log_slope_fit  # noqa: E402
from .errors import EmptyInput, InsufficientData  # noqa: E402
from .metrics import METRIC_NAMES  # noqa: E402

# deterministic SVG output: no creation date, fixed id salt
plt.rcParams["svg.hashsalt"] = "segbench"
SVG_METADATA = {"Date": None, "Creator": None}


def _columns(resolutions: Sequence[int]) -> list[str]:
    return [f"{m}_{r}" for m in METRIC_NAMES for r in resolutions]


def report_table(records: Iterable[EfficiencyRecord], fraction: float = 1.0) -> str:
    recs = [r for r in records if r.fraction == fraction]
    if not recs:
        raise EmptyInput("no records to tabulate")
    methods = list(dict.fromkeys(r.method for r in recs))
    resolutions = sorted({r.resolution for r in recs})
    values = {(r.method, f"{m}_{r.resolution}"): r.metrics.get(m) for r in recs for m in METRIC_NAMES}
    cols = _columns(resolutions)
    best = {m: [] for m in methods}
    for col in cols:
        metric = col.rsplit("_", 1)[0]
        present = [(m, values.get((m, col))) for m in methods]
        present = [(m, v) for m, v in present if v is not None and math.isfinite(v)]
        if not present:
            continue
        pick = max if ORIENTATION[metric] == HIGHER_BETTER else min
        target = pick(v for _, v in present)
        for m, v in present:
            if v == target:
                best[m].append(col)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *cols, "best"])
    for m in methods:
        cells = []
        for col in cols:
            v = values.get((m, col))
            cells.append("" if v is None else repr(float(v)))
        w.writerow([m, *cells, ";".join(best[m])])
    return buf.getvalue()


def parse_table(text: str) -> tuple[dict, dict]:
    """Inverse of :func:`report_table`: ({method: {column: value}}, {method: [best columns]})."""
    values, best = {}, {}
    for row in csv.DictReader(io.StringIO(text)):
        m = row.pop("method")
        flags = row.pop("best")
        values[m] = {k: (None if v == "" else float(v)) for k, v in row.items()}
        best[m] = [c for c in flags.split(";") if c]
    return values, best


def _save(fig, path: Optional[Path]) -> None:
    if path is not None:
        fig.savefig(path, format="svg", metadata=SVG_METADATA)


def plot_scaling(records: Iterable[EfficiencyRecord], metric: str = "dice", families: Optional[dict] = None,
                 path: Optional[Path] = None):
    """Metric vs parameter count (log axis) with one fitted a*ln(p)+b curve per family.

    ``families`` maps method -> family name; by default each method is its own family.
    Returns (figure, {family: ScalingFit}).
    """
    families = families or {}
    groups: dict[str, list] = {}
    for r in records:
        if r.fraction != 1.0:
            continue
        v = r.metrics.get(metric)
        if v is not None and math.isfinite(v):
            groups.setdefault(families.get(r.method, r.method), []).append((r.param_count, v, r.method))
    fittable = {k: pts for k, pts in groups.items() if len({p for p, _, _ in pts}) >= 2}
    if not fittable:
        raise InsufficientData("scaling plot needs a family with two distinct parameter counts")
    fig, ax = plt.subplots(figsize=(5, 4))
    fits = {}
    for name in sorted(groups):
        pts = sorted(groups[name])
        x = [p for p, _, _ in pts]
        y = [v for _, v, _ in pts]
        ax.scatter(x, y, label=name)
        if name in fittable:
            fit = log_slope_fit([(p, v) for p, v, _ in pts])
            fits[name] = fit
            xs = np.geomspace(min(x), max(x), 50)
            ax.plot(xs, [fit.predict(p) for p in xs],
                    label=f"{name}: a={fit.slope:.4g}, R²={fit.r_squared:.3f}")
    ax.set_xscale("log")
    ax.set_xlabel("parameters")
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
    return fig, fits


def plot_starvation(records: Iterable[EfficiencyRecord], metric: str = "dice", path: Optional[Path] = None):
    groups: dict[str, list] = {}
    for r in records:
        v = r.metrics.get(metric)
        if v is not None and math.isfinite(v):
            groups.setdefault(f"{r.method}@{r.resolution}", []).append((r.fraction, v))
    groups = {k: sorted(v, reverse=True) for k, v in groups.items() if len(v) >= 2}
    if not groups:
        raise InsufficientData("starvation plot needs a method with at least two fractions")
    fig, ax = plt.subplots(figsize=(5, 4))
    for name in sorted(groups):
        pts = groups[name]
        ax.plot([100 * f for f, _ in pts], [v for _, v in pts], marker="o", label=name)
    ax.invert_xaxis()
    ax.set_xlabel("training data (%)")
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
    return fig


def plot_alc(entries: Iterable[dict], path: Optional[Path] = None):
    """Paired ALC markers per architecture; each entry has method, param_count, resolution, alc."""
    groups: dict[str, list] = {}
    for e in entries:
        if e.get("alc") is not None:
            groups.setdefault(e["method"], []).append((e["resolution"], e["param_count"], e["alc"]))
    if not groups:
        raise InsufficientData("ALC plot needs at least one run with an ALC value")
    fig, ax = plt.subplots(figsize=(5, 4))
    for name in sorted(groups):
        pts = sorted(groups[name])
        ax.plot([p for _, p, _ in pts], [a for _, _, a in pts], linestyle=":", marker="o", label=name)
        for res, p, a in pts:
            ax.annotate(str(res), (p, a), fontsize=6)
    ax.set_xscale("log")
    ax.set_xlabel("parameters")
    ax.set_ylabel("ALC")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
    return fig


def report_plots(records: Sequence[EfficiencyRecord], out_dir, alc_entries: Sequence[dict] = (),
                 metric: str = "dice") -> dict[str, Path]:
    """Write every plot the records support; raises InsufficientData if none."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, fn in (
        ("scaling", lambda p: plot_scaling(records, metric, path=p)),
        ("starvation", lambda p: plot_starvation(records, metric, path=p)),
        ("alc", lambda p: plot_alc(alc_entries, path=p)),
    ):
        path = out / f"{name}.svg"
        try:
            res = fn(path)
        except InsufficientData:
            continue
        plt.close(res[0] if isinstance(res, tuple) else res)
        written[name] = path
    if not written:
        raise InsufficientData("records support none of the plots")
    return written
