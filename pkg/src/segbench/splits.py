"""Patient-level stratified splits and nested data-starvation subsets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import PATHOLOGIES, DatasetManifest
from .errors import BadFraction, BadRatios, TooFewPatients

PARTS = ("train", "val", "test")


def seeded_shuffle(items: Iterable[str], rng: np.random.Generator) -> list[str]:
    """Fisher-Yates over the lexicographically sorted items."""
    out = sorted(items)
    for i in range(len(out) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def _largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    raw = [r * total for r in ratios]
    counts = [math.floor(x + 1e-9) for x in raw]
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[: total - sum(counts)]:
        counts[k] += 1
    return counts


def _allocate(stratum_sizes: Sequence[int], ratios: Sequence[float]) -> list[list[int]]:
    """Per-stratum part sizes, each within one patient of ratio * stratum size.

    Every part gets floor(r * n_s) patients per stratum; the leftover patients
    of each stratum go one-per-part toward the parts furthest below their
    global (largest-remainder) target.
    """
    targets = _largest_remainder(sum(stratum_sizes), ratios)
    alloc = []
    for n in stratum_sizes:
        alloc.append([math.floor(r * n + 1e-9) for r in ratios])
    need = [targets[p] - sum(a[p] for a in alloc) for p in range(len(ratios))]
    for s, n in enumerate(stratum_sizes):
        extra = n - sum(alloc[s])
        frac = [ratios[p] * n - alloc[s][p] for p in range(len(ratios))]
        order = sorted(range(len(ratios)), key=lambda p: (-need[p], -frac[p], p))
        for p in order[:extra]:
            alloc[s][p] += 1
            need[p] -= 1
    return alloc


@dataclass(frozen=True)
class Split:
    train: frozenset
    val: frozenset
    test: frozenset
    seed: int
    ratios: tuple[float, float, float]

    def part(self, name: str) -> frozenset:
        return getattr(self, name)

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "ratios": list(self.ratios),
            **{p: sorted(self.part(p)) for p in PARTS},
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Split":
        d = json.loads(text)
        return cls(*(frozenset(d[p]) for p in PARTS), d["seed"], tuple(d["ratios"]))


def stratified_split(manifest: DatasetManifest, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> Split:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative values summing to 1, got {ratios}")
    strata = {}
    for pid in manifest.patients:
        strata.setdefault(manifest.pathology_of(pid), []).append(pid)
    present = [s for s in PATHOLOGIES if s in strata]
    for s in present:
        if len(strata[s]) < 3:
            raise TooFewPatients(f"stratum {s!r} has {len(strata[s])} patients, need at least 3")
    if not present:
        raise TooFewPatients("manifest has no patients")
    rng = np.random.default_rng(seed)
    alloc = _allocate([len(strata[s]) for s in present], ratios)
    parts = {p: set() for p in PARTS}
    for s, sizes in zip(present, alloc):
        order = seeded_shuffle(strata[s], rng)
        start = 0
        for p, k in zip(PARTS, sizes):
            parts[p].update(order[start:start + k])
            start += k
    return Split(*(frozenset(parts[p]) for p in PARTS), seed=seed, ratios=ratios)


def starvation_size(fraction: float, n: int) -> int:
    """floor(f * n), with f = 1 giving n exactly."""
    if fraction == 1.0:
        return n
    return math.floor(fraction * n + 1e-9)


@dataclass(frozen=True)
class StarvationLadder:
    fractions: tuple[float, ...]
    subsets: dict
    seed: int

    def subset(self, fraction: float) -> frozenset:
        return self.subsets[fraction]

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "fractions": list(self.fractions),
            "subsets": {repr(f): sorted(self.subsets[f]) for f in self.fractions},
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "StarvationLadder":
        d = json.loads(text)
        fr = tuple(float(f) for f in d["fractions"])
        return cls(fr, {f: frozenset(d["subsets"][repr(f)]) for f in fr}, d["seed"])


def starve(train_patients: Iterable[str], fractions=(1.0, 0.75, 0.5, 0.25), seed: int = 0) -> StarvationLadder:
    """Nested subsets: one seeded shuffle, then a prefix per fraction."""
    fractions = tuple(sorted({float(f) for f in fractions}, reverse=True))
    if not fractions or any(not (0.0 < f <= 1.0) for f in fractions):
        raise BadFraction(f"fractions must lie in (0, 1], got {fractions}")
    if 1.0 not in fractions:
        raise BadFraction("fractions must include 1.0")
    order = seeded_shuffle(train_patients, np.random.default_rng(seed))
    subsets = {}
    for f in fractions:
        k = starvation_size(f, len(order))
        if k == 0:
            raise BadFraction(f"fraction {f} leaves no patients out of {len(order)}")
        subsets[f] = frozenset(order[:k])
    return StarvationLadder(fractions, subsets, seed)
