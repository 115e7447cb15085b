"""Exact 2-D Euclidean distance transform.

Two-pass separable algorithm: a column sweep gives each pixel its vertical
distance to the nearest feature in the same column, then each row takes the
lower envelope of parabolas (Felzenszwalb & Huttenlocher) over those values.
All arithmetic stays on integers, so squared distances are exact.
"""

from __future__ import annotations

import numpy as np

INF = np.iinfo(np.int64).max // 4


def _column_distances(features: np.ndarray) -> np.ndarray:
    h, w = features.shape
    big = h + w + 1
    g = np.empty((h, w), dtype=np.int64)
    g[0] = np.where(features[0], 0, big)
    for r in range(1, h):
        g[r] = np.where(features[r], 0, g[r - 1] + 1)
    for r in range(h - 2, -1, -1):
        np.minimum(g[r], g[r + 1] + 1, out=g[r])
    g = np.where(g >= big, -1, g)
    return g


def _envelope_1d(f: list[int], n: int) -> list[int]:
    """Squared distance lower envelope for one line; f[q] < 0 marks 'no feature'."""
    sites = [q for q in range(n) if f[q] >= 0]
    out = [INF] * n
    if not sites:
        return out
    v = [0] * len(sites)   # parabola apex positions
    z = [0.0] * (len(sites) + 1)  # envelope breakpoints
    k = 0
    v[0] = sites[0]
    z[0] = -np.inf
    z[1] = np.inf
    for q in sites[1:]:
        fq = f[q] * f[q] + q * q
        while True:
            p = v[k]
            s = (fq - (f[p] * f[p] + p * p)) / (2 * (q - p))
            # z[0] is -inf, so k never drops below 0
            if s <= z[k]:
                k -= 1
                continue
            break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for x in range(n):
        while z[k + 1] < x:
            k += 1
        p = v[k]
        out[x] = (x - p) * (x - p) + f[p] * f[p]
    return out


def squared_edt(features: np.ndarray) -> np.ndarray:
    """Squared distance from every pixel to the nearest True pixel.

    Pixels get ``INF`` when ``features`` has no True pixel at all.
    """
    features = np.asarray(features, dtype=bool)
    if features.ndim != 2:
        raise ValueError("features must be 2-D")
    h, w = features.shape
    if not features.any():
        return np.full((h, w), INF, dtype=np.int64)
    g = _column_distances(features)
    out = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        out[r] = _envelope_1d(g[r].tolist(), w)
    return out


def edt(features: np.ndarray) -> np.ndarray:
    return np.sqrt(squared_edt(features).astype(np.float64))
