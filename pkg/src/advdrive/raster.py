"""Scanline rasterization kernels for the ego-centric observation grid.

Shapes arrive already expressed in (forward, right) meters relative to the
agent. Row ``i`` has forward coordinate ``(n - i - 0.5) * cell``; column ``j``
has rightward coordinate ``(j - n/2 + 0.5) * cell``.
"""
from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _fill_row(mask, row, lo, hi, n, cell):
    if lo > hi:
        return
    off = n / 2.0 - 0.5
    c0 = math.ceil(lo / cell + off)
    c1 = math.floor(hi / cell + off)
    if c0 < 0:
        c0 = 0
    if c1 > n - 1:
        c1 = n - 1
    for c in range(int(c0), int(c1) + 1):
        mask[row, c] = True


@numba.njit(cache=True)
def fill_convex(mask, polys, cell):
    """OR convex polygons ``(m, k, 2)`` into ``mask``; repeated vertices are allowed."""
    n = mask.shape[0]
    view_f = n * cell
    view_r = n * cell / 2.0
    for p in range(polys.shape[0]):
        k = polys.shape[1]
        fmin = polys[p, 0, 0]
        fmax = fmin
        rmin = polys[p, 0, 1]
        rmax = rmin
        for v in range(1, k):
            fmin = min(fmin, polys[p, v, 0])
            fmax = max(fmax, polys[p, v, 0])
            rmin = min(rmin, polys[p, v, 1])
            rmax = max(rmax, polys[p, v, 1])
        if fmax < 0.0 or fmin > view_f or rmax < -view_r or rmin > view_r:
            continue
        for row in range(n):
            f = (n - row - 0.5) * cell
            if f < fmin or f > fmax:
                continue
            lo = np.inf
            hi = -np.inf
            for v in range(k):
                af = polys[p, v, 0]
                ar = polys[p, v, 1]
                bf = polys[p, (v + 1) % k, 0]
                br = polys[p, (v + 1) % k, 1]
                df = bf - af
                if df == 0.0:
                    continue
                t = (f - af) / df
                if t < 0.0 or t > 1.0:
                    continue
                r = ar + t * (br - ar)
                lo = min(lo, r)
                hi = max(hi, r)
            _fill_row(mask, row, lo, hi, n, cell)


@numba.njit(cache=True)
def fill_discs(mask, centers, radius, cell):
    n = mask.shape[0]
    for p in range(centers.shape[0]):
        cf = centers[p, 0]
        cr = centers[p, 1]
        for row in range(n):
            f = (n - row - 0.5) * cell
            d2 = radius * radius - (f - cf) * (f - cf)
            if d2 < 0.0:
                continue
            half = math.sqrt(d2)
            _fill_row(mask, row, cr - half, cr + half, n, cell)


def capsule_rects(polyline: np.ndarray, radius: float) -> np.ndarray:
    """One rectangle (4, 2) per non-degenerate polyline segment, inflated by ``radius``."""
    a = polyline[:-1]
    d = polyline[1:] - a
    length = np.hypot(d[:, 0], d[:, 1])
    keep = length > 0
    a, d, length = a[keep], d[keep], length[keep]
    nrm = np.stack([-d[:, 1], d[:, 0]], axis=1) * (radius / length)[:, None]
    b = a + d
    return np.stack([a + nrm, b + nrm, b - nrm, a - nrm], axis=1)


def pad_stack(polys) -> np.ndarray:
    """Stack convex polygons to (m, k, 2), padding by repeating the first vertex."""
    k = max(len(p) for p in polys)
    return np.stack([np.vstack([p, np.repeat(p[:1], k - len(p), axis=0)]) for p in polys])
