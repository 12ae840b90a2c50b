"""Planar geometry helpers: convex polygons, oriented rectangles, polylines.

All polygons are convex with counter-clockwise vertex order, stored as
``(n, 2)`` float64 arrays. Point queries are vectorized over ``(m, 2)``.
"""
from __future__ import annotations

import math

import numba
import numpy as np


def rect(x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    """Axis-aligned rectangle as a CCW polygon."""
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def obb_corners(x: float, y: float, heading: float, half_length: float, half_width: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    fwd = np.array([c, s]) * half_length
    left = np.array([-s, c]) * half_width
    center = np.array([x, y])
    # CCW: rear-right, front-right, front-left, rear-left
    return np.stack([center - fwd - left, center + fwd - left, center + fwd + left, center - fwd + left])


@numba.njit(cache=True)
def _points_in_convex(points, poly):
    m = points.shape[0]
    n = poly.shape[0]
    out = np.ones(m, dtype=np.bool_)
    for j in range(m):
        px = points[j, 0]
        py = points[j, 1]
        for i in range(n):
            ax = poly[i, 0]
            ay = poly[i, 1]
            bx = poly[(i + 1) % n, 0]
            by = poly[(i + 1) % n, 1]
            if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < 0.0:
                out[j] = False
                break
    return out


def points_in_convex(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside (or on the boundary of) a CCW convex polygon."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    return _points_in_convex(pts, np.ascontiguousarray(poly, dtype=np.float64))


def points_in_any(points: np.ndarray, polys) -> np.ndarray:
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    mask = np.zeros(len(points), dtype=bool)
    for poly in polys:
        mask |= _points_in_convex(points, poly)
    return mask


@numba.njit(cache=True)
def _separated(a, b, axis_poly):
    n = axis_poly.shape[0]
    for i in range(n):
        ex = axis_poly[(i + 1) % n, 0] - axis_poly[i, 0]
        ey = axis_poly[(i + 1) % n, 1] - axis_poly[i, 1]
        nx, ny = -ey, ex
        amin = np.inf
        amax = -np.inf
        for k in range(a.shape[0]):
            p = a[k, 0] * nx + a[k, 1] * ny
            amin = min(amin, p)
            amax = max(amax, p)
        bmin = np.inf
        bmax = -np.inf
        for k in range(b.shape[0]):
            p = b[k, 0] * nx + b[k, 1] * ny
            bmin = min(bmin, p)
            bmax = max(bmax, p)
        if amax < bmin or bmax < amin:
            return True
    return False


@numba.njit(cache=True)
def _convex_overlap(a, b):
    return not (_separated(a, b, a) or _separated(a, b, b))


def convex_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons; touching counts as overlap."""
    return bool(_convex_overlap(np.ascontiguousarray(a, dtype=np.float64), np.ascontiguousarray(b, dtype=np.float64)))


@numba.njit(cache=True)
def _polyline_distance(points, polyline):
    m = points.shape[0]
    out = np.full(m, np.inf)
    for i in range(polyline.shape[0] - 1):
        ax = polyline[i, 0]
        ay = polyline[i, 1]
        abx = polyline[i + 1, 0] - ax
        aby = polyline[i + 1, 1] - ay
        denom = abx * abx + aby * aby
        for j in range(m):
            apx = points[j, 0] - ax
            apy = points[j, 1] - ay
            t = 0.0
            if denom > 0.0:
                t = (apx * abx + apy * aby) / denom
                t = min(max(t, 0.0), 1.0)
            dx = apx - t * abx
            dy = apy - t * aby
            d = math.sqrt(dx * dx + dy * dy)
            if d < out[j]:
                out[j] = d
    return out


def polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the nearest segment of a polyline."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    return _polyline_distance(pts, np.ascontiguousarray(polyline, dtype=np.float64))


def polyline_length(polyline: np.ndarray) -> float:
    return float(np.sum(np.hypot(*np.diff(polyline, axis=0).T)))


def polyline_project(point: np.ndarray, polyline: np.ndarray) -> float:
    """Arc-length coordinate of the closest point on the polyline."""
    best_d, best_s, acc = np.inf, 0.0, 0.0
    for i in range(len(polyline) - 1):
        a = polyline[i]
        ab = polyline[i + 1] - a
        seg = math.hypot(ab[0], ab[1])
        t = 0.0 if seg == 0 else min(max(float((point - a) @ ab) / (seg * seg), 0.0), 1.0)
        d = math.hypot(*(a + t * ab - point))
        if d < best_d:
            best_d, best_s = d, acc + t * seg
        acc += seg
    return best_s


def polyline_point_at(polyline: np.ndarray, s: float) -> np.ndarray:
    """Point at arc length ``s`` (clamped to the polyline ends)."""
    acc = 0.0
    for i in range(len(polyline) - 1):
        a, b = polyline[i], polyline[i + 1]
        seg = math.hypot(*(b - a))
        if acc + seg >= s and seg > 0:
            return a + (b - a) * ((s - acc) / seg)
        acc += seg
    return polyline[-1].copy()


def rigid_transform(points: np.ndarray, angle: float, offset) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return np.atleast_2d(points) @ rot.T + np.asarray(offset, dtype=np.float64)


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi
