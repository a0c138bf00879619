"""Polygon primitives: area, centroid, diameter, bounding shapes, triangulation.

Polygons are passed around as ``(n, 2)`` float arrays with counter-clockwise
vertex order.  :class:`Polygon` wraps such an array after validation and
caches the derived quantities that assembly needs over and over.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class InvalidPolygon(ValueError):
    """Raised for degenerate, clockwise or self-intersecting polygons."""


def signed_area(vertices) -> float:
    """Shoelace area; positive for counter-clockwise orientation."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect(p1, p2, q1, q2, tol):
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and (
        (d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)
    ):
        return True

    def on_segment(a, b, c, d):
        if abs(d) > tol:
            return False
        return (min(a[0], b[0]) - 1e-15 <= c[0] <= max(a[0], b[0]) + 1e-15
                and min(a[1], b[1]) - 1e-15 <= c[1] <= max(a[1], b[1]) + 1e-15)

    return (on_segment(q1, q2, p1, d1) or on_segment(q1, q2, p2, d2)
            or on_segment(p1, p2, q1, d3) or on_segment(p1, p2, q2, d4))


def is_simple(vertices) -> bool:
    """True when no two non-adjacent edges touch and no edge folds back."""
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    if n < 3:
        return False
    scale = float(np.max(np.ptp(v, axis=0))) or 1.0
    tol = 1e-13 * scale * scale
    for i in range(n):
        a, b, c = v[i - 1], v[i], v[(i + 1) % n]
        # consecutive edges running back along each other
        if abs(_cross(a, b, c)) <= tol and np.dot(b - a, c - b) < 0:
            return False
    for i in range(n):
        p1, p2 = v[i], v[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(p1, p2, v[j], v[(j + 1) % n], tol):
                return False
    return True


def validate_polygon(vertices) -> np.ndarray:
    """Check the polygon invariants and return the vertices as an array."""
    v = np.array(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise InvalidPolygon("a polygon needs at least 3 two-dimensional vertices")
    if not np.all(np.isfinite(v)):
        raise InvalidPolygon("non-finite vertex coordinates")
    diam = diameter(v)
    if diam == 0.0:
        raise InvalidPolygon("all vertices coincide")
    gaps = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
    if np.any(gaps <= 1e-14 * diam):
        raise InvalidPolygon("consecutive vertices coincide")
    if signed_area(v) <= 0.0:
        raise InvalidPolygon("polygon is degenerate or clockwise")
    if not is_simple(v):
        raise InvalidPolygon("polygon is self-intersecting")
    return v


def polygon_centroid(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    # shift for accuracy on far-from-origin polygons
    o = v[0]
    w = v - o
    x, y = w[:, 0], w[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = 0.5 * cr.sum()
    if a <= 0.0:
        raise InvalidPolygon("centroid of a degenerate polygon")
    cx = np.sum((x + xn) * cr) / (6.0 * a)
    cy = np.sum((y + yn) * cr) / (6.0 * a)
    return np.array([cx, cy]) + o


def diameter(vertices) -> float:
    """Largest pairwise vertex distance."""
    v = np.asarray(vertices, dtype=float)
    d = v[:, None, :] - v[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", d, d))))


def is_convex(vertices, rtol: float = 1e-12) -> bool:
    """Convexity test that tolerates collinear (hanging) vertices."""
    v = np.asarray(vertices, dtype=float)
    e1 = v - np.roll(v, 1, axis=0)
    e2 = np.roll(v, -1, axis=0) - v
    cr = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    return bool(np.all(cr >= -rtol * scale))


def corner_mask(vertices, rtol: float = 1e-10) -> np.ndarray:
    """Boolean mask of vertices where the boundary actually turns."""
    v = np.asarray(vertices, dtype=float)
    e1 = v - np.roll(v, 1, axis=0)
    e2 = np.roll(v, -1, axis=0) - v
    cr = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    dot = np.einsum("ij,ij->i", e1, e2)
    return (np.abs(cr) > rtol * scale) | (dot < 0)


@dataclass(frozen=True)
class BoundingTriangle:
    vertices: np.ndarray   # (3, 2), counter-clockwise
    center: np.ndarray
    r_max: float

    @property
    def side(self) -> float:
        return 2.0 * np.sqrt(3.0) * self.r_max

    @property
    def diameter(self) -> float:
        return self.side

    def barycentric(self, points) -> np.ndarray:
        """Barycentric coordinates of ``points`` (shape ``(m, 3)``)."""
        return barycentric(self.vertices, points)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        return np.all(self.barycentric(points) >= -tol, axis=1)


@dataclass(frozen=True)
class BoundingBox:
    lower: np.ndarray
    upper: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        p = np.atleast_2d(points)
        span = float(np.max(self.upper - self.lower))
        return np.all((p >= self.lower - tol * span) & (p <= self.upper + tol * span), axis=1)


def barycentric(tri, points) -> np.ndarray:
    t = np.asarray(tri, dtype=float)
    p = np.atleast_2d(np.asarray(points, dtype=float))
    T = np.column_stack([t[1] - t[0], t[2] - t[0]])
    l12 = np.linalg.solve(T, (p - t[0]).T).T
    return np.column_stack([1.0 - l12.sum(axis=1), l12])


def bounding_triangle(vertices) -> BoundingTriangle:
    """Equilateral triangle whose incircle is centred at the polygon centroid.

    The incircle passes through the vertex furthest from the centroid and that
    vertex is the midpoint of one triangle edge.  Ties go to the lowest index.
    """
    v = np.asarray(vertices, dtype=float)
    c = polygon_centroid(v)
    dist = np.linalg.norm(v - c, axis=1)
    dmax = dist.max()
    if dmax == 0.0:
        raise InvalidPolygon("all vertices coincide with the centroid")
    far = int(np.flatnonzero(dist >= dmax * (1.0 - 1e-12))[0])
    r = float(dist[far])
    phi0 = np.arctan2(*(v[far] - c)[::-1])
    # edge midpoints sit at c + r*u_k; the opposite vertices at c - 2r*u_k
    phis = phi0 + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
    u = np.column_stack([np.cos(phis), np.sin(phis)])
    tri = c - 2.0 * r * u
    if signed_area(tri) < 0:
        tri = tri[::-1]
    return BoundingTriangle(vertices=tri, center=c, r_max=r)


def bounding_box(vertices) -> BoundingBox:
    v = np.asarray(vertices, dtype=float)
    return BoundingBox(lower=v.min(axis=0), upper=v.max(axis=0))


def _triangle_area(a, b, c) -> float:
    return 0.5 * _cross(a, b, c)


def ear_clip(vertices) -> list[tuple[int, int, int]]:
    """Ear-clipping triangulation of a simple CCW polygon (index triples).

    Collinear vertices are dropped first; they do not change the region.
    """
    v = np.asarray(vertices, dtype=float)
    idx = [int(i) for i in np.flatnonzero(corner_mask(v))]
    scale = diameter(v) ** 2
    tris: list[tuple[int, int, int]] = []
    guard = 0
    while len(idx) > 3:
        n = len(idx)
        for k in range(n):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % n]
            a, b, c = v[i0], v[i1], v[i2]
            if _triangle_area(a, b, c) <= 1e-14 * scale:
                continue
            ear = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = v[j]
                if (_cross(a, b, p) >= 0 and _cross(b, c, p) >= 0
                        and _cross(c, a, p) >= 0):
                    ear = False
                    break
            if ear:
                tris.append((i0, i1, i2))
                idx.pop(k)
                break
        else:
            raise InvalidPolygon("ear clipping found no ear; polygon is not simple")
        guard += 1
        if guard > len(v) ** 2:
            raise InvalidPolygon("ear clipping did not terminate")
    tris.append(tuple(idx))
    return tris


def fan_triangulate(vertices) -> np.ndarray:
    """Split a simple polygon into triangles, returned as ``(t, 3, 2)``.

    The centroid fan is used whenever every fan triangle is positively
    oriented; otherwise the polygon is ear-clipped.
    """
    v = np.asarray(vertices, dtype=float)
    if not is_simple(v):
        raise InvalidPolygon("cannot triangulate a self-intersecting polygon")
    c = polygon_centroid(v)
    nxt = np.roll(v, -1, axis=0)
    areas = 0.5 * ((v[:, 0] - c[0]) * (nxt[:, 1] - c[1])
                   - (v[:, 1] - c[1]) * (nxt[:, 0] - c[0]))
    if np.all(areas > 1e-12 * diameter(v) ** 2):
        tris = np.empty((len(v), 3, 2))
        tris[:, 0] = c
        tris[:, 1] = v
        tris[:, 2] = nxt
        return tris
    return np.array([[v[i], v[j], v[k]] for i, j, k in ear_clip(v)])


class Polygon:
    """Validated CCW polygon with cached geometric quantities."""

    def __init__(self, vertices, validate: bool = True):
        self.vertices = validate_polygon(vertices) if validate else np.asarray(vertices, float)

    def __len__(self):
        return len(self.vertices)

    def __repr__(self):
        return f"Polygon(n={len(self)}, area={self.area:.6g})"

    @cached_property
    def area(self) -> float:
        return signed_area(self.vertices)

    @cached_property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.vertices)

    @cached_property
    def diameter(self) -> float:
        return diameter(self.vertices)

    @cached_property
    def bounding_triangle(self) -> BoundingTriangle:
        return bounding_triangle(self.vertices)

    @cached_property
    def bounding_box(self) -> BoundingBox:
        return bounding_box(self.vertices)

    @cached_property
    def triangles(self) -> np.ndarray:
        return fan_triangulate(self.vertices)

    def is_convex(self) -> bool:
        return is_convex(self.vertices)


def centroid(poly) -> np.ndarray:
    v = poly.vertices if isinstance(poly, Polygon) else poly
    return polygon_centroid(validate_polygon(v))
