"""Gauss rules on segments, triangles (collapsed coordinates) and polygons."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .geometry import fan_triangulate


class DegenerateDomain(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray    # (m, 2), or (m,) parameters for 1D rules
    weights: np.ndarray   # (m,)
    degree: int
    params: np.ndarray | None = None   # edge parameter t in [0, 1] for edge rules

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def __len__(self):
        return len(self.weights)


def _npoints(degree: int) -> int:
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    return degree // 2 + 1


@lru_cache(maxsize=64)
def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n``-point Gauss-Legendre rule on [0, 1]."""
    x, w = roots_legendre(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=64)
def reference_triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed tensor rule on (0,0)-(1,0)-(0,1), exact up to ``degree``.

    Gauss-Jacobi(1, 0) in the collapsed direction absorbs the Duffy Jacobian.
    """
    n = _npoints(degree)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    u = 0.5 * (xj + 1.0)
    t = 0.5 * (xl + 1.0)
    x = np.repeat(u, n)
    y = np.outer(1.0 - u, t).ravel()
    w = np.outer(wj, wl).ravel() / 8.0
    pts = np.column_stack([x, y])
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def triangle_rule(tri, degree: int) -> QuadratureRule:
    t = np.asarray(tri, dtype=float)
    J = np.column_stack([t[1] - t[0], t[2] - t[0]])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    scale = max(np.sum((t[1] - t[0]) ** 2), np.sum((t[2] - t[0]) ** 2), 1e-300)
    if abs(det) <= 1e-14 * scale:
        raise DegenerateDomain("degenerate triangle")
    ref_pts, ref_w = reference_triangle_rule(degree)
    return QuadratureRule(points=t[0] + ref_pts @ J.T, weights=ref_w * abs(det), degree=degree)


@lru_cache(maxsize=4096)
def _polygon_rule_cached(key: tuple, degree: int) -> QuadratureRule:
    verts = np.array(key, dtype=float).reshape(-1, 2)
    rules = [triangle_rule(tri, degree) for tri in fan_triangulate(verts)]
    pts = np.vstack([r.points for r in rules])
    w = np.concatenate([r.weights for r in rules])
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(points=pts, weights=w, degree=degree)


def polygon_rule(vertices, degree: int) -> QuadratureRule:
    """Concatenated triangle rules over the polygon's triangulation."""
    v = np.asarray(vertices, dtype=float)
    return _polygon_rule_cached(tuple(v.ravel().tolist()), int(degree))


def edge_rule(a, b, degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on the segment ``a -> b``; ``params`` holds t in [0, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.linalg.norm(b - a))
    if length == 0.0:
        raise DegenerateDomain("zero-length edge")
    t, w = gauss_legendre_01(_npoints(degree))
    pts = a + np.outer(t, b - a)
    return QuadratureRule(points=pts, weights=w * length, degree=degree, params=np.array(t))
