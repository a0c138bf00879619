"""Exact-sequence shape functions on a bounding triangle or box.

Every family is a set of global polynomials in physical coordinates, so the
restriction to a polygon is simply evaluation at points of the polygon.

Triangle sequence of order q::

    P^q  --curl-->  RT^q = (P^{q-1})^2 + x P^{q-1}  --div-->  P^{q-1}

Box sequence of order q::

    Q^{q,q}  --curl-->  Q^{q,q-1} x Q^{q-1,q}  --div-->  Q^{q-1,q-1}

Skeleton traces live on polygon boundaries: a continuous piecewise P^p
family for the temperature trace and a discontinuous piecewise P^{p-1}
family for the normal flux.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import eval_jacobi

from .geometry import BoundingBox, BoundingTriangle, barycentric

H1, HDIV, L2 = "H1", "Hdiv", "L2"
SKELETON_U, SKELETON_QN = "skeleton_u", "skeleton_qn"


class IllConditionedBasis(RuntimeError):
    pass


@dataclass(frozen=True)
class SequenceOrder:
    p: int
    dp: int = 1

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"sequence order p must be >= 1, got {self.p}")
        if self.dp < 0:
            raise ValueError(f"enrichment dp must be >= 0, got {self.dp}")

    @property
    def test_order(self) -> int:
        return self.p + self.dp


@dataclass
class BasisSet:
    """Shape functions evaluated at a set of points.

    ``values`` is ``(m, nf)`` for scalar kinds and ``(m, nf, 2)`` for Hdiv.
    ``grads`` is ``(m, nf, 2)`` (H1 and L2) and ``div`` is ``(m, nf)`` (Hdiv).
    """
    kind: str
    bounding: str
    order: int
    values: np.ndarray
    grads: np.ndarray | None = None
    div: np.ndarray | None = None

    @property
    def count(self) -> int:
        return self.values.shape[1]


@dataclass
class TraceBasis:
    kind: str
    order: int
    n_sides: int
    values: np.ndarray    # (m, nf)

    @property
    def count(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# one-dimensional building blocks

def scaled_legendre(n: int, s, t):
    """Homogenized Legendre polynomials ``t^k P_k(s/t)`` for k = 0..n.

    Returns values and the partial derivatives in ``s`` and ``t``, each of
    shape ``(n + 1,) + s.shape``.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    P = np.zeros((n + 1,) + s.shape)
    Ps = np.zeros_like(P)
    Pt = np.zeros_like(P)
    P[0] = 1.0
    if n >= 1:
        P[1] = s
        Ps[1] = 1.0
    t2 = t * t
    for k in range(1, n):
        a, b = (2 * k + 1) / (k + 1), k / (k + 1)
        P[k + 1] = a * s * P[k] - b * t2 * P[k - 1]
        Ps[k + 1] = a * (P[k] + s * Ps[k]) - b * t2 * Ps[k - 1]
        Pt[k + 1] = a * s * Pt[k] - b * (2 * t * P[k - 1] + t2 * Pt[k - 1])
    return P, Ps, Pt


def scaled_lobatto(n: int, s, t):
    """Homogenized integrated Legendre ``(P_k - t^2 P_{k-2}) / (2k - 1)``, k = 2..n.

    Index ``k`` of the returned arrays holds degree ``k``; entries 0 and 1 are
    unused zeros.
    """
    P, Ps, Pt = scaled_legendre(max(n, 1), s, t)
    t = np.asarray(t, dtype=float)
    L = np.zeros((n + 1,) + np.shape(s))
    Ls = np.zeros_like(L)
    Lt = np.zeros_like(L)
    for k in range(2, n + 1):
        c = 1.0 / (2 * k - 1)
        L[k] = c * (P[k] - t * t * P[k - 2])
        Ls[k] = c * (Ps[k] - t * t * Ps[k - 2])
        Lt[k] = c * (Pt[k] - 2 * t * P[k - 2] - t * t * Pt[k - 2])
    return L, Ls, Lt


def lobatto_1d(n: int, x):
    """Lobatto shape functions on [-1, 1]: (1-x)/2, (1+x)/2, L_2 .. L_n, with derivatives."""
    x = np.asarray(x, dtype=float)
    ones = np.ones_like(x)
    L, Ls, _ = scaled_lobatto(n, x, ones)
    vals = [0.5 * (1 - x), 0.5 * (1 + x)] + [L[k] for k in range(2, n + 1)]
    ders = [-0.5 * ones, 0.5 * ones] + [Ls[k] for k in range(2, n + 1)]
    return np.array(vals), np.array(ders)


def legendre_1d(n: int, x):
    """Legendre P_0 .. P_n on [-1, 1] with derivatives."""
    x = np.asarray(x, dtype=float)
    P, Ps, _ = scaled_legendre(n, x, np.ones_like(x))
    return P, Ps


def _jacobi(n, alpha, x):
    val = eval_jacobi(n, alpha, 0.0, x)
    if n == 0:
        return val, np.zeros_like(x)
    der = 0.5 * (n + alpha + 1) * eval_jacobi(n - 1, alpha + 1, 1.0, x)
    return val, der


# ---------------------------------------------------------------------------
# triangle families

def _barycentrics(tri, points):
    lam = barycentric(tri, points)
    t = np.asarray(tri, dtype=float)
    T = np.column_stack([t[1] - t[0], t[2] - t[0]])
    Tinv = np.linalg.inv(T)
    # grad of lambda_1, lambda_2 are the rows of T^{-1}
    g = np.empty((3, 2))
    g[1:] = Tinv
    g[0] = -Tinv.sum(axis=0)
    return lam, g


def _triangle_vertices(tri):
    if isinstance(tri, BoundingTriangle):
        return tri.vertices
    return np.asarray(tri, dtype=float)


def dubiner(order: int, lam, glam, normalize_area: float | None = None):
    """Dubiner polynomials of total degree <= ``order`` (ordered by degree).

    ``lam`` is ``(m, 3)`` barycentrics, ``glam`` their constant gradients.
    Returns values ``(m, nf)``, gradients ``(m, nf, 2)`` and the list of
    ``(i, j)`` index pairs.  With ``normalize_area`` the family is scaled to be
    L2-orthonormal over a triangle of that area.
    """
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    s, t = l1 - l0, l0 + l1
    gs, gt = glam[1] - glam[0], glam[0] + glam[1]
    P, Ps, Pt = scaled_legendre(order, s, t)
    x = l2 - l0 - l1
    gx = glam[2] - glam[0] - glam[1]
    vals, grads, idx = [], [], []
    for deg in range(order + 1):
        for i in range(deg + 1):
            j = deg - i
            J, dJ = _jacobi(j, 2 * i + 1, x)
            v = P[i] * J
            g = (Ps[i] * J)[:, None] * gs + (Pt[i] * J)[:, None] * gt + (P[i] * dJ)[:, None] * gx
            if normalize_area is not None:
                c = np.sqrt((2 * i + 1) * (i + j + 1) / normalize_area)
                v, g = c * v, c * g
            vals.append(v)
            grads.append(g)
            idx.append((i, j))
    return np.stack(vals, axis=1), np.stack(grads, axis=1), idx


def _tri_area(tri):
    t = np.asarray(tri)
    return 0.5 * abs((t[1, 0] - t[0, 0]) * (t[2, 1] - t[0, 1]) - (t[1, 1] - t[0, 1]) * (t[2, 0] - t[0, 0]))


def eval_h1_triangle(order: int, tri, points) -> BasisSet:
    """Hierarchical H1 family spanning P^order on the triangle.

    Ordering: 3 vertex functions (barycentrics), 3(order-1) edge functions
    (homogenized Lobatto), then (order-1)(order-2)/2 bubbles.  Edge ``k``
    joins vertex ``k`` to vertex ``k+1`` and its functions restrict to
    ``L_i(2t - 1)`` with ``t`` the arclength fraction from vertex ``k``.
    """
    if order < 1:
        raise ValueError(f"H1 order must be >= 1, got {order}")
    tv = _triangle_vertices(tri)
    lam, g = _barycentrics(tv, points)
    m = len(lam)
    vals = [lam[:, 0], lam[:, 1], lam[:, 2]]
    grads = [np.broadcast_to(g[k], (m, 2)) for k in range(3)]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        L, Ls, Lt = scaled_lobatto(order, lam[:, b] - lam[:, a], lam[:, a] + lam[:, b])
        gs, gt = g[b] - g[a], g[a] + g[b]
        for k in range(2, order + 1):
            vals.append(L[k])
            grads.append(Ls[k][:, None] * gs + Lt[k][:, None] * gt)
    if order >= 3:
        bub = lam[:, 0] * lam[:, 1] * lam[:, 2]
        gbub = ((lam[:, 1] * lam[:, 2])[:, None] * g[0] + (lam[:, 0] * lam[:, 2])[:, None] * g[1]
                + (lam[:, 0] * lam[:, 1])[:, None] * g[2])
        D, gD, _ = dubiner(order - 3, lam, g)
        for k in range(D.shape[1]):
            vals.append(bub * D[:, k])
            grads.append(gbub * D[:, k, None] + bub[:, None] * gD[:, k])
    return BasisSet(H1, "triangle", order, np.stack(vals, axis=1), grads=np.stack(grads, axis=1))


def eval_l2_triangle(order: int, tri, points, orthonormal: bool = True) -> BasisSet:
    """Dubiner family spanning P^{order-1}; L2-orthonormal on the triangle by default."""
    if order < 1:
        raise ValueError(f"L2 order must be >= 1, got {order}")
    tv = _triangle_vertices(tri)
    lam, g = _barycentrics(tv, points)
    area = _tri_area(tv) if orthonormal else None
    D, gD, _ = dubiner(order - 1, lam, g, normalize_area=area)
    return BasisSet(L2, "triangle", order, D, grads=gD)


def eval_hdiv_triangle(order: int, tri, points) -> BasisSet:
    """Raviart-Thomas family of dimension order*(order+2).

    ``(P^{q-1})^2`` from Dubiner pairs, completed by ``X * D`` for the Dubiner
    functions of exact degree ``q-1``, with ``X`` the position relative to the
    triangle's centre scaled by its inradius.
    """
    if order < 1:
        raise ValueError(f"Hdiv order must be >= 1, got {order}")
    tv = _triangle_vertices(tri)
    lam, g = _barycentrics(tv, points)
    area = _tri_area(tv)
    D, gD, idx = dubiner(order - 1, lam, g, normalize_area=area)
    m, nd = D.shape
    vals = np.zeros((m, 2 * nd + order, 2))
    div = np.zeros((m, 2 * nd + order))
    vals[:, 0:2 * nd:2, 0] = D
    vals[:, 1:2 * nd:2, 1] = D
    div[:, 0:2 * nd:2] = gD[:, :, 0]
    div[:, 1:2 * nd:2] = gD[:, :, 1]
    center = tv.mean(axis=0)
    R = 2.0 * area / (np.linalg.norm(tv[1] - tv[0]) + np.linalg.norm(tv[2] - tv[1])
                      + np.linalg.norm(tv[0] - tv[2]))
    X = (np.atleast_2d(points) - center) / R
    top = [k for k, (i, j) in enumerate(idx) if i + j == order - 1]
    for c, k in enumerate(top):
        col = 2 * nd + c
        vals[:, col, :] = X * D[:, k, None]
        div[:, col] = 2.0 / R * D[:, k] + np.einsum("mi,mi->m", X, gD[:, k])
    return BasisSet(HDIV, "triangle", order, vals, div=div)


# ---------------------------------------------------------------------------
# box families

def _box_coords(box: BoundingBox, points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    hw = box.half_widths
    return (p - box.center) / hw, hw


def eval_box_sequence(order: int, box: BoundingBox, points, kind: str) -> BasisSet:
    """Tensor-product families Q^{q,q}, Q^{q,q-1} x Q^{q-1,q}, Q^{q-1,q-1}."""
    if order < 1:
        raise ValueError(f"box order must be >= 1, got {order}")
    st, hw = _box_coords(box, points)
    s, t = st[:, 0], st[:, 1]
    if kind == H1:
        A, dA = lobatto_1d(order, s)
        B, dB = lobatto_1d(order, t)
        vals = np.einsum("im,jm->mij", A, B).reshape(len(s), -1)
        gx = np.einsum("im,jm->mij", dA, B).reshape(len(s), -1) / hw[0]
        gy = np.einsum("im,jm->mij", A, dB).reshape(len(s), -1) / hw[1]
        return BasisSet(H1, "box", order, vals, grads=np.stack([gx, gy], axis=-1))
    if kind == L2:
        A, dA = legendre_1d(order - 1, s)
        B, dB = legendre_1d(order - 1, t)
        vals = np.einsum("im,jm->mij", A, B).reshape(len(s), -1)
        gx = np.einsum("im,jm->mij", dA, B).reshape(len(s), -1) / hw[0]
        gy = np.einsum("im,jm->mij", A, dB).reshape(len(s), -1) / hw[1]
        return BasisSet(L2, "box", order, vals, grads=np.stack([gx, gy], axis=-1))
    if kind == HDIV:
        As, dAs = lobatto_1d(order, s)
        Bt, _ = legendre_1d(order - 1, t)
        Ps, _ = legendre_1d(order - 1, s)
        At, dAt = lobatto_1d(order, t)
        m = len(s)
        f1 = np.einsum("im,jm->mij", As, Bt).reshape(m, -1)
        d1 = np.einsum("im,jm->mij", dAs, Bt).reshape(m, -1) / hw[0]
        f2 = np.einsum("im,jm->mij", Ps, At).reshape(m, -1)
        d2 = np.einsum("im,jm->mij", Ps, dAt).reshape(m, -1) / hw[1]
        n1, n2 = f1.shape[1], f2.shape[1]
        vals = np.zeros((m, n1 + n2, 2))
        vals[:, :n1, 0] = f1
        vals[:, n1:, 1] = f2
        return BasisSet(HDIV, "box", order, vals, div=np.hstack([d1, d2]))
    raise ValueError(f"unknown kind {kind!r}")


def eval_sequence(order: int, bounding, points, kind: str) -> BasisSet:
    """Dispatch on the bounding element type."""
    if isinstance(bounding, BoundingBox):
        return eval_box_sequence(order, bounding, points, kind)
    if kind == H1:
        return eval_h1_triangle(order, bounding, points)
    if kind == HDIV:
        return eval_hdiv_triangle(order, bounding, points)
    if kind == L2:
        return eval_l2_triangle(order, bounding, points)
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# skeleton traces

def trace_u_edge(p: int, t) -> np.ndarray:
    """Edge restriction of the continuous trace family in the edge parameter.

    Columns: start vertex (1-t), end vertex (t), then bubbles L_2..L_p(2t-1).
    """
    vals, _ = lobatto_1d(p, 2.0 * np.asarray(t, dtype=float) - 1.0)
    return vals.T


def _legendre_cols(p: int, xi: np.ndarray) -> np.ndarray:
    if p == 0:
        return np.zeros((len(xi), 0))
    return legendre_1d(p - 1, xi)[0].T


def trace_qn_edge(p: int, t) -> np.ndarray:
    """Legendre P_0..P_{p-1}(2t-1): the flux-trace family on one edge."""
    return _legendre_cols(p, 2.0 * np.asarray(t, dtype=float) - 1.0)


def eval_trace(n_sides: int, order: int, kind: str, edge_index, t, signs=None) -> TraceBasis:
    """Evaluate an element's trace family at tagged boundary points.

    ``edge_index[i]`` is the local edge (from vertex k to vertex k+1) holding
    point ``i`` and ``t[i]`` its arclength fraction along the local
    counter-clockwise direction.  ``signs[k] = -1`` means the shared global
    parametrization of edge ``k`` runs the other way; edge bubbles and flux
    functions then follow the global direction so neighbours agree, and flux
    functions pick up the sign so they represent the outward normal flux.

    Local ordering for ``skeleton_u``: n vertex functions then (order-1) bubbles
    per edge.  For ``skeleton_qn``: ``order`` functions per edge.
    """
    edge_index = np.asarray(edge_index, dtype=int)
    t = np.asarray(t, dtype=float)
    signs = np.ones(n_sides, dtype=int) if signs is None else np.asarray(signs, dtype=int)
    m = len(t)
    if kind == SKELETON_U:
        if order < 1:
            raise ValueError(f"skeleton_u order must be >= 1, got {order}")
        vals = np.zeros((m, n_sides * order))
        for k in range(n_sides):
            sel = edge_index == k
            if not np.any(sel):
                continue
            tl = t[sel]
            vals[sel, k] = 1.0 - tl
            vals[sel, (k + 1) % n_sides] += tl
            # reversing the edge negates xi exactly, so both orientations agree bitwise
            xi = signs[k] * (2.0 * tl - 1.0)
            bub = lobatto_1d(order, xi)[0].T[:, 2:]
            start = n_sides + k * (order - 1)
            vals[np.ix_(sel, np.arange(start, start + order - 1))] = bub
        return TraceBasis(kind, order, n_sides, vals)
    if kind == SKELETON_QN:
        if order < 0:
            raise ValueError(f"skeleton_qn order must be >= 0, got {order}")
        vals = np.zeros((m, n_sides * order))
        for k in range(n_sides):
            sel = edge_index == k
            if not np.any(sel):
                continue
            tl = t[sel]
            xi = signs[k] * (2.0 * tl - 1.0)
            cols = np.arange(k * order, (k + 1) * order)
            vals[np.ix_(sel, cols)] = signs[k] * _legendre_cols(order, xi)
        return TraceBasis(kind, order, n_sides, vals)
    raise ValueError(f"unknown trace kind {kind!r}")


# ---------------------------------------------------------------------------
# dimension counts

def dim_h1(q: int, bounding: str = "triangle") -> int:
    return (q + 1) * (q + 2) // 2 if bounding == "triangle" else (q + 1) ** 2


def dim_hdiv(q: int, bounding: str = "triangle") -> int:
    return q * (q + 2) if bounding == "triangle" else 2 * q * (q + 1)


def dim_l2(q: int, bounding: str = "triangle") -> int:
    return q * (q + 1) // 2 if bounding == "triangle" else q * q


def dim_trial(n_sides: int, p: int, bounding: str = "triangle") -> int:
    """Local trial dimension: u, q (two components), trace u, flux trace."""
    return 3 * dim_l2(p, bounding) + n_sides + n_sides * (p - 1) + n_sides * p


def dim_test(p: int, dp: int, bounding: str = "triangle") -> int:
    q = p + dp
    return dim_h1(q, bounding) + dim_hdiv(q, bounding)


def auto_dp(n_sides: int, p: int, bounding: str = "triangle") -> int:
    """Smallest enrichment dp >= 1 whose test space dominates the trial space."""
    need = dim_trial(n_sides, p, bounding)
    dp = 1
    while dim_test(p, dp, bounding) < need:
        dp += 1
    return dp


def check_conditioning(mass: np.ndarray, limit: float = 1e14) -> float:
    """Condition number of a symmetric mass matrix; raises above ``limit``."""
    ev = np.linalg.eigvalsh(0.5 * (mass + mass.T))
    if ev[0] <= 0 or not np.all(np.isfinite(ev)):
        raise IllConditionedBasis("mass matrix is not positive definite")
    cond = float(ev[-1] / ev[0])
    if cond > limit:
        raise IllConditionedBasis(f"mass matrix condition number {cond:.3e} exceeds {limit:.1e}")
    return cond
