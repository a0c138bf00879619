"""Element DPG algebra and global skeleton assembly.

Local unknowns are ordered ``[u | q_x | q_y | u_hat | qn_hat]``; test
functions are ``[v | tau]``.  The element bilinear form is

    b(u, q, u_hat, qn_hat; v, tau) = -(q, grad v) + (q/k, tau) - (u, div tau)
                                     + <qn_hat, v> + <u_hat, tau.n>

and the test inner product is the adjoint graph norm

    |tau/k - grad v|^2 + |div tau|^2 + eps^2 (|v|^2 + |tau|^2).

With ``G = L L^T`` and ``W = L^{-1} B``, the optimal-test stiffness is
``W^T W``.  The interior columns of ``W`` are orthogonalised out (QR), which
gives the Schur complement over the skeleton without forming ``A_ii^{-1}``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import basis
from .basis import H1, HDIV, L2, SKELETON_QN, SKELETON_U
from .mesh import PolygonalMesh
from .quadrature import edge_rule, gauss_legendre_01, polygon_rule


class SingularInteriorBlock(RuntimeError):
    pass


class SingularGram(RuntimeError):
    pass


class InsufficientEnrichment(ValueError):
    pass


class ElementError(RuntimeError):
    """Wraps a failure in element-local work with the element id."""

    def __init__(self, element: int, cause: Exception):
        super().__init__(f"element {element}: {cause}")
        self.element = element
        self.cause = cause


@dataclass
class ProblemSpec:
    source: Callable[[np.ndarray], np.ndarray]
    dirichlet: Callable[[np.ndarray], np.ndarray]
    conductivity: dict[int, float] | None = None   # material id -> k; None uses the mesh table
    eps: float = 1.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.conductivity is not None and any(not k > 0 for k in self.conductivity.values()):
            raise ValueError("conductivities must be positive")

    def k(self, mesh: PolygonalMesh, element: int) -> float:
        if self.conductivity is None:
            return mesh.conductivity(element)
        return float(self.conductivity[int(mesh.element_material[element])])

    @classmethod
    def from_problem(cls, problem, eps: float = 1.0) -> "ProblemSpec":
        return cls(source=problem.source, dirichlet=problem.dirichlet,
                   conductivity=dict(problem.conductivity), eps=eps)


# ---------------------------------------------------------------------------
# degrees of freedom

@dataclass
class DofMap:
    """Global skeleton numbering.

    Vertex traces come first, then ``p-1`` bubbles per edge, then ``p``
    normal-flux functions per edge.
    """
    n_vertices: int
    n_edges: int
    p: int
    boundary: np.ndarray                 # sorted global ids of Dirichlet trace DOFs
    element_dofs: list[np.ndarray]       # local skeleton slot -> global id
    n_interior: np.ndarray               # per-element count of u and q coefficients

    @property
    def bubble_offset(self) -> int:
        return self.n_vertices

    @property
    def flux_offset(self) -> int:
        return self.n_vertices + self.n_edges * (self.p - 1)

    @property
    def n_skeleton(self) -> int:
        return self.flux_offset + self.n_edges * self.p

    @property
    def n_trace_u(self) -> int:
        return self.flux_offset

    @property
    def n_free(self) -> int:
        return self.n_skeleton - len(self.boundary)

    @property
    def n_total(self) -> int:
        return int(self.n_interior.sum()) + self.n_free

    def bubble(self, edge: int, i: int) -> int:
        return self.bubble_offset + edge * (self.p - 1) + i

    def flux(self, edge: int, j: int) -> int:
        return self.flux_offset + edge * self.p + j


def build_dofmap(mesh: PolygonalMesh, p: int, bounding: str = "triangle") -> DofMap:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    V, E = mesh.n_vertices, mesh.n_edges
    bub0, flux0 = V, V + E * (p - 1)
    dofs = []
    for k, ring in enumerate(mesh.elements):
        edges = mesh.element_edges[k]
        u_ids = [int(v) for v in ring]
        for e in edges:
            u_ids += [bub0 + int(e) * (p - 1) + i for i in range(p - 1)]
        q_ids = [flux0 + int(e) * p + j for e in edges for j in range(p)]
        dofs.append(np.array(u_ids + q_ids, dtype=np.int64))
    bnd = set(int(v) for v in mesh.boundary_vertices)
    for e in mesh.boundary_edges:
        bnd.update(bub0 + int(e) * (p - 1) + i for i in range(p - 1))
    n_int = np.full(mesh.n_elements, 3 * basis.dim_l2(p, bounding), dtype=np.int64)
    return DofMap(V, E, p, np.array(sorted(bnd), dtype=np.int64), dofs, n_int)


def resolve_dp(mesh: PolygonalMesh, p: int, dp_policy="auto", bounding: str = "triangle") -> np.ndarray:
    """Starting enrichment per element; a fixed value is checked against every element.

    Under ``"auto"`` assembly may raise an element above this dimension-count
    minimum (see :func:`kernel_excess`).
    """
    sides = np.array([len(r) for r in mesh.elements])
    need = {n: basis.auto_dp(n, p, bounding) for n in set(sides.tolist())}
    if dp_policy == "auto" or dp_policy is None:
        return np.array([need[n] for n in sides], dtype=np.int64)
    dp = int(dp_policy)
    for k, n in enumerate(sides):
        if dp < need[n]:
            raise InsufficientEnrichment(
                f"dp={dp} is too small for element {k} with {n} sides at p={p}; it needs dp >= {need[n]}")
    return np.full(len(sides), dp, dtype=np.int64)


# ---------------------------------------------------------------------------
# element spaces

def _bounding(poly, bounding: str):
    if bounding == "triangle":
        return poly.bounding_triangle
    if bounding == "box":
        return poly.bounding_box
    raise ValueError(f"unknown bounding shape {bounding!r}")


@dataclass
class ElementSpaces:
    """Trial and test functions of one element sampled at its quadrature points."""
    element: int
    p: int
    dp: int
    k: float
    vertices: np.ndarray
    bounding: object
    x: np.ndarray            # volume points
    w: np.ndarray
    trial: np.ndarray        # (m, nl) L2 family of the fields
    v: basis.BasisSet
    tau: basis.BasisSet
    xe: np.ndarray           # boundary points
    we: np.ndarray
    normals: np.ndarray      # (me, 2) outward unit normals
    trace_u: np.ndarray      # (me, n_u)
    trace_q: np.ndarray      # (me, n_q)

    @property
    def n_sides(self) -> int:
        return len(self.vertices)

    @property
    def n_test(self) -> int:
        return self.v.count + self.tau.count

    @property
    def n_l2(self) -> int:
        return self.trial.shape[1]


def _volume_degree(q: int, bounding: str) -> int:
    return 2 * q + 2 if bounding == "triangle" else 4 * q + 2


def element_spaces(mesh: PolygonalMesh, k: int, p: int, dp: int, spec: ProblemSpec,
                   bounding: str = "triangle") -> ElementSpaces:
    poly = mesh.polygons[k]
    verts = poly.vertices
    bnd = _bounding(poly, bounding)
    q = p + dp
    deg = _volume_degree(q, bounding)
    rule = polygon_rule(verts, deg)
    x, w = rule.points, rule.weights
    trial = basis.eval_sequence(p, bnd, x, L2).values
    v = basis.eval_sequence(q, bnd, x, H1)
    tau = basis.eval_sequence(q, bnd, x, HDIV)

    n = len(verts)
    xe, we, nrm, eidx, tpar = [], [], [], [], []
    for j in range(n):
        a, b = verts[j], verts[(j + 1) % n]
        er = edge_rule(a, b, deg - 1)
        d = (b - a) / np.linalg.norm(b - a)
        xe.append(er.points)
        we.append(er.weights)
        nrm.append(np.tile([d[1], -d[0]], (len(er.weights), 1)))
        eidx.append(np.full(len(er.weights), j))
        tpar.append(er.params)
    xe, we, nrm = np.vstack(xe), np.concatenate(we), np.vstack(nrm)
    eidx, tpar = np.concatenate(eidx), np.concatenate(tpar)
    signs = mesh.element_signs[k]
    tu = basis.eval_trace(n, p, SKELETON_U, eidx, tpar, signs).values
    tq = basis.eval_trace(n, p, SKELETON_QN, eidx, tpar, signs).values
    return ElementSpaces(k, p, dp, spec.k(mesh, k), verts, bnd, x, w, trial, v, tau,
                         xe, we, nrm, tu, tq)


# ---------------------------------------------------------------------------
# local matrices

def _pair(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum_{m,c} a[m,i,c] b[m,j,c]`` for vector-valued families."""
    return a[:, :, 0].T @ b[:, :, 0] + a[:, :, 1].T @ b[:, :, 1]


def local_gram(es: ElementSpaces, eps: float = 1.0) -> np.ndarray:
    """Gram matrix of the adjoint graph norm over ``[v | tau]``."""
    w, k = es.w, es.k
    gv = es.v.grads
    vv = es.v.values
    T = es.tau.values
    D = es.tau.div
    nv = vv.shape[1]
    G = np.empty((es.n_test, es.n_test))
    gvw = gv * w[:, None, None]
    Tw = T * w[:, None, None]
    G[:nv, :nv] = _pair(gvw, gv) + eps ** 2 * (vv * w[:, None]).T @ vv
    cross = -_pair(gvw, T) / k
    G[:nv, nv:] = cross
    G[nv:, :nv] = cross.T
    G[nv:, nv:] = ((1.0 / k ** 2 + eps ** 2) * _pair(Tw, T)
                   + (D * w[:, None]).T @ D)
    return 0.5 * (G + G.T)


def local_stiffness_load(es: ElementSpaces, source) -> tuple[np.ndarray, np.ndarray]:
    """Enriched stiffness ``B`` (test x trial) and load ``l``."""
    w, k = es.w, es.k
    psi = es.trial
    nl = psi.shape[1]
    vv, gv = es.v.values, es.v.grads
    T, D = es.tau.values, es.tau.div
    nv, nt = vv.shape[1], T.shape[1]
    nu, nqh = es.trace_u.shape[1], es.trace_q.shape[1]
    B = np.zeros((nv + nt, 3 * nl + nu + nqh))
    psiw = psi * w[:, None]
    su, sqx, sqy = slice(0, nl), slice(nl, 2 * nl), slice(2 * nl, 3 * nl)
    s_uh = slice(3 * nl, 3 * nl + nu)
    s_qh = slice(3 * nl + nu, 3 * nl + nu + nqh)
    B[:nv, sqx] = -gv[:, :, 0].T @ psiw
    B[:nv, sqy] = -gv[:, :, 1].T @ psiw
    B[nv:, su] = -D.T @ psiw
    B[nv:, sqx] = T[:, :, 0].T @ psiw / k
    B[nv:, sqy] = T[:, :, 1].T @ psiw / k
    ve = basis.eval_sequence(es.v.order, es.bounding, es.xe, H1).values
    te = basis.eval_sequence(es.tau.order, es.bounding, es.xe, HDIV).values
    tn = np.einsum("mic,mc->mi", te, es.normals)
    B[:nv, s_qh] = (ve * es.we[:, None]).T @ es.trace_q
    B[nv:, s_uh] = (tn * es.we[:, None]).T @ es.trace_u
    l = np.zeros(nv + nt)
    l[:nv] = vv.T @ (w * source(es.x))
    return B, l


def _whiten(G: np.ndarray, B: np.ndarray, l: np.ndarray):
    """Return ``F^{-1} B`` and ``F^{-1} l`` for a factor ``G = F F^T``.

    ``G`` is Jacobi-scaled first; the product is unchanged but the factor is
    far more accurate for the badly scaled hierarchical families.
    """
    d = 1.0 / np.sqrt(np.diag(G))
    Gs = G * d[:, None] * d[None, :]
    Bs, ls = B * d[:, None], l * d
    try:
        L = np.linalg.cholesky(Gs)
        return (sla.solve_triangular(L, Bs, lower=True, check_finite=False),
                sla.solve_triangular(L, ls, lower=True, check_finite=False))
    except np.linalg.LinAlgError:
        pass
    lu, dd, _ = sla.ldl(Gs, lower=True)
    lam, Q = np.linalg.eigh(dd)   # dd is block diagonal with 1x1 and 2x2 blocks
    if lam.min() <= 1e-15 * max(lam.max(), 1e-300):
        raise SingularGram(f"Gram matrix is not positive definite (pivot {lam.min():.3e})")
    F = lu @ Q * np.sqrt(lam)
    return np.linalg.solve(F, Bs), np.linalg.solve(F, ls)


def mass_condition(es: ElementSpaces) -> float:
    """Condition number of the scalar test family's mass matrix on the element."""
    v = es.v.values
    return basis.check_conditioning((v * es.w[:, None]).T @ v, np.inf)


@dataclass
class LocalSystem:
    G: np.ndarray
    B: np.ndarray
    l: np.ndarray
    n_interior: int

    @property
    def n_test(self) -> int:
        return self.G.shape[0]

    @property
    def n_trial(self) -> int:
        return self.B.shape[1]

    def optimal(self) -> tuple[np.ndarray, np.ndarray]:
        """``B^T G^{-1} B`` and ``B^T G^{-1} l``."""
        W, w = _whiten(self.G, self.B, self.l)
        return W.T @ W, W.T @ w


@dataclass
class Condensed:
    """Element Schur complement with what is needed for recovery and estimation."""
    S: np.ndarray
    f: np.ndarray
    W: np.ndarray        # whitened stiffness, all columns
    w: np.ndarray        # whitened load
    Q: np.ndarray        # orthonormal basis of the interior columns of W
    R: np.ndarray        # W_i = Q R; R^T R = A_ii
    n_interior: int

    def recover(self, xs: np.ndarray) -> np.ndarray:
        ni = self.n_interior
        rhs = self.Q.T @ (self.w - self.W[:, ni:] @ xs)
        return sla.solve_triangular(self.R, rhs, check_finite=False)

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.W @ x - self.w

    def eta2(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return float(r @ r)


def condense(local: LocalSystem, rtol: float = 1e-13) -> Condensed:
    """Eliminate the interior (u, q) block of ``B^T G^{-1} B``."""
    W, w = _whiten(local.G, local.B, local.l)
    ni = local.n_interior
    Q, R = np.linalg.qr(W[:, :ni])
    dg = np.abs(np.diag(R))
    if ni and (dg.min() <= rtol * dg.max() or not np.all(np.isfinite(dg))):
        raise SingularInteriorBlock(
            f"interior block is singular (pivot ratio {dg.min() / max(dg.max(), 1e-300):.2e}); "
            "the test space may be too small")
    Ws = W[:, ni:]
    Wp = Ws - Q @ (Q.T @ Ws)
    wp = w - Q @ (Q.T @ w)
    S = Wp.T @ Wp
    return Condensed(0.5 * (S + S.T), Wp.T @ wp, W, w, Q, R, ni)


def build_local(mesh: PolygonalMesh, k: int, p: int, dp: int, spec: ProblemSpec,
                bounding: str = "triangle", max_condition: float | None = None
                ) -> tuple[ElementSpaces, LocalSystem]:
    """Element spaces and local matrices; ``max_condition`` enables the basis guard."""
    es = element_spaces(mesh, k, p, dp, spec, bounding)
    if max_condition is not None:
        v = es.v.values
        basis.check_conditioning((v * es.w[:, None]).T @ v, max_condition)
    G = local_gram(es, spec.eps)
    B, l = local_stiffness_load(es, spec.source)
    return es, LocalSystem(G, B, l, 3 * es.n_l2)


# ---------------------------------------------------------------------------
# boundary data

def impose_dirichlet(mesh: PolygonalMesh, p: int, g) -> dict[int, float]:
    """Trace coefficients of the Dirichlet datum on boundary DOFs.

    Vertex coefficients interpolate ``g``; edge bubbles are the L2 projection
    of ``g`` minus the linear interpolant along each boundary edge.
    """
    out: dict[int, float] = {}
    bv = mesh.boundary_vertices
    if len(bv):
        vals = np.asarray(g(mesh.vertices[bv]), dtype=float)
        out.update({int(v): float(val) for v, val in zip(bv, vals)})
    if p < 2:
        return out
    t, wt = gauss_legendre_01(2 * p + 12)
    off = mesh.n_vertices
    for e in mesh.boundary_edges:
        a, b = mesh.edges[e]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        pts = pa + np.outer(t, pb - pa)
        resid = np.asarray(g(pts), dtype=float) - (out[int(a)] * (1 - t) + out[int(b)] * t)
        bub = basis.trace_u_edge(p, t)[:, 2:]
        M = (bub * wt[:, None]).T @ bub
        c = np.linalg.solve(M, (bub * wt[:, None]).T @ resid)
        for i, ci in enumerate(c):
            out[off + int(e) * (p - 1) + i] = float(ci)
    return out


# ---------------------------------------------------------------------------
# global assembly

@dataclass
class CondensedSystem:
    mesh: PolygonalMesh
    p: int
    dp: np.ndarray
    bounding: str
    spec: ProblemSpec
    dofmap: DofMap
    A: sp.csr_matrix            # free x free
    rhs: np.ndarray
    free: np.ndarray            # global ids of the unknowns of A
    boundary_values: np.ndarray
    elements: list[Condensed] = field(repr=False)
    full_matrix: sp.csr_matrix | None = field(default=None, repr=False)
    full_rhs: np.ndarray | None = field(default=None, repr=False)

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = np.zeros(self.dofmap.n_skeleton)
        x[self.dofmap.boundary] = self.boundary_values
        x[self.free] = x_free
        return x


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("POLYDPG_THREADS", "1")))
    except ValueError:
        return 1


class DeficientTestSpace(RuntimeError):
    pass


def harmonic_dim(p: int, bounding: str = "triangle") -> int:
    """Dimension of the harmonic polynomials inside the scalar trial space."""
    if bounding == "triangle":
        return 2 * p - 1
    d = p - 1
    mono = [(a, b) for a in range(d + 1) for b in range(d + 1)]
    row = {m: i for i, m in enumerate(mono)}
    lap = np.zeros((len(mono), len(mono)))
    for j, (a, b) in enumerate(mono):
        if a > 1:
            lap[row[(a - 2, b)], j] += a * (a - 1)
        if b > 1:
            lap[row[(a, b - 2)], j] += b * (b - 1)
    return len(mono) - int(np.linalg.matrix_rank(lap))


def kernel_excess(c: Condensed, p: int, bounding: str = "triangle", rtol: float = 1e-11) -> int:
    """Null directions of the element operator beyond the harmonic modes.

    Harmonic polynomials in the trial space (with their traces) are annihilated by
    every test function; anything else in the kernel means the enriched test
    space cannot see some trial function, which makes the global system
    singular.  Symmetric elements need this: on a square the normal trace of
    a rotation field is invisible to polynomials of degree < 4.
    """
    s = np.linalg.svd(c.W, compute_uv=False)
    n_zero = c.W.shape[1] - int(np.sum(s > rtol * s[0]))
    return n_zero - harmonic_dim(p, bounding)


MAX_DP_BUMP = 8


def _element_work(args):
    mesh, k, p, dp, spec, bounding, adaptive_dp, max_condition = args
    try:
        for _ in range(MAX_DP_BUMP + 1):
            _, local = build_local(mesh, k, p, dp, spec, bounding, max_condition)
            c = condense(local)
            if kernel_excess(c, p, bounding) <= 0:
                return c, dp
            if not adaptive_dp:
                raise DeficientTestSpace(
                    f"dp={dp} leaves trial functions invisible to the test space; raise dp")
            dp += 1
        raise DeficientTestSpace(f"no enrichment up to dp={dp - 1} separates the trial space")
    except Exception as exc:   # noqa: BLE001 - re-raised with the element id
        raise ElementError(k, exc) from exc


def assemble_global(mesh: PolygonalMesh, p: int, dp_policy="auto", spec: ProblemSpec | None = None,
                    bounding: str = "triangle", keep_full: bool = False,
                    max_condition: float | None = None) -> CondensedSystem:
    if spec is None:
        raise ValueError("a ProblemSpec is required")
    dps = resolve_dp(mesh, p, dp_policy, bounding)
    dm = build_dofmap(mesh, p, bounding)
    auto = dp_policy == "auto" or dp_policy is None
    jobs = [(mesh, k, p, int(dps[k]), spec, bounding, auto, max_condition) for k in range(mesh.n_elements)]
    nthreads = _threads()
    if nthreads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            work = list(pool.map(_element_work, jobs))
    else:
        work = [_element_work(j) for j in jobs]
    elems = [c for c, _ in work]
    dps = np.array([d for _, d in work], dtype=np.int64)

    N = dm.n_skeleton
    rows, cols, vals = [], [], []
    F = np.zeros(N)
    for k, c in enumerate(elems):
        g = dm.element_dofs[k]
        rows.append(np.repeat(g, len(g)))
        cols.append(np.tile(g, len(g)))
        vals.append(c.S.ravel())
        np.add.at(F, g, c.f)
    Afull = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(N, N)).tocsr()
    Afull = 0.5 * (Afull + Afull.T)

    bvals_map = impose_dirichlet(mesh, p, spec.dirichlet)
    bnd = dm.boundary
    bvals = np.array([bvals_map[int(i)] for i in bnd])
    mask = np.ones(N, dtype=bool)
    mask[bnd] = False
    free = np.flatnonzero(mask)
    A = Afull[free][:, free].tocsr()
    rhs = F[free] - Afull[free][:, bnd] @ bvals
    return CondensedSystem(mesh, p, dps, bounding, spec, dm, A, rhs, free, bvals, elems,
                           Afull if keep_full else None, F if keep_full else None)
