"""Skeleton solve, interior recovery, residual estimator and adaptivity."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import basis
from .assembly import CondensedSystem, ProblemSpec, _bounding, assemble_global
from .basis import L2
from .mesh import PolygonalMesh, refine_polygonal

log = logging.getLogger(__name__)


class NotSPD(RuntimeError):
    def __init__(self, message: str, pivot: int | None = None, value: float | None = None):
        super().__init__(message)
        self.pivot = pivot
        self.value = value


# ---------------------------------------------------------------------------
# linear algebra

def solve_spd(A, b, rtol: float = 1e-10, max_refine: int = 3) -> np.ndarray:
    """Sparse symmetric solve that fails loudly on a non-positive pivot.

    SuperLU runs in symmetric mode (diagonal pivots only, symmetric
    fill-reducing ordering) so its ``U`` diagonal holds the ``LDL^T`` pivots.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise NotSPD(f"factorization failed: {exc}") from exc
    d = lu.U.diagonal()
    scale = max(float(np.abs(d).max()), 1e-300)
    bad = np.flatnonzero(~(d > 1e-14 * scale))
    if len(bad):
        i = int(bad[0])
        raise NotSPD(f"non-positive pivot {d[i]:.3e} at position {i} (column {int(lu.perm_c[i])})",
                     pivot=int(lu.perm_c[i]), value=float(d[i]))
    x = lu.solve(b)
    bn = max(float(np.linalg.norm(b)), 1e-300)
    # refine while the residual keeps shrinking, not just until rtol is met
    r = b - A @ x
    rn = float(np.linalg.norm(r))
    for _ in range(max_refine):
        if rn <= 1e-15 * bn:
            break
        x_new = x + lu.solve(r)
        r_new = b - A @ x_new
        rn_new = float(np.linalg.norm(r_new))
        if not rn_new < 0.5 * rn:
            if rn_new < rn:
                x = x_new
            break
        x, r, rn = x_new, r_new, rn_new
    res = float(np.linalg.norm(b - A @ x)) / bn
    if res > rtol and np.linalg.norm(b) > 0:
        log.warning("relative residual %.2e exceeds %.1e", res, rtol)
    return x


def solve(system: CondensedSystem) -> np.ndarray:
    """Skeleton coefficients including the Dirichlet values."""
    return system.expand(solve_spd(system.A, system.rhs))


# ---------------------------------------------------------------------------
# solutions

@dataclass
class Solution:
    mesh: PolygonalMesh
    p: int
    bounding: str
    skeleton: np.ndarray
    interior: list[np.ndarray]          # per element: [u | q_x | q_y] coefficients
    local: list[np.ndarray] = field(repr=False)   # per element: full local trial vector

    def _bounding(self, k: int):
        return _bounding(self.mesh.polygons[k], self.bounding)

    def coefficients(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        c = self.interior[k]
        nl = len(c) // 3
        return c[:nl], c[nl:2 * nl], c[2 * nl:]

    def evaluate(self, k: int, points) -> tuple[np.ndarray, np.ndarray]:
        """Field values ``u`` (m,) and ``q`` (m, 2) at points of element ``k``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        psi = basis.eval_sequence(self.p, self._bounding(k), pts, L2).values
        cu, cx, cy = self.coefficients(k)
        return psi @ cu, np.column_stack([psi @ cx, psi @ cy])

    def trace_u(self, edge: int, t) -> np.ndarray:
        """Temperature trace along a mesh edge in its global parametrization."""
        t = np.asarray(t, dtype=float)
        a, b = self.mesh.edges[edge]
        V, p = self.mesh.n_vertices, self.p
        phi = basis.trace_u_edge(p, t)
        c = np.concatenate([[self.skeleton[a], self.skeleton[b]],
                            self.skeleton[V + edge * (p - 1):V + (edge + 1) * (p - 1)]])
        return phi @ c

    def trace_qn(self, edge: int, t) -> np.ndarray:
        """Normal flux along the global edge normal (right of the edge direction)."""
        t = np.asarray(t, dtype=float)
        V, E, p = self.mesh.n_vertices, self.mesh.n_edges, self.p
        off = V + E * (p - 1) + edge * p
        return basis.trace_qn_edge(p, t) @ self.skeleton[off:off + p]

    def to_dict(self) -> dict:
        return dict(p=self.p, bounding=self.bounding,
                    skeleton=self.skeleton.tolist(),
                    interior=[c.tolist() for c in self.interior])


def recover(system: CondensedSystem, skeleton: np.ndarray) -> Solution:
    interior, local = [], []
    for k, c in enumerate(system.elements):
        xs = skeleton[system.dofmap.element_dofs[k]]
        xi = c.recover(xs)
        interior.append(xi)
        local.append(np.concatenate([xi, xs]))
    return Solution(system.mesh, system.p, system.bounding, skeleton, interior, local)


# ---------------------------------------------------------------------------
# estimation and marking

@dataclass
class ErrorEstimate:
    eta2: np.ndarray

    @property
    def total(self) -> float:
        return float(self.eta2.sum())

    @property
    def eta(self) -> np.ndarray:
        return np.sqrt(self.eta2)


def estimate(system: CondensedSystem, solution: Solution) -> ErrorEstimate:
    """``eta_K^2 = (B u - l)^T G^{-1} (B u - l)`` per element."""
    eta2 = np.array([c.eta2(x) for c, x in zip(system.elements, solution.local)])
    return ErrorEstimate(np.where(eta2 < 0, 0.0, eta2))


def mark(est: ErrorEstimate, fraction: float = 0.25) -> np.ndarray:
    """Mark elements with ``eta_K >= fraction * max eta``; compared on squares."""
    if len(est.eta2) == 0:
        raise ValueError("cannot mark an empty mesh")
    return est.eta2 >= fraction ** 2 * est.eta2.max()


# ---------------------------------------------------------------------------
# drivers

@dataclass
class Result:
    mesh: PolygonalMesh
    system: CondensedSystem
    solution: Solution
    estimate: ErrorEstimate
    error: object | None = None
    wall_time: float = 0.0

    @property
    def n_skeleton(self) -> int:
        return self.system.dofmap.n_free

    @property
    def n_total(self) -> int:
        return self.system.dofmap.n_total


def run(mesh: PolygonalMesh, problem, p: int, dp="auto", eps: float = 1.0,
        bounding: str = "triangle", with_error: bool = True) -> Result:
    """Assemble, solve, recover and estimate for a manufactured problem."""
    from .problems import relative_error

    t0 = time.perf_counter()
    spec = ProblemSpec.from_problem(problem, eps)
    system = assemble_global(mesh, p, dp, spec, bounding)
    sol = recover(system, solve(system))
    est = estimate(system, sol)
    wall = time.perf_counter() - t0
    err = relative_error(sol, problem) if with_error else None
    return Result(mesh, system, sol, est, err, wall)


def adaptive_loop(problem, mesh: PolygonalMesh, p: int, steps: int, dp="auto", eps: float = 1.0,
                  bounding: str = "triangle", fraction: float = 0.25,
                  with_error: bool = True) -> list[Result]:
    """Solve, estimate, mark, refine; ``steps`` refinements after the first solve."""
    results = [run(mesh, problem, p, dp, eps, bounding, with_error)]
    for step in range(steps):
        marks = mark(results[-1].estimate, fraction)
        if not marks.any():
            break
        mesh = refine_polygonal(mesh, marks)
        results.append(run(mesh, problem, p, dp, eps, bounding, with_error))
        log.info("step %d: %d elements, eta^2 = %.3e", step + 1, mesh.n_elements,
                 results[-1].estimate.total)
    return results
