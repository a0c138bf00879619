"""Manufactured solutions for -div(k grad u) = r on the unit square.

All callables take points as an ``(m, 2)`` array.  The flux is
``q = -k grad u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .quadrature import polygon_rule

PointFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class ManufacturedProblem:
    name: str
    u: PointFn
    grad_u: PointFn
    source: PointFn
    conductivity: dict[int, float] = field(default_factory=lambda: {1: 1.0})
    conductivity_at: PointFn | None = None
    params: dict = field(default_factory=dict)

    def k_at(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.conductivity_at is not None:
            return self.conductivity_at(pts)
        return np.full(len(pts), next(iter(self.conductivity.values())))

    def flux(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return -self.k_at(pts)[:, None] * self.grad_u(pts)

    def dirichlet(self, pts) -> np.ndarray:
        return self.u(np.atleast_2d(pts))


def problem_sinsin() -> ManufacturedProblem:
    pi = math.pi

    def u(p):
        return np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1])

    def grad(p):
        x, y = p[:, 0], p[:, 1]
        return pi * np.column_stack([np.cos(pi * x) * np.sin(pi * y), np.sin(pi * x) * np.cos(pi * y)])

    def r(p):
        return 2 * pi ** 2 * u(p)

    return ManufacturedProblem("sinsin", u, grad, r)


def problem_interface(k1: float = 1.0, k2: float = 5.0, x0: float = 0.12,
                      theta: float = math.atan(1 / 0.65)) -> ManufacturedProblem:
    """Two-material problem with continuous temperature and normal flux.

    The interface passes through ``(x0, 0)`` at angle ``theta`` to the x-axis.
    ``x'`` is the signed distance to it (positive on the left, where the
    conductivity is ``k2``) and ``y'`` the coordinate along it.  The solution
    is ``k1 sin(pi x') sin(pi y')`` on the left and ``k2 sin(pi x') sin(pi y')``
    on the right, so ``k u_x'`` equals ``k1 k2 pi sin(pi y')`` on both sides.
    """
    pi = math.pi
    c, s = math.cos(theta), math.sin(theta)
    gx = np.array([-s, c])
    gy = np.array([c, s])

    def frame(p):
        dx, y = p[:, 0] - x0, p[:, 1]
        return -s * dx + c * y, c * dx + s * y

    def left(p):
        return frame(p)[0] > 0

    def amplitude(p):
        return np.where(left(p), k1, k2)

    def u(p):
        xp, yp = frame(p)
        return amplitude(p) * np.sin(pi * xp) * np.sin(pi * yp)

    def grad(p):
        xp, yp = frame(p)
        a = amplitude(p) * pi
        dxp = a * np.cos(pi * xp) * np.sin(pi * yp)
        dyp = a * np.sin(pi * xp) * np.cos(pi * yp)
        return dxp[:, None] * gx + dyp[:, None] * gy

    def r(p):
        xp, yp = frame(p)
        return 2 * pi ** 2 * k1 * k2 * np.sin(pi * xp) * np.sin(pi * yp)

    def k_at(p):
        return np.where(left(p), k2, k1)

    return ManufacturedProblem("interface", u, grad, r, conductivity={1: k1, 2: k2},
                               conductivity_at=k_at,
                               params=dict(k1=k1, k2=k2, x0=x0, theta=theta))


def problem_gaussians(sigma: float = math.sqrt(1e-3), mu1: float = 0.25,
                      mu2: float = 0.75) -> ManufacturedProblem:
    """Sum of two normalized Gaussian bumps centred at (mu1, mu1) and (mu2, mu2)."""
    amp = 1.0 / (2 * math.pi * sigma ** 2)
    s2 = sigma ** 2

    def bumps(p):
        out = []
        for mu in (mu1, mu2):
            d = p - mu
            r2 = np.einsum("ij,ij->i", d, d)
            out.append((d, r2, np.exp(-0.5 * r2 / s2)))
        return out

    def u(p):
        return amp * sum(g for _, _, g in bumps(p))

    def grad(p):
        return amp * sum(-(d / s2) * g[:, None] for d, _, g in bumps(p))

    def r(p):
        return -amp * sum((r2 / s2 ** 2 - 2.0 / s2) * g for _, r2, g in bumps(p))

    return ManufacturedProblem("gaussians", u, grad, r,
                               params=dict(sigma=sigma, mu1=mu1, mu2=mu2))


def problem_polynomial(coeffs: dict[tuple[int, int], float], k: float = 1.0,
                       materials=(1,)) -> ManufacturedProblem:
    """``u = sum c_ab x^a y^b`` with constant conductivity ``k`` on every material."""
    terms = [(a, b, float(c)) for (a, b), c in coeffs.items()]

    def u(p):
        x, y = p[:, 0], p[:, 1]
        return sum(c * x ** a * y ** b for a, b, c in terms) + 0.0 * x

    def grad(p):
        x, y = p[:, 0], p[:, 1]
        gx = sum(c * a * x ** max(a - 1, 0) * y ** b for a, b, c in terms if a > 0) + 0.0 * x
        gy = sum(c * b * x ** a * y ** max(b - 1, 0) for a, b, c in terms if b > 0) + 0.0 * x
        return np.column_stack([gx, gy])

    def r(p):
        x, y = p[:, 0], p[:, 1]
        lap = 0.0 * x
        for a, b, c in terms:
            if a > 1:
                lap = lap + c * a * (a - 1) * x ** (a - 2) * y ** b
            if b > 1:
                lap = lap + c * b * (b - 1) * x ** a * y ** (b - 2)
        return -k * lap

    return ManufacturedProblem("polynomial", u, grad, r,
                               conductivity={m: k for m in materials},
                               params=dict(coeffs=dict(coeffs), k=k))


PROBLEMS = {
    "sinsin": problem_sinsin,
    "interface": problem_interface,
    "gaussians": problem_gaussians,
}


def get_problem(name: str) -> ManufacturedProblem:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


@dataclass
class RelativeError:
    total: float
    u: float
    q: float
    numerator: float
    denominator: float


def relative_error(solution, problem: ManufacturedProblem, mesh=None, p: int | None = None,
                   degree: int | None = None) -> RelativeError:
    """Relative error of (u, q) in L2 x L2 against the exact solution.

    ``solution`` must provide ``mesh``, ``p`` and ``evaluate(k, points)``
    returning ``(u, q)`` on element ``k``.
    """
    mesh = solution.mesh if mesh is None else mesh
    p = solution.p if p is None else p
    degree = 2 * (p + 3) if degree is None else degree
    eu = eq = nu = nq = 0.0
    for k, ring in enumerate(mesh.elements):
        rule = polygon_rule(mesh.vertices[ring], degree)
        x, w = rule.points, rule.weights
        uh, qh = solution.evaluate(k, x)
        ue = problem.u(x)
        qe = problem.flux(x)
        eu += w @ (uh - ue) ** 2
        eq += w @ np.sum((qh - qe) ** 2, axis=1)
        nu += w @ ue ** 2
        nq += w @ np.sum(qe ** 2, axis=1)
    den = nu + nq
    return RelativeError(total=math.sqrt((eu + eq) / den), u=math.sqrt(eu / max(nu, 1e-300)),
                         q=math.sqrt(eq / max(nq, 1e-300)), numerator=math.sqrt(eu + eq),
                         denominator=math.sqrt(den))
