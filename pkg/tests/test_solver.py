import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from polydpg.assembly import LocalSystem, ProblemSpec, assemble_global, build_local, condense
from polydpg.mesh import interface_cut, load_fixture, uniform_grid
from polydpg.problems import problem_polynomial, problem_sinsin
from polydpg.solver import (ErrorEstimate, NotSPD, adaptive_loop, estimate, mark, recover, run,
                            solve, solve_spd)

from conftest import THETA, fixture_meshes


def patch_problem(p, materials=(1,)):
    """Polynomial of total degree p-1 with generic coefficients."""
    rng = np.random.default_rng(100 + p)
    coeffs = {(a, d - a): float(rng.uniform(-1, 1)) for d in range(p) for a in range(d + 1)}
    return problem_polynomial(coeffs, materials=materials)


def patch_meshes():
    meshes = fixture_meshes()
    meshes["interface"] = interface_cut(uniform_grid(8), 0.12, THETA, materials={1: 1.0, 2: 1.0})
    return meshes


# ---------------------------------------------------------------------------
# linear algebra

def test_identity_system():
    assert np.allclose(solve_spd(sp.identity(1), np.array([3.0])), [3.0])
    assert solve_spd(sp.csr_matrix((0, 0)), np.zeros(0)).shape == (0,)


def test_random_spd_system():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 50))
    A = X @ X.T + 50 * np.eye(50)
    x = rng.normal(size=50)
    got = solve_spd(sp.csr_matrix(A), A @ x)
    assert np.allclose(got, x, rtol=0, atol=1e-12 * np.abs(x).max())


def test_indefinite_system_rejected():
    A = sp.csr_matrix(np.diag([2.0, -1.0, 3.0]))
    with pytest.raises(NotSPD) as info:
        solve_spd(A, np.ones(3))
    assert info.value.value < 0 and info.value.pivot == 1
    with pytest.raises(NotSPD):
        solve_spd(sp.csr_matrix(np.diag([1.0, 0.0])), np.ones(2))


# ---------------------------------------------------------------------------
# patch test

@pytest.mark.parametrize("p", [1, 2, 3, 4])
@pytest.mark.parametrize("name", ["grid", "polygons", "distorted", "interface"])
def test_patch_test(name, p):
    mesh = patch_meshes()[name]
    problem = patch_problem(p, materials=tuple(mesh.materials))
    res = run(mesh, problem, p)
    assert res.error.total <= 1e-9
    # exact skeleton: the trace at mesh vertices is the polynomial itself
    u_vertex = res.solution.skeleton[:mesh.n_vertices]
    assert np.allclose(u_vertex, problem.u(mesh.vertices), atol=1e-9)
    scale = sum(c.w @ c.w for c in res.system.elements)
    assert res.estimate.total <= 1e-18 * max(scale, 1.0) + 1e-20


def test_zero_skeleton_zero_load():
    system = assemble_global(uniform_grid(2), 2, "auto",
                             ProblemSpec(lambda x: np.zeros(len(x)), lambda x: np.zeros(len(x))))
    sol = recover(system, np.zeros(system.dofmap.n_skeleton))
    assert all(np.all(c == 0) for c in sol.interior)
    assert np.all(solve(system) == 0)


# ---------------------------------------------------------------------------
# estimator

def test_estimator_closed_form_diagonal_gram():
    rng = np.random.default_rng(3)
    g = rng.uniform(0.5, 3.0, 8)
    B = rng.normal(size=(8, 5))
    l = rng.normal(size=8)
    c = condense(LocalSystem(np.diag(g), B, l, 2))
    x = rng.normal(size=5)
    r = B @ x - l
    assert c.eta2(x) == pytest.approx(np.sum(r ** 2 / g), rel=1e-13)


def test_estimator_matches_direct_quadratic_form():
    mesh = load_fixture("polygons_0")
    problem = problem_sinsin()
    spec = ProblemSpec.from_problem(problem)
    system = assemble_global(mesh, 2, "auto", spec, keep_full=True)
    sol = recover(system, solve(system))
    est = estimate(system, sol)
    direct = 0.0
    for k in range(mesh.n_elements):
        _, local = build_local(mesh, k, 2, int(system.dp[k]), spec)
        r = local.B @ sol.local[k] - local.l
        direct += r @ sla.cho_solve(sla.cho_factor(local.G), r)
    assert est.total == pytest.approx(direct, rel=1e-10)
    # the same number from the assembled skeleton system plus the per-element constants
    xs = sol.skeleton
    const = sum(float(c.w @ c.w - c.w @ c.Q @ (c.Q.T @ c.w)) for c in system.elements)
    quad_form = xs @ (system.full_matrix @ xs) - 2 * system.full_rhs @ xs + const
    assert est.total == pytest.approx(quad_form, rel=1e-8)


def test_galerkin_orthogonality():
    mesh = fixture_meshes()["distorted"]
    spec = ProblemSpec.from_problem(problem_sinsin())
    system = assemble_global(mesh, 3, "auto", spec)
    sol = recover(system, solve(system))
    dm = system.dofmap
    skel_res = np.zeros(dm.n_skeleton)
    skel_load = np.zeros(dm.n_skeleton)
    interior_res, interior_load = [], []
    for k, c in enumerate(system.elements):
        g = c.W.T @ c.residual(sol.local[k])
        h = c.W.T @ c.w
        ni = c.n_interior
        interior_res.append(g[:ni])
        interior_load.append(h[:ni])
        np.add.at(skel_res, dm.element_dofs[k], g[ni:])
        np.add.at(skel_load, dm.element_dofs[k], h[ni:])
    res = np.concatenate(interior_res + [skel_res[system.free]])
    load = np.concatenate(interior_load + [skel_load[system.free]])
    assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(load)


def test_estimator_decreases_under_uniform_refinement():
    problem = problem_sinsin()
    totals = [run(uniform_grid(n), problem, 1, with_error=False).estimate.total for n in (2, 4, 8, 16)]
    assert all(a > b for a, b in zip(totals, totals[1:]))


def test_estimates_are_nonnegative():
    res = run(uniform_grid(3), problem_sinsin(), 2)
    assert np.all(res.estimate.eta2 >= 0)
    assert res.estimate.total == pytest.approx(res.estimate.eta2.sum())
    assert np.allclose(res.estimate.eta ** 2, res.estimate.eta2)


# ---------------------------------------------------------------------------
# marking and the adaptive loop

def test_mark_examples():
    est = ErrorEstimate(np.array([1.0, 0.3, 0.2]) ** 2)
    assert mark(est).tolist() == [True, True, False]
    assert mark(ErrorEstimate(np.full(4, 0.7))).all()
    assert mark(ErrorEstimate(np.array([1e-6, 5.0, 1e-6]))).tolist() == [False, True, False]
    assert mark(ErrorEstimate(np.array([0.25 ** 2, 1.0]))).tolist() == [True, True]
    with pytest.raises(ValueError):
        mark(ErrorEstimate(np.zeros(0)))


def test_adaptive_loop_without_steps():
    results = adaptive_loop(problem_sinsin(), uniform_grid(2), 1, steps=0)
    assert len(results) == 1 and results[0].mesh.n_elements == 4


def test_adaptive_loop_refines_marked_elements():
    results = adaptive_loop(problem_sinsin(), load_fixture("polygons_0"), 1, steps=2)
    assert len(results) == 3
    for before, after in zip(results, results[1:]):
        marked = mark(before.estimate)
        assert np.array_equal(after.mesh.refined, marked)
        assert after.mesh.n_elements > before.mesh.n_elements
        assert after.n_total > before.n_total


def test_solution_fields_and_dump():
    res = run(uniform_grid(2), problem_sinsin(), 2)
    u, q = res.solution.evaluate(0, np.array([[0.25, 0.25], [0.1, 0.3]]))
    assert u.shape == (2,) and q.shape == (2, 2)
    d = res.solution.to_dict()
    assert len(d["skeleton"]) == res.system.dofmap.n_skeleton
    assert len(d["interior"]) == 4
    assert res.n_skeleton == res.system.dofmap.n_free
