"""Discontinuous Petrov-Galerkin solver for diffusion on polygonal meshes."""
from .assembly import ProblemSpec, assemble_global
from .mesh import PolygonalMesh, load_fixture, load_mesh, uniform_grid
from .problems import get_problem, relative_error
from .solver import adaptive_loop, estimate, mark, recover, run, solve

__all__ = [
    "PolygonalMesh", "ProblemSpec", "adaptive_loop", "assemble_global", "estimate",
    "get_problem", "load_fixture", "load_mesh", "mark", "recover", "relative_error",
    "run", "solve", "uniform_grid",
]
__version__ = "0.1.0"
