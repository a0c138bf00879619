"""Command-line driver for convergence and adaptive studies.

Writes ``results.csv`` (one row per solve) into ``--out`` and, with
``--dump-solution``, one JSON file per solve holding the mesh and all
coefficients.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import DeficientTestSpace, ElementError, InsufficientEnrichment
from .mesh import (FIXTURES, ParseError, PolygonalMesh, TopologyError, distorted_tessellation,
                   interface_cut, load_fixture, load_mesh, mesh_stats, refine_polygonal,
                   uniform_grid, uniform_refine)
from .problems import PROBLEMS, get_problem
from .solver import NotSPD, mark, run

CSV_COLUMNS = ("step", "num_elements", "h", "N_dof_skeleton", "N_dof_total",
               "relative_error", "eta_total", "wall_time_s")
GENERATORS = ("grid", "polygons", "distorted", "interface")

log = logging.getLogger("polydpg")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "sinsin"
    mesh: str | None = None
    gen: str | None = None
    p: int = 2
    dp: str = "auto"
    eps: float = 1.0
    mode: str = "uniform"
    steps: int = 1
    out: Path = Path(".")
    dump_solution: bool = False
    bounding: str = "triangle"

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if not 1 <= self.p <= 6:
            raise ConfigError(f"p must lie in [1, 6], got {self.p}")
        if self.dp != "auto":
            try:
                if int(self.dp) < 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"--dp must be 'auto' or a non-negative integer, got {self.dp!r}") from None
        if not self.eps > 0:
            raise ConfigError("--eps must be positive")
        if self.steps < 1:
            raise ConfigError("--steps must be >= 1")
        if self.mesh and self.gen:
            raise ConfigError("--mesh and --gen are mutually exclusive")

    @property
    def dp_policy(self):
        return "auto" if self.dp == "auto" else int(self.dp)


# ---------------------------------------------------------------------------
# meshes

def parse_gen(spec: str) -> tuple[str, int]:
    name, _, arg = spec.partition(":")
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
    default = {"grid": 4, "interface": 8, "polygons": 0, "distorted": 0}[name]
    try:
        value = int(arg) if arg else default
    except ValueError:
        raise ConfigError(f"generator parameter must be an integer, got {arg!r}") from None
    if name in ("grid", "interface") and value < 1:
        raise ConfigError("grid size must be >= 1")
    if name == "polygons" and not 0 <= value < len(FIXTURES):
        raise ConfigError(f"polygon fixture level must lie in [0, {len(FIXTURES) - 1}]")
    if name == "distorted" and value < 0:
        raise ConfigError("distorted level must be >= 0")
    return name, value


def interface_mesh(n: int, problem) -> PolygonalMesh:
    prm = problem.params
    return interface_cut(uniform_grid(n), prm["x0"], prm["theta"],
                         materials={1: prm["k1"], 2: prm["k2"]})


def generate(name: str, value: int, problem) -> PolygonalMesh:
    if name == "grid":
        return uniform_grid(value)
    if name == "polygons":
        return load_fixture(FIXTURES[value])
    if name == "distorted":
        return distorted_tessellation(value)
    return interface_mesh(value, problem)


def mesh_sequence(cfg: RunConfig, problem):
    """Initial mesh followed by uniformly refined ones."""
    if cfg.mesh:
        mesh = load_mesh(cfg.mesh)
        while True:
            yield mesh
            mesh = uniform_refine(mesh)
    name, value = parse_gen(cfg.gen or ("interface:8" if cfg.problem == "interface" else "grid:4"))
    while True:
        if name == "polygons" and value >= len(FIXTURES):
            raise ConfigError(f"the polygon fixture family has only {len(FIXTURES)} levels")
        yield generate(name, value, problem)
        value = value + 1 if name in ("polygons", "distorted") else 2 * value


def print_mesh_stats(mesh: PolygonalMesh, file=None) -> dict:
    stats = mesh_stats(mesh)
    file = file or sys.stdout
    sides = ", ".join(f"{n}-gons: {c}" for n, c in sorted(stats["sides"].items()))
    print(f"elements {stats['elements']}  vertices {stats['vertices']}  edges {stats['edges']}", file=file)
    print(f"sides    {sides}", file=file)
    print(f"h        {stats['h']:.6g}  area {stats['area']:.15g}  concave {stats['concave']}", file=file)
    return stats


# ---------------------------------------------------------------------------
# study

def _dump(path: Path, step: int, res, cfg: RunConfig):
    mesh = res.mesh
    data = dict(step=step, problem=cfg.problem, eps=cfg.eps,
                mesh=dict(vertices=mesh.vertices.tolist(),
                          elements=[r.tolist() for r in mesh.elements],
                          material=mesh.element_material.tolist(),
                          materials={str(k): v for k, v in mesh.materials.items()}),
                dp=res.system.dp.tolist(), eta2=res.estimate.eta2.tolist(),
                relative_error=res.error.total)
    data.update(res.solution.to_dict())
    with open(path, "w") as fh:
        json.dump(data, fh)


def _row(step: int, res) -> dict:
    return dict(step=step, num_elements=res.mesh.n_elements, h=res.mesh.max_diameter(),
                N_dof_skeleton=res.n_skeleton, N_dof_total=res.n_total,
                relative_error=res.error.total, eta_total=math.sqrt(res.estimate.total),
                wall_time_s=res.wall_time)


def run_study(cfg: RunConfig, stream=None) -> list[dict]:
    cfg.validate()
    stream = stream or sys.stdout
    problem = get_problem(cfg.problem)
    cfg.out.mkdir(parents=True, exist_ok=True)
    rows = []
    meshes = mesh_sequence(cfg, problem)
    mesh = next(meshes)
    print_mesh_stats(mesh, stream)
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        res = run(mesh, problem, cfg.p, cfg.dp_policy, cfg.eps, cfg.bounding)
        res.wall_time = time.perf_counter() - t0
        row = _row(step, res)
        rows.append(row)
        print(" ".join(f"{k}={_fmt(v)}" for k, v in row.items()), file=stream, flush=True)
        if cfg.dump_solution:
            _dump(cfg.out / f"solution_{step:03d}.json", step, res, cfg)
        if step + 1 == cfg.steps:
            break
        if cfg.mode == "uniform":
            mesh = next(meshes)
        else:
            marks = mark(res.estimate)
            if not marks.any():
                break
            mesh = refine_polygonal(mesh, marks)
    with open(cfg.out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return rows


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10e}" if v and (abs(v) < 1e-3 or abs(v) >= 1e4) else f"{v:.10g}"
    return v


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polydpg", description=__doc__.splitlines()[0])
    ap.add_argument("--problem", choices=sorted(PROBLEMS), default="sinsin")
    src = ap.add_mutually_exclusive_group()
    src.add_argument("--mesh", help="mesh file")
    src.add_argument("--gen", help="generator NAME:N with NAME in " + ", ".join(GENERATORS))
    ap.add_argument("-p", type=int, default=2, help="trial order, 1..6")
    ap.add_argument("--dp", default="auto", help="test enrichment: auto or an integer")
    ap.add_argument("--eps", type=float, default=1.0, help="test norm weight")
    ap.add_argument("--mode", choices=("uniform", "adaptive"), default="uniform")
    ap.add_argument("--steps", type=int, default=1, help="number of solves")
    ap.add_argument("--bounding", choices=("triangle", "box"), default="triangle")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--dump-solution", action="store_true")
    ap.add_argument("--stats", action="store_true", help="print mesh statistics and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    cfg = RunConfig(problem=args.problem, mesh=args.mesh, gen=args.gen, p=args.p, dp=args.dp,
                    eps=args.eps, mode=args.mode, steps=args.steps, out=args.out,
                    dump_solution=args.dump_solution, bounding=args.bounding)
    try:
        if args.stats:
            cfg.validate()
            print_mesh_stats(next(mesh_sequence(cfg, get_problem(cfg.problem))))
            return 0
        run_study(cfg)
    except (ConfigError, InsufficientEnrichment, ParseError, TopologyError, FileNotFoundError) as exc:
        print(f"polydpg: error: {exc}", file=sys.stderr)
        return 2
    except ElementError as exc:
        code = 2 if isinstance(exc.cause, (InsufficientEnrichment, DeficientTestSpace)) else 1
        print(f"polydpg: error: {exc}", file=sys.stderr)
        return code
    except (NotSPD, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"polydpg: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
