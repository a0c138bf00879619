"""Polygonal meshes: topology, text I/O, generators and polygonal refinement.

Hanging nodes need no special treatment: a coarse element next to a refined
one simply lists the extra collinear vertex.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import (InvalidPolygon, Polygon, corner_mask, diameter, is_convex,
                       polygon_centroid, signed_area, validate_polygon)

BOUNDARY = -1


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TopologyError(ValueError):
    def __init__(self, message: str, edge: int | None = None):
        self.edge = edge
        super().__init__(f"edge {edge}: {message}" if edge is not None else message)


class InvalidCut(ValueError):
    pass


class ConcaveRefineUnsupported(ValueError):
    pass


@dataclass(frozen=True)
class RefinementMark:
    element: int
    marked: bool = True


class PolygonalMesh:
    """Vertices, CCW polygonal elements, oriented edges and material ids.

    Every edge is oriented from its lower to its higher vertex index unless
    listed in ``flipped``.  ``edge_elements[e] = (left, right)`` where the left
    element traverses the edge along its orientation; ``right`` is
    :data:`BOUNDARY` on the domain boundary.  ``element_signs[K][j]`` is +1
    when local edge ``j`` of ``K`` runs along the global orientation.
    """

    def __init__(self, vertices, elements, element_material=None, materials=None,
                 flipped=(), validate: bool = True):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        self.elements = [np.array(e, dtype=np.int64) for e in elements]
        n = len(self.elements)
        if element_material is None:
            element_material = np.ones(n, dtype=np.int64)
        self.element_material = np.array(element_material, dtype=np.int64)
        if len(self.element_material) != n:
            raise ValueError("one material id per element is required")
        self.materials = dict(materials) if materials else {int(m): 1.0 for m in set(self.element_material.tolist())}
        for m in set(self.element_material.tolist()):
            if m not in self.materials:
                raise ValueError(f"material {m} has no conductivity")
        if any(k <= 0 for k in self.materials.values()):
            raise ValueError("conductivities must be positive")
        self.flipped = frozenset(int(e) for e in flipped)
        self._build_topology()
        if validate:
            self.validate()

    # -- topology -----------------------------------------------------------
    def _build_topology(self):
        nv = len(self.vertices)
        index: dict[tuple[int, int], int] = {}
        edges: list[tuple[int, int]] = []
        owners: list[list[int]] = []
        elem_edges, elem_signs = [], []
        for k, ring in enumerate(self.elements):
            if len(ring) < 3:
                raise TopologyError(f"element {k} has fewer than 3 vertices")
            if ring.min() < 0 or ring.max() >= nv:
                raise TopologyError(f"element {k} references a missing vertex")
            ids, sg = [], []
            for a, b in zip(ring, np.roll(ring, -1)):
                a, b = int(a), int(b)
                key = (a, b) if a < b else (b, a)
                e = index.get(key)
                if e is None:
                    e = len(edges)
                    index[key] = e
                    edges.append(key)
                    owners.append([])
                owners[e].append(k)
                ids.append(e)
                sg.append(1 if a == key[0] else -1)
            elem_edges.append(np.array(ids, dtype=np.int64))
            elem_signs.append(np.array(sg, dtype=np.int64))
        E = np.array(edges, dtype=np.int64).reshape(-1, 2)
        for e in self.flipped:
            if e >= len(E):
                raise TopologyError("cannot flip a missing edge", e)
            E[e] = E[e, ::-1]
        for k, ids in enumerate(elem_edges):
            for j, e in enumerate(ids):
                if int(e) in self.flipped:
                    elem_signs[k][j] *= -1
        edge_elements = np.full((len(E), 2), BOUNDARY, dtype=np.int64)
        for e, own in enumerate(owners):
            if len(own) > 2:
                raise TopologyError(f"shared by {len(own)} elements", e)
            for k in own:
                j = int(np.flatnonzero(elem_edges[k] == e)[0])
                slot = 0 if elem_signs[k][j] > 0 else 1
                if edge_elements[e, slot] != BOUNDARY:
                    raise TopologyError("two elements traverse the edge in the same direction", e)
                edge_elements[e, slot] = k
        self.edges = E
        self.edge_index = index
        self.edge_elements = edge_elements
        self.element_edges = elem_edges
        self.element_signs = elem_signs

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero((self.edge_elements == BOUNDARY).any(axis=1))

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero((self.edge_elements != BOUNDARY).all(axis=1))

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges].ravel())

    def element_vertices(self, k: int) -> np.ndarray:
        return self.vertices[self.elements[k]]

    @cached_property
    def polygons(self) -> list[Polygon]:
        return [Polygon(self.vertices[ring], validate=False) for ring in self.elements]

    def conductivity(self, k: int) -> float:
        return self.materials[int(self.element_material[k])]

    def element_areas(self) -> np.ndarray:
        return np.array([p.area for p in self.polygons])

    def area(self) -> float:
        return float(self.element_areas().sum())

    def max_diameter(self) -> float:
        return max(p.diameter for p in self.polygons)

    def side_counts(self) -> Counter:
        return Counter(len(r) for r in self.elements)

    def validate(self):
        for k, ring in enumerate(self.elements):
            try:
                validate_polygon(self.vertices[ring])
            except InvalidPolygon as exc:
                raise TopologyError(f"element {k}: {exc}") from exc
            if len(set(ring.tolist())) != len(ring):
                raise TopologyError(f"element {k} repeats a vertex")

    def with_flipped_edges(self, edge_ids) -> "PolygonalMesh":
        """Same mesh with the global orientation of ``edge_ids`` reversed."""
        return PolygonalMesh(self.vertices, self.elements, self.element_material, self.materials,
                             flipped=self.flipped.symmetric_difference(int(e) for e in edge_ids),
                             validate=False)

    def with_materials(self, materials: dict) -> "PolygonalMesh":
        return PolygonalMesh(self.vertices, self.elements, self.element_material, materials,
                             flipped=self.flipped, validate=False)

    def __repr__(self):
        return (f"PolygonalMesh(vertices={self.n_vertices}, elements={self.n_elements}, "
                f"edges={self.n_edges})")


def max_diameter(mesh: PolygonalMesh) -> float:
    return mesh.max_diameter()


def mesh_stats(mesh: PolygonalMesh) -> dict:
    """Element count, side-count histogram, h and total area."""
    return {
        "elements": mesh.n_elements,
        "vertices": mesh.n_vertices,
        "edges": mesh.n_edges,
        "sides": dict(sorted(mesh.side_counts().items())),
        "h": mesh.max_diameter(),
        "area": mesh.area(),
        "concave": int(sum(not p.is_convex() for p in mesh.polygons)),
        "materials": dict(sorted(Counter(mesh.element_material.tolist()).items())),
    }


# ---------------------------------------------------------------------------
# text format

_HEADER = "# polydpg mesh"


def format_mesh(mesh: PolygonalMesh) -> str:
    lines = [_HEADER, f"vertices {mesh.n_vertices}"]
    lines += [f"v {x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"elements {mesh.n_elements}")
    for ring, m in zip(mesh.elements, mesh.element_material):
        lines.append(f"e {len(ring)} {m} " + " ".join(str(int(i)) for i in ring))
    lines.append(f"materials {len(mesh.materials)}")
    lines += [f"mat {m} {k:.17g}" for m, k in sorted(mesh.materials.items())]
    return "\n".join(lines) + "\n"


def save_mesh(mesh: PolygonalMesh, path) -> None:
    Path(path).write_text(format_mesh(mesh), encoding="utf-8")


def parse_mesh(text: str) -> PolygonalMesh:
    verts, elems, mats, mat_table = [], [], [], {}
    counts = {}
    vertex_line = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] in ("vertices", "elements", "materials"):
                counts[tok[0]] = int(tok[1])
            elif tok[0] == "v":
                if len(tok) != 3:
                    raise ParseError("vertex line needs two coordinates", lineno)
                verts.append((float(tok[1]), float(tok[2])))
            elif tok[0] == "e":
                k, m = int(tok[1]), int(tok[2])
                ids = [int(t) for t in tok[3:]]
                if len(ids) != k:
                    raise ParseError(f"element declares {k} vertices but lists {len(ids)}", lineno)
                elems.append(ids)
                mats.append(m)
                vertex_line[len(elems) - 1] = lineno
            elif tok[0] == "mat":
                mat_table[int(tok[1])] = float(tok[2])
            else:
                raise ParseError(f"unknown record {tok[0]!r}", lineno)
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), lineno) from exc
    for key, have in (("vertices", verts), ("elements", elems), ("materials", mat_table)):
        if key in counts and counts[key] != len(have):
            raise ParseError(f"header declares {counts[key]} {key} but found {len(have)}")
    for k, ids in enumerate(elems):
        if any(i < 0 or i >= len(verts) for i in ids):
            raise ParseError(f"element {k} references a missing vertex", vertex_line[k])
    for m in set(mats):
        if m not in mat_table:
            mat_table[m] = 1.0
    return PolygonalMesh(verts, elems, mats, mat_table)


def load_mesh(path) -> PolygonalMesh:
    return parse_mesh(Path(path).read_text(encoding="utf-8"))


FIXTURES = ("polygons_0", "polygons_1", "polygons_2", "polygons_3")


def load_fixture(name: str) -> PolygonalMesh:
    """Load one of the convex polygonal meshes shipped with the package."""
    ref = resources.files("polydpg") / "data" / f"{name}.mesh"
    return parse_mesh(ref.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# generators

def uniform_grid(nx: int, ny: int | None = None, domain=((0.0, 0.0), (1.0, 1.0)),
                 material: int = 1) -> PolygonalMesh:
    ny = nx if ny is None else ny
    if nx < 1 or ny < 1:
        raise ValueError("grid needs at least one cell per direction")
    (x0, y0), (x1, y1) = domain
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    elems = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
             for j in range(ny) for i in range(nx)]
    return PolygonalMesh(verts, elems, [material] * len(elems), {material: 1.0}, validate=False)


# Unit-cell pattern of four distorted quads around an off-centre point; the
# quad at the origin corner has a reflex angle of about 226 degrees.
DISTORTED_CELL_VERTICES = np.array([
    [0.0, 0.0], [0.7, 0.0], [1.0, 0.0],
    [0.0, 0.7], [0.2, 0.2], [1.0, 0.7],
    [0.0, 1.0], [0.7, 1.0], [1.0, 1.0],
])
DISTORTED_CELL_ELEMENTS = [
    [0, 1, 4, 3],
    [1, 2, 5, 4],
    [4, 5, 8, 7],
    [3, 4, 7, 6],
]


def distorted_tessellation(level: int) -> PolygonalMesh:
    """The distorted four-quad pattern tiled 2^level x 2^level over (0,1)^2."""
    if level < 0:
        raise ValueError("level must be >= 0")
    n = 2 ** level
    h = 1.0 / n
    index: dict[tuple[int, int], int] = {}
    verts: list[tuple[float, float]] = []
    # pattern coordinates are multiples of 0.1; key on integer tenths for exact sharing
    tenths = np.rint(DISTORTED_CELL_VERTICES * 10).astype(int)

    def vid(ix, iy):
        key = (ix, iy)
        if key not in index:
            index[key] = len(verts)
            verts.append((ix * h / 10.0, iy * h / 10.0))
        return index[key]

    elems = []
    for j in range(n):
        for i in range(n):
            local = [vid(10 * i + a, 10 * j + b) for a, b in tenths]
            elems += [[local[v] for v in quad] for quad in DISTORTED_CELL_ELEMENTS]
    return PolygonalMesh(verts, elems, validate=False)


def _line_frame(x0: float, theta: float):
    origin = np.array([x0, 0.0])
    direction = np.array([math.cos(theta), math.sin(theta)])
    return origin, direction


def interface_cut(grid: PolygonalMesh, x0: float, theta: float, collapse_fraction: float = 0.01,
                  left_material: int = 2, right_material: int = 1,
                  materials: dict | None = None) -> PolygonalMesh:
    """Cut a (uniform) grid by the line through (x0, 0) at angle ``theta``.

    Elements left of the directed line get ``left_material``.  Cut triangles
    smaller than ``collapse_fraction`` times the background cell area are
    collapsed onto the interface: their off-line corner and both cut points
    merge into one interface node (the corner's projection, or the cut point
    on the same domain side when the corner lies on the boundary).
    """
    origin, d = _line_frame(x0, theta)
    V = [tuple(v) for v in grid.vertices]
    P = grid.vertices
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = float(np.max(hi - lo))
    tol = 1e-12 * span

    def sdist(pt):
        return d[0] * (pt[1] - origin[1]) - d[1] * (pt[0] - origin[0])

    sd = np.array([sdist(p) for p in P])
    sd[np.abs(sd) < tol] = 0.0
    if np.all(sd >= 0) or np.all(sd <= 0):
        raise InvalidCut("the interface line does not cross the domain")
    cell_area = float(np.median(grid.element_areas()))

    sd_list = list(sd)
    cut_points: dict[tuple[int, int], int] = {}
    elems, mats = [], []
    for ring in grid.elements:
        s = sd[ring]
        if np.any(s > 0) and np.any(s < 0):
            new_ring = []
            for a, b in zip(ring, np.roll(ring, -1)):
                a, b = int(a), int(b)
                new_ring.append(a)
                if sd[a] * sd[b] < 0:
                    key = (min(a, b), max(a, b))
                    if key not in cut_points:
                        ta = sd[a] / (sd[a] - sd[b])
                        pt = P[a] + ta * (P[b] - P[a])
                        cut_points[key] = len(V)
                        V.append(tuple(pt))
                        sd_list.append(0.0)
                    new_ring.append(cut_points[key])
            pos = [v for v in new_ring if sd_list[v] >= 0]
            neg = [v for v in new_ring if sd_list[v] <= 0]
            elems += [pos, neg]
            mats += [left_material, right_material]
        else:
            elems.append([int(v) for v in ring])
            mats.append(left_material if s.sum() > 0 else right_material)

    verts = np.array(V)
    sdv = np.array(sd_list)
    remap = np.arange(len(verts))

    def on_side(pt):
        return [ax for ax in range(2) for bound in (lo[ax], hi[ax]) if abs(pt[ax] - bound) <= tol]

    collapsed = 0
    for ring in elems:
        if len(ring) != 3:
            continue
        if abs(signed_area(verts[ring])) >= collapse_fraction * cell_area:
            continue
        off = [v for v in ring if sdv[v] != 0.0]
        online = [v for v in ring if sdv[v] == 0.0]
        if len(off) != 1 or len(online) != 2:
            continue
        corner = off[0]
        sides = on_side(verts[corner])
        if len(sides) >= 2:
            continue   # a domain corner cannot move
        if sides:
            ax = sides[0]
            target = [v for v in online if abs(verts[v][ax] - verts[corner][ax]) <= tol]
            if not target:
                continue
            dest = target[0]
        else:
            rel = verts[corner] - origin
            foot = origin + np.dot(rel, d) * d
            dest = len(verts)
            verts = np.vstack([verts, foot])
            sdv = np.append(sdv, 0.0)
            remap = np.append(remap, dest)
        for v in (corner, *online):
            remap[remap == remap[v]] = dest
        collapsed += 1

    new_elems, new_mats = [], []
    for ring, m in zip(elems, mats):
        r = [int(remap[v]) for v in ring]
        dedup = [v for i, v in enumerate(r) if v != r[i - 1]]
        if len(dedup) < 3 or abs(signed_area(verts[dedup])) <= 1e-14 * span * span:
            continue
        new_elems.append(dedup)
        new_mats.append(m)
    mats_table = materials or {left_material: 1.0, right_material: 1.0}
    mesh = _compact(verts, new_elems, new_mats, mats_table)
    mesh.collapsed = collapsed
    return mesh


def _compact(verts, elems, mats, materials, validate=True) -> PolygonalMesh:
    used = sorted({v for ring in elems for v in ring})
    new_id = {v: i for i, v in enumerate(used)}
    return PolygonalMesh(np.asarray(verts)[used], [[new_id[v] for v in r] for r in elems],
                         mats, materials, validate=validate)


# ---------------------------------------------------------------------------
# refinement

def _as_mask(mesh: PolygonalMesh, marks) -> np.ndarray:
    marks = list(marks) if not isinstance(marks, np.ndarray) else marks
    mask = np.zeros(mesh.n_elements, dtype=bool)
    if isinstance(marks, np.ndarray) and marks.dtype == bool:
        if len(marks) != mesh.n_elements:
            raise ValueError("mark mask length differs from the element count")
        return marks.copy()
    for m in marks:
        if isinstance(m, RefinementMark):
            if not m.marked:
                continue
            m = m.element
        if not 0 <= int(m) < mesh.n_elements:
            raise ValueError(f"invalid element id {m}")
        mask[int(m)] = True
    return mask


def refine_polygonal(mesh: PolygonalMesh, marks) -> PolygonalMesh:
    """Split each marked convex element into quads via centroid and edge midpoints.

    Collinear runs of edges count as one edge when locating midpoints, so a
    coarse element next to earlier refinement is split along its geometric
    sides.  Unmarked neighbours receive the new midpoints as extra vertices.
    """
    mask = _as_mask(mesh, marks)
    X = [tuple(v) for v in mesh.vertices]
    registered: dict[tuple[int, int], list[tuple[float, int]]] = {}
    plans = {}

    def register(a: int, b: int, point) -> int:
        lo_, hi_ = (a, b) if a < b else (b, a)
        pa, pb = np.array(X[lo_]), np.array(X[hi_])
        t = float(np.dot(point - pa, pb - pa) / np.dot(pb - pa, pb - pa))
        bucket = registered.setdefault((lo_, hi_), [])
        for tt, vid in bucket:
            if abs(tt - t) < 1e-12:
                return vid
        vid = len(X)
        X.append(tuple(point))
        bucket.append((t, vid))
        return vid

    for k in np.flatnonzero(mask):
        ring = [int(v) for v in mesh.elements[k]]
        pts = mesh.vertices[ring]
        if not is_convex(pts):
            raise ConcaveRefineUnsupported(f"element {k} is concave")
        corners = np.flatnonzero(corner_mask(pts))
        n = len(ring)
        mids = []
        for ci, cj in zip(corners, np.roll(corners, -1)):
            chain = [(ci + s) % n for s in range(((cj - ci) % n) + 1)]
            a, b = pts[ci], pts[cj]
            m = 0.5 * (a + b)
            L = np.linalg.norm(b - a)
            hit = [ring[i] for i in chain[1:-1] if np.linalg.norm(pts[i] - m) <= 1e-10 * L]
            if hit:
                mids.append(hit[0])
                continue
            par = [np.dot(pts[i] - a, b - a) / L ** 2 for i in chain]
            seg = next(s for s in range(len(chain) - 1) if par[s] < 0.5 < par[s + 1])
            mids.append(register(ring[chain[seg]], ring[chain[seg + 1]], m))
        c = polygon_centroid(pts)
        cid = len(X)
        X.append(tuple(c))
        plans[k] = ([ring[i] for i in corners], mids, cid)

    Xa = np.array(X)

    def expand(ring):
        out = []
        for a, b in zip(ring, ring[1:] + ring[:1]):
            out.append(a)
            lo_, hi_ = (a, b) if a < b else (b, a)
            pts = sorted(registered.get((lo_, hi_), []))
            if a != lo_:
                pts = [(1 - t, v) for t, v in pts][::-1]
            out += [v for _, v in pts]
        return out

    elems, mats, parents = [], [], []
    for k, ring in enumerate(mesh.elements):
        full = expand([int(v) for v in ring])
        mat = int(mesh.element_material[k])
        if k not in plans:
            elems.append(full)
            mats.append(mat)
            parents.append(k)
            continue
        corners, mids, cid = plans[k]
        nc = len(corners)
        pos = {v: i for i, v in enumerate(full)}
        n = len(full)
        for i in range(nc):
            start, end = pos[mids[i - 1]], pos[mids[i]]
            span_ids = [full[(start + s) % n] for s in range(((end - start) % n) + 1)]
            elems.append(span_ids + [cid])
            mats.append(mat)
            parents.append(k)
    out = PolygonalMesh(Xa, elems, mats, mesh.materials)
    out.parent = np.array(parents, dtype=np.int64)
    out.refined = mask
    return out


def uniform_refine(mesh: PolygonalMesh) -> PolygonalMesh:
    return refine_polygonal(mesh, np.ones(mesh.n_elements, dtype=bool))
