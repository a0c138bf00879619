"""Regenerate the convex polygonal fixture meshes in src/polydpg/data.

Lloyd-relaxed Voronoi tessellations of the unit square; seeds are mirrored
across the four sides so the square's edges come out as cell boundaries.
Run once; the output is checked in.

    python scripts/make_polygon_fixtures.py
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial import Voronoi

from polydpg.geometry import is_convex, polygon_centroid, signed_area
from polydpg.mesh import PolygonalMesh, mesh_stats, save_mesh

OUT = Path(__file__).resolve().parents[1] / "src" / "polydpg" / "data"
SEEDS = [16, 64, 256, 1024]


def mirrored(seeds):
    x, y = seeds[:, 0], seeds[:, 1]
    return np.vstack([seeds,
                      np.column_stack([-x, y]), np.column_stack([2 - x, y]),
                      np.column_stack([x, -y]), np.column_stack([x, 2 - y])])


def cells(seeds):
    vor = Voronoi(mirrored(seeds))
    out = []
    for i in range(len(seeds)):
        region = vor.regions[vor.point_region[i]]
        pts = vor.vertices[region]
        ang = np.arctan2(pts[:, 1] - seeds[i, 1], pts[:, 0] - seeds[i, 0])
        out.append(np.clip(pts[np.argsort(ang)], 0.0, 1.0))
    return out


def lloyd(n, rng, iterations=300):
    seeds = rng.random((n, 2))
    for _ in range(iterations):
        seeds = np.array([polygon_centroid(c) for c in cells(seeds)])
    return seeds


def build_mesh(polys, merge_fraction=0.15):
    key = {}
    verts = []
    rings = []
    for poly in polys:
        ring = []
        for p in poly:
            k = tuple(np.round(p, 9))
            if k not in key:
                key[k] = len(verts)
                verts.append(p.copy())
            ring.append(key[k])
        rings.append(ring)
    verts = np.array(verts)
    lengths = [np.linalg.norm(verts[a] - verts[b]) for r in rings for a, b in zip(r, r[1:] + r[:1])]
    tiny = merge_fraction * np.median(lengths)

    def on_boundary(p):
        return int(np.sum((np.abs(p) < 1e-9) | (np.abs(p - 1) < 1e-9)))

    remap = np.arange(len(verts))
    for r in rings:
        for a, b in zip(r, r[1:] + r[:1]):
            a, b = remap[a], remap[b]
            if a == b or np.linalg.norm(verts[a] - verts[b]) >= tiny:
                continue
            ba, bb = on_boundary(verts[a]), on_boundary(verts[b])
            if ba == 2 and bb == 2:
                continue
            if ba > bb:
                keep, drop = a, b
            elif bb > ba:
                keep, drop = b, a
            else:
                verts[a] = 0.5 * (verts[a] + verts[b])
                keep, drop = a, b
            remap[remap == drop] = keep
    new_rings = []
    for r in rings:
        rr = [int(remap[v]) for v in r]
        rr = [v for i, v in enumerate(rr) if v != rr[i - 1]]
        if signed_area(verts[rr]) < 0:
            rr = rr[::-1]
        assert is_convex(verts[rr]), "merge produced a concave cell"
        new_rings.append(rr)
    used = sorted({v for r in new_rings for v in r})
    idx = {v: i for i, v in enumerate(used)}
    return PolygonalMesh(verts[used], [[idx[v] for v in r] for r in new_rings])


def main():
    rng = np.random.default_rng(20180601)
    OUT.mkdir(parents=True, exist_ok=True)
    for level, n in enumerate(SEEDS):
        mesh = build_mesh(cells(lloyd(n, rng)))
        save_mesh(mesh, OUT / f"polygons_{level}.mesh")
        print(level, mesh_stats(mesh))


if __name__ == "__main__":
    main()
