import math

import numpy as np
import pytest

from polydpg.mesh import distorted_tessellation, interface_cut, load_fixture, uniform_grid

THETA = math.atan(1 / 0.65)


def random_convex_polygon(rng, n=None, scale=1.0):
    """Vertices on a circle, so the polygon is convex."""
    n = n or int(rng.integers(3, 12))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    while np.min(np.diff(np.r_[ang, ang[0] + 2 * np.pi])) < 0.05:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    c = rng.uniform(-2, 2, 2)
    return c + scale * np.column_stack([np.cos(ang), np.sin(ang)])


def random_star_polygon(rng, n=None):
    """Star-shaped (often concave) polygon around a random centre."""
    n = n or int(rng.integers(5, 14))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    gaps = lambda a: np.diff(np.r_[a, a[0] + 2 * np.pi])  # noqa: E731
    while gaps(ang).min() < 0.1 or gaps(ang).max() > 0.9 * np.pi:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = rng.uniform(0.4, 1.0, n)
    c = rng.uniform(-1, 1, 2)
    return c + np.column_stack([r * np.cos(ang), r * np.sin(ang)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fixture_meshes():
    """One mesh from each family used by the algebraic checks."""
    return {
        "grid": uniform_grid(4),
        "polygons": load_fixture("polygons_0"),
        "distorted": distorted_tessellation(1),
        "interface": interface_cut(uniform_grid(8), 0.12, THETA),
    }


# pass/fail lines collected by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
