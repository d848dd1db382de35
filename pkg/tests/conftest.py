"""Shared geometry builders and independent oracles for the test suite."""
from __future__ import annotations

import math

import numpy as np
import pytest

from dmpfem.mesh import Mesh, build_mesh


@pytest.fixture
def reference_triangle() -> Mesh:
    return build_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


@pytest.fixture
def reference_tet() -> Mesh:
    return build_mesh(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        [[0, 1, 2, 3]])


def equilateral_mesh(nx: int, ny: int) -> Mesh:
    """Parallelogram domain tiled by unit equilateral triangles."""
    verts = []
    index = {}
    for j in range(ny + 1):
        for i in range(nx + 1):
            index[(i, j)] = len(verts)
            verts.append((i + 0.5 * j, j * math.sqrt(3.0) / 2.0))
    cells = []
    for j in range(ny):
        for i in range(nx):
            cells.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            cells.append((index[(i + 1, j)], index[(i + 1, j + 1)],
                          index[(i, j + 1)]))
    return build_mesh(np.array(verts), np.array(cells))


def adjacent_pair(alpha: float, beta: float, base: float = 1.0) -> Mesh:
    """Two triangles sharing the segment (0,0)-(base,0), with apex angles
    alpha below and beta above the shared edge."""
    assert 0.0 < alpha < math.pi and 0.0 < beta < math.pi
    da = 0.5 * base / math.tan(alpha / 2.0)
    db = 0.5 * base / math.tan(beta / 2.0)
    verts = np.array([
        [0.0, 0.0], [base, 0.0],
        [0.5 * base, -da], [0.5 * base, db],
    ])
    return build_mesh(verts, np.array([[0, 1, 2], [0, 1, 3]]))


def triangle_vertex_angles(verts: np.ndarray) -> np.ndarray:
    """Law-of-cosines vertex angles of a triangle, one per vertex."""
    out = []
    for i in range(3):
        u = verts[(i + 1) % 3] - verts[i]
        v = verts[(i + 2) % 3] - verts[i]
        c = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
        out.append(math.acos(max(-1.0, min(1.0, c))))
    return np.array(out)


def brute_force_dihedrals(verts: np.ndarray) -> np.ndarray:
    """Interior dihedral angles of a tetrahedron from cross-product facet
    normals, independent of the shape-function route."""
    centroid = verts.mean(axis=0)
    normals = []
    for i in range(4):
        facet = np.delete(np.arange(4), i)
        a, b, c = verts[facet]
        n = np.cross(b - a, c - a)
        n = n / np.linalg.norm(n)
        if n @ (a - centroid) < 0:
            n = -n
        normals.append(n)
    angles = []
    for i in range(4):
        for j in range(i + 1, 4):
            c = float(np.clip(normals[i] @ normals[j], -1.0, 1.0))
            angles.append(math.pi - math.acos(c))
    return np.array(angles)


def random_triangle(rng: np.random.Generator, min_angle: float = 0.2,
                    right_angle_gap: float = 0.05) -> np.ndarray:
    """Vertices of a random triangle with all angles bounded away from
    degeneracy and from right angles (where cotangents vanish)."""
    while True:
        verts = rng.uniform(0.0, 1.0, size=(3, 2))
        area = 0.5 * abs(np.linalg.det(verts[1:] - verts[0]))
        if area < 1e-3:
            continue
        angles = triangle_vertex_angles(verts)
        if angles.min() < min_angle:
            continue
        if np.abs(angles - math.pi / 2.0).min() < right_angle_gap:
            continue
        return verts


def random_nodal_field(mesh: Mesh, rng: np.random.Generator, scale: float = 1.0):
    from dmpfem.p1 import P1Field
    return P1Field(mesh, rng.uniform(-scale, scale, size=mesh.num_vertices))
