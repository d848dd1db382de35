"""Simplicial meshes: construction, structured generators, geometry and angle audits.

A mesh is a triangulation (2D) or tetrahedralization (3D) given by a vertex
table and a cell table.  All angle machinery works through outward facet
normals: the angle attached to a vertex pair (i, j) of a cell is pi minus the
angle between the unit normals of the facets opposite i and j.  In 2D this
reproduces the classical vertex angles of a triangle; in 3D it gives the six
interior dihedral angles of a tetrahedron.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCell, DimensionMismatch, IndexOutOfRange, NonManifold

# Separates genuine right angles of structured meshes from rounding noise.
ANGLE_TOL = 1e-10

# Scale-aware degeneracy threshold: |T| < this * h_T^dim fails.
DEGENERACY_FACTOR = 1e-14


def barycentric_gradients(verts: np.ndarray) -> np.ndarray:
    """Gradients of the d+1 barycentric shape functions of one or many simplices.

    `verts` has shape (..., d+1, d); the result has the same shape, row i being
    the constant gradient of the shape function attached to vertex i.
    """
    d = verts.shape[-1]
    ones = np.ones(verts.shape[:-1] + (1,))
    m = np.concatenate([ones, verts], axis=-1)  # (..., d+1, d+1)
    minv = np.linalg.inv(m)
    # Column i of inv(m) holds the affine coefficients of shape function i.
    return np.swapaxes(minv[..., 1:, :], -1, -2)


class InvalidStructuredSpec(ValueError):
    """Bad parameters for a structured mesh generator."""


def _signed_measures(verts: np.ndarray) -> np.ndarray:
    d = verts.shape[-1]
    edges = verts[..., 1:, :] - verts[..., :1, :]
    fact = 2.0 if d == 2 else 6.0
    return np.linalg.det(edges) / fact


def _pairwise_diameters(verts: np.ndarray) -> np.ndarray:
    """Max pairwise vertex distance per simplex; verts (..., d+1, d)."""
    diff = verts[..., :, None, :] - verts[..., None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1)).max(axis=(-1, -2))


@dataclass(frozen=True)
class Mesh:
    """Immutable simplicial mesh with cached per-cell geometry.

    Attributes
    ----------
    dim : 2 or 3.
    vertices : (n_vertices, dim) float array.
    cells : (n_cells, dim+1) int array, positively oriented.
    boundary_nodes : frozenset of vertex indices on the boundary.
    cell_measures : per-cell area/volume, all positive.
    cell_diameters : per-cell max pairwise vertex distance.
    h : mesh size, max of cell_diameters.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_nodes: frozenset
    cell_measures: np.ndarray
    cell_diameters: np.ndarray
    h: float

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def total_measure(self) -> float:
        return float(self.cell_measures.sum())

    def cell_vertices(self, cell: int) -> np.ndarray:
        return self.vertices[self.cells[cell]]

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_vertices, dtype=bool)
        mask[list(self.boundary_nodes)] = True
        return mask


@dataclass(frozen=True)
class InteriorEdge:
    """An edge shared by exactly two triangles, with the two opposite angles."""

    node_m: int
    node_n: int
    adjacent_cells: tuple
    opposite_angles: tuple  # (alpha, beta) radians, ordered like adjacent_cells


@dataclass(frozen=True)
class MacroElement:
    """The patch of cells sharing one vertex and its total measure."""

    node: int
    cells: tuple
    measure: float


@dataclass(frozen=True)
class AngleReport:
    """Result of an acuteness audit over all cells.

    `gamma_fit` is the smallest value of (pi/2 - angle) / h**acute_exponent over
    every cell and vertex pair; it is positive exactly when every angle is
    strictly below pi/2 (up to tolerance).
    """

    cell_angles: np.ndarray  # (n_cells, n_pairs)
    max_angle: float
    min_angle: float
    classification: str  # 'acute' | 'non-obtuse' | 'obtuse'
    gamma_fit: float
    acute_exponent: float
    shape_ratio: float  # max over cells of h_T^dim / |T|; reported, not enforced
    angle_tol: float = ANGLE_TOL

    def to_dict(self) -> dict:
        return {
            "max_angle": self.max_angle,
            "min_angle": self.min_angle,
            "classification": self.classification,
            "gamma_fit": self.gamma_fit,
            "acute_exponent": self.acute_exponent,
            "shape_ratio": self.shape_ratio,
        }


def _facets_of_cell(cell: np.ndarray) -> list:
    n = len(cell)
    return [tuple(sorted(np.delete(cell, i))) for i in range(n)]


def build_mesh(vertices, cells) -> Mesh:
    """Validate raw vertex/cell arrays and assemble a `Mesh`.

    Cells with negative orientation are silently repaired by swapping their
    last two vertices.  Raises `IndexOutOfRange`, `DegenerateCell` or
    `NonManifold` on malformed input.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
        raise DimensionMismatch(f"vertices must be (n, 2) or (n, 3), got {vertices.shape}")
    dim = vertices.shape[1]
    if cells.ndim != 2 or cells.shape[1] != dim + 1:
        raise DimensionMismatch(f"cells must be (n, {dim + 1}) for dim={dim}, got {cells.shape}")

    nv = vertices.shape[0]
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise IndexOutOfRange(f"cell vertex index outside [0, {nv})")
    for k, cell in enumerate(cells):
        if len(set(cell.tolist())) != dim + 1:
            raise DegenerateCell(f"cell {k} repeats a vertex: {cell.tolist()}")

    cells = cells.copy()
    signed = _signed_measures(vertices[cells])
    flip = signed < 0
    if flip.any():
        cells[np.ix_(flip, [dim - 1, dim])] = cells[np.ix_(flip, [dim, dim - 1])]
        signed = np.abs(signed)
    measures = np.abs(signed)

    diameters = _pairwise_diameters(vertices[cells])
    degenerate = measures < DEGENERACY_FACTOR * diameters ** dim
    if degenerate.any():
        k = int(np.argmax(degenerate))
        raise DegenerateCell(f"cell {k} has measure {measures[k]:.3e} below threshold")

    facet_count: dict = {}
    for cell in cells:
        for facet in _facets_of_cell(cell):
            facet_count[facet] = facet_count.get(facet, 0) + 1
    for facet, count in facet_count.items():
        if count > 2:
            raise NonManifold(f"facet {facet} shared by {count} cells")
    boundary = set()
    for facet, count in facet_count.items():
        if count == 1:
            boundary.update(facet)

    return Mesh(
        dim=dim,
        vertices=vertices,
        cells=cells,
        boundary_nodes=frozenset(int(i) for i in boundary),
        cell_measures=measures,
        cell_diameters=diameters,
        h=float(diameters.max()) if len(diameters) else 0.0,
    )


def generate_structured_2d(nx: int, ny: int, pattern: str = "right-diagonal",
                           skew: float = 0.0) -> Mesh:
    """Triangulate the unit square on an nx-by-ny lattice.

    `right-diagonal` splits every lattice square along the up-right diagonal
    (two right isoceles triangles for skew=0); `crisscross` adds the square's
    midpoint and four triangles.  `skew` in [0, 1) shears x by skew*y, which
    produces obtuse angles once large enough.
    """
    if nx < 1 or ny < 1:
        raise InvalidStructuredSpec(f"grid counts must be >= 1, got {nx}x{ny}")
    if not 0.0 <= skew < 1.0:
        raise InvalidStructuredSpec(f"skew must be in [0, 1), got {skew}")
    if pattern not in ("right-diagonal", "crisscross"):
        raise InvalidStructuredSpec(f"unknown pattern {pattern!r}")

    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    index = {}
    verts = []
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            index[(i, j)] = len(verts)
            verts.append((x + skew * y, y))

    cells = []
    if pattern == "right-diagonal":
        for j in range(ny):
            for i in range(nx):
                v00, v10 = index[(i, j)], index[(i + 1, j)]
                v01, v11 = index[(i, j + 1)], index[(i + 1, j + 1)]
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
    else:
        for j in range(ny):
            for i in range(nx):
                v00, v10 = index[(i, j)], index[(i + 1, j)]
                v01, v11 = index[(i, j + 1)], index[(i + 1, j + 1)]
                cx = 0.5 * (verts[v00][0] + verts[v11][0])
                cy = 0.5 * (verts[v00][1] + verts[v11][1])
                vc = len(verts)
                verts.append((cx, cy))
                cells.append((v00, v10, vc))
                cells.append((v10, v11, vc))
                cells.append((v11, v01, vc))
                cells.append((v01, v00, vc))
    return build_mesh(np.array(verts), np.array(cells))


_KUHN_PERMUTATIONS = list(itertools.permutations(range(3)))


def generate_structured_3d(nx: int, ny: int, nz: int) -> Mesh:
    """Tetrahedralize the unit cube: each lattice cube splits into 6 path
    tetrahedra sharing the main diagonal (all dihedral angles <= pi/2)."""
    if nx < 1 or ny < 1 or nz < 1:
        raise InvalidStructuredSpec(f"grid counts must be >= 1, got {nx}x{ny}x{nz}")

    counts = (nx, ny, nz)
    steps = [np.linspace(0.0, 1.0, n + 1) for n in counts]
    index = {}
    verts = []
    for k, z in enumerate(steps[2]):
        for j, y in enumerate(steps[1]):
            for i, x in enumerate(steps[0]):
                index[(i, j, k)] = len(verts)
                verts.append((x, y, z))

    cells = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                base = np.array((i, j, k))
                for perm in _KUHN_PERMUTATIONS:
                    corner = base.copy()
                    tet = [index[tuple(corner)]]
                    for axis in perm:
                        corner[axis] += 1
                        tet.append(index[tuple(corner)])
                    cells.append(tet)
    return build_mesh(np.array(verts), np.array(cells))


def outward_normals(mesh: Mesh, cell: int) -> np.ndarray:
    """Unit outward normals of facets opposite each vertex of one cell."""
    grads = barycentric_gradients(mesh.cell_vertices(cell))
    norms = np.linalg.norm(grads, axis=-1)
    if np.any(norms == 0.0):
        raise DegenerateCell(f"cell {cell} yields zero shape gradients")
    return -grads / norms[:, None]


def element_angles(mesh: Mesh, cell: int) -> np.ndarray:
    """Angles attached to vertex pairs of one cell, ordered (0,1), (0,2), ...

    Each entry is pi minus the angle between the outward normals of the facets
    opposite the two vertices: triangle vertex angles in 2D, interior dihedral
    angles in 3D.
    """
    normals = outward_normals(mesh, cell)
    n = normals.shape[0]
    angles = []
    for i in range(n):
        for j in range(i + 1, n):
            c = float(np.clip(normals[i] @ normals[j], -1.0, 1.0))
            angles.append(np.pi - np.arccos(c))
    return np.array(angles)


def _all_element_angles(mesh: Mesh) -> np.ndarray:
    """Vectorized `element_angles` over every cell: (n_cells, n_pairs)."""
    grads = barycentric_gradients(mesh.vertices[mesh.cells])
    norms = np.linalg.norm(grads, axis=-1)
    normals = -grads / norms[..., None]
    pairs = list(itertools.combinations(range(mesh.dim + 1), 2))
    cols = []
    for i, j in pairs:
        c = np.clip(np.einsum("cd,cd->c", normals[:, i], normals[:, j]), -1.0, 1.0)
        cols.append(np.pi - np.arccos(c))
    return np.stack(cols, axis=1)


def acuteness_audit(mesh: Mesh, alpha_exponent: float = 0.0) -> AngleReport:
    """Scan all angles and classify the mesh.

    classification: 'obtuse' iff some angle exceeds pi/2 + tol, 'acute' iff all
    are below pi/2 - tol, else 'non-obtuse'.  gamma_fit is the binding constant
    of the margin (pi/2 - angle) measured against h**alpha_exponent.
    """
    if alpha_exponent < 0:
        raise InvalidStructuredSpec("alpha_exponent must be >= 0")
    angles = _all_element_angles(mesh)
    max_angle = float(angles.max())
    min_angle = float(angles.min())
    if max_angle > np.pi / 2 + ANGLE_TOL:
        classification = "obtuse"
    elif max_angle < np.pi / 2 - ANGLE_TOL:
        classification = "acute"
    else:
        classification = "non-obtuse"
    scale = mesh.h ** alpha_exponent
    gamma_fit = float(((np.pi / 2 - angles) / scale).min())
    shape_ratio = float((mesh.cell_diameters ** mesh.dim / mesh.cell_measures).max())
    return AngleReport(
        cell_angles=angles,
        max_angle=max_angle,
        min_angle=min_angle,
        classification=classification,
        gamma_fit=gamma_fit,
        acute_exponent=alpha_exponent,
        shape_ratio=shape_ratio,
    )


def _vertex_angle(verts: np.ndarray, at: int, others: tuple) -> float:
    u = verts[others[0]] - verts[at]
    v = verts[others[1]] - verts[at]
    c = float(np.clip(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0))
    return float(np.arccos(c))


def interior_edges_2d(mesh: Mesh) -> list:
    """All triangle edges shared by exactly two cells, with opposite angles."""
    if mesh.dim != 2:
        raise DimensionMismatch("interior edges with opposite angles are 2D only")
    edge_cells: dict = {}
    for t, cell in enumerate(mesh.cells):
        for facet in _facets_of_cell(cell):
            edge_cells.setdefault(facet, []).append(t)

    edges = []
    for (m, n), owners in sorted(edge_cells.items()):
        if len(owners) != 2:
            continue
        angles = []
        for t in owners:
            cell = mesh.cells[t]
            local = {int(v): k for k, v in enumerate(cell)}
            opposite = next(k for v, k in local.items() if v not in (m, n))
            angles.append(_vertex_angle(mesh.cell_vertices(t), opposite,
                                        (local[int(m)], local[int(n)])))
        edges.append(InteriorEdge(
            node_m=int(m), node_n=int(n),
            adjacent_cells=tuple(int(t) for t in owners),
            opposite_angles=tuple(angles),
        ))
    return edges


def macro_elements(mesh: Mesh) -> list:
    """Per-vertex incidence patches; their measures weight the discrete norms."""
    incidence: list = [[] for _ in range(mesh.num_vertices)]
    for t, cell in enumerate(mesh.cells):
        for v in cell:
            incidence[int(v)].append(t)
    return [
        MacroElement(node=j, cells=tuple(ts),
                     measure=float(mesh.cell_measures[ts].sum()) if ts else 0.0)
        for j, ts in enumerate(incidence)
    ]


def macro_measures(mesh: Mesh) -> np.ndarray:
    """Vector of macro-element measures, one per vertex."""
    out = np.zeros(mesh.num_vertices)
    np.add.at(out, mesh.cells.ravel(), np.repeat(mesh.cell_measures, mesh.dim + 1))
    return out


# -- serialization ------------------------------------------------------------

def mesh_to_dict(mesh: Mesh) -> dict:
    return {
        "dim": mesh.dim,
        "vertices": mesh.vertices.tolist(),
        "cells": mesh.cells.tolist(),
        "boundary_nodes": sorted(mesh.boundary_nodes),
    }


def mesh_from_dict(data: dict) -> Mesh:
    mesh = build_mesh(data["vertices"], data["cells"])
    if "boundary_nodes" in data and data["boundary_nodes"] is not None:
        stored = frozenset(int(i) for i in data["boundary_nodes"])
        if stored != mesh.boundary_nodes:
            raise NonManifold("stored boundary_nodes disagree with facet incidence")
    if mesh.dim != int(data["dim"]):
        raise DimensionMismatch("stored dim disagrees with vertex coordinates")
    return mesh


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(mesh_to_dict(mesh), fp)
        fp.write("\n")


def load_mesh(path) -> Mesh:
    with open(path, encoding="utf-8") as fp:
        return mesh_from_dict(json.load(fp))


def write_vtk(path, mesh: Mesh, point_data: dict | None = None,
              title: str = "dmpfem mesh") -> None:
    """Legacy ASCII VTK writer (UNSTRUCTURED_GRID, cell types 5 / 10)."""
    cell_type = 5 if mesh.dim == 2 else 10
    npts = mesh.num_vertices
    ncell = mesh.num_cells
    with open(path, "w", encoding="utf-8") as fp:
        fp.write("# vtk DataFile Version 3.0\n")
        fp.write(f"{title}\n")
        fp.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fp.write(f"POINTS {npts} double\n")
        for p in mesh.vertices:
            x, y = p[0], p[1]
            z = p[2] if mesh.dim == 3 else 0.0
            fp.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        fp.write(f"CELLS {ncell} {ncell * (mesh.dim + 2)}\n")
        for cell in mesh.cells:
            fp.write(f"{mesh.dim + 1} " + " ".join(str(int(v)) for v in cell) + "\n")
        fp.write(f"CELL_TYPES {ncell}\n")
        for _ in range(ncell):
            fp.write(f"{cell_type}\n")
        if point_data:
            fp.write(f"POINT_DATA {npts}\n")
            for name, values in point_data.items():
                fp.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in np.asarray(values, dtype=float):
                    fp.write(f"{v:.17g}\n")
