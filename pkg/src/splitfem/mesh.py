"""Structured triangulations of the unit square."""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError

SIDES = ("bottom", "right", "top", "left")
SIDE_NORMALS = {
    "bottom": (0.0, -1.0),
    "right": (1.0, 0.0),
    "top": (0.0, 1.0),
    "left": (-1.0, 0.0),
}


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Conforming triangle mesh of [0, 1]^2.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_edges : (nb, 2) int array, oriented counterclockwise around the domain
    boundary_normals : (nb, 2) outward unit normals
    boundary_tags : (nb,) array of side names
    n : subdivision count for structured meshes (used for fast point location)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    boundary_tags: np.ndarray
    n: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_edges,
                    self.boundary_normals, self.boundary_tags):
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def signed_areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def h(self):
        """Largest triangle diameter."""
        p = self.vertices[self.triangles]
        lens = [np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)]
        return float(np.max(lens))

    @cached_property
    def edges(self):
        """Unique undirected edges ``(nE, 2)`` with ``edges[:, 0] < edges[:, 1]``."""
        return self._edge_data[0]

    @cached_property
    def triangle_edges(self):
        """Edge index of local edges (0,1), (1,2), (2,0) for each triangle."""
        return self._edge_data[1]

    @cached_property
    def _edge_data(self):
        t = self.triangles
        local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
        local = np.sort(local, axis=1)
        edges, inverse = np.unique(local, axis=0, return_inverse=True)
        edges.setflags(write=False)
        tri_edges = inverse.reshape(-1, 3)
        tri_edges.setflags(write=False)
        return edges, tri_edges

    @cached_property
    def edge_triangle_count(self):
        return np.bincount(self.triangle_edges.ravel(), minlength=len(self.edges))

    @cached_property
    def boundary_edge_owner(self):
        """For each boundary edge: (triangle index, local edge number 0..2)."""
        lookup = {}
        t = self.triangles
        for k in range(3):
            a = t[:, k]
            b = t[:, (k + 1) % 3]
            for e, (i, j) in enumerate(zip(a, b)):
                lookup[(int(i), int(j))] = (e, k)
        owner = np.empty((len(self.boundary_edges), 2), dtype=np.int64)
        for idx, (i, j) in enumerate(self.boundary_edges):
            owner[idx] = lookup[(int(i), int(j))]
        owner.setflags(write=False)
        return owner

    @cached_property
    def boundary_vertices(self):
        return np.unique(self.boundary_edges)

    def locate(self, points):
        """Return (triangle index, barycentric coordinates) for each point.

        Only implemented for structured meshes built by
        :func:`build_uniform_unit_square`.
        """
        if self.n is None:
            raise InvalidArgumentError("point location requires a structured mesh")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n
        i = np.clip(np.floor(pts[:, 0] * n).astype(int), 0, n - 1)
        j = np.clip(np.floor(pts[:, 1] * n).astype(int), 0, n - 1)
        fx = pts[:, 0] * n - i
        fy = pts[:, 1] * n - j
        upper = fy > fx
        tri = 2 * (j * n + i) + upper.astype(int)
        verts = self.vertices[self.triangles[tri]]
        bary = barycentric(verts, pts)
        return tri, bary


def barycentric(tri_vertices, pts):
    """Barycentric coordinates of ``pts[k]`` in triangle ``tri_vertices[k]``."""
    v0 = tri_vertices[:, 0]
    d1 = tri_vertices[:, 1] - v0
    d2 = tri_vertices[:, 2] - v0
    r = pts - v0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def build_uniform_unit_square(n):
    """Uniform mesh of [0,1]^2 with ``n`` cells per side.

    Each square cell is split along its lower-left to upper-right diagonal,
    giving ``(n+1)**2`` vertices, ``2 n**2`` triangles and ``4 n`` boundary
    edges. Vertex ``(i, j)`` at ``(i/n, j/n)`` has index ``j*(n+1) + i``.
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgumentError(f"mesh subdivision must be a positive integer, got {n!r}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i = i.ravel()
    j = j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    k = np.arange(n)
    edges, normals, tags = [], [], []
    sides = {
        "bottom": (k, k + 1),
        "right": (k * (n + 1) + n, (k + 1) * (n + 1) + n),
        "top": (n * (n + 1) + n - k, n * (n + 1) + n - k - 1),
        "left": ((n - k) * (n + 1), (n - k - 1) * (n + 1)),
    }
    for side in SIDES:
        a, b = sides[side]
        edges.append(np.column_stack([a, b]))
        normals.append(np.tile(SIDE_NORMALS[side], (n, 1)))
        tags.append(np.full(n, side))
    return TriangleMesh(
        vertices=vertices,
        triangles=triangles,
        boundary_edges=np.vstack(edges).astype(np.int64),
        boundary_normals=np.vstack(normals),
        boundary_tags=np.concatenate(tags),
        n=n,
    )


def write_vtk(path, mesh, point_data=None, title="splitfem"):
    """Write an ASCII legacy VTK unstructured grid with triangle cells.

    ``point_data`` maps names to arrays of length ``n_vertices`` (scalars) or
    shape ``(n_vertices, 2)`` (vectors, padded with a zero z-component).
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines.extend(f"{x:.16e} {y:.16e} 0.0" for x, y in mesh.vertices)
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.16e}" for v in values)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{u:.16e} {v:.16e} 0.0" for u, v in values)
    text = "\n".join(lines) + "\n"
    from .io import atomic_write_text

    atomic_write_text(path, text)
