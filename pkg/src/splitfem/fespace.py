"""Lagrange P1/P2 spaces, interpolation and inflow-boundary classification."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError, NumericInputError
from .mesh import SIDES, TriangleMesh

# Gradients of the barycentric coordinates on the reference triangle.
_REF_GRAD_LAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
# Local edge k of a triangle joins vertices _EDGE_VERTS[k].
_EDGE_VERTS = ((0, 1), (1, 2), (2, 0))


def n_local(degree):
    return 3 if degree == 1 else 6


def basis_values(degree, bary):
    """Basis functions at barycentric points ``bary`` (nq, 3) -> (nq, nloc)."""
    lam = np.asarray(bary, dtype=float)
    if degree == 1:
        return lam.copy()
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=-1)


def basis_gradients(degree, bary, grad_lambda):
    """Physical gradients of the basis.

    Parameters
    ----------
    bary : (nq, 3) barycentric points shared by all elements, or (ne, nq, 3)
    grad_lambda : (ne, 3, 2) physical gradients of the barycentric coordinates

    Returns
    -------
    (ne, nq, nloc, 2)
    """
    lam = np.asarray(bary, dtype=float)
    ne = grad_lambda.shape[0]
    if lam.ndim == 2:
        lam = np.broadcast_to(lam, (ne,) + lam.shape)
    nq = lam.shape[1]
    if degree == 1:
        return np.broadcast_to(grad_lambda[:, None, :, :], (ne, nq, 3, 2))
    g = grad_lambda[:, None, :, :]  # (ne, 1, 3, 2)
    L = lam[..., :, None]  # (ne, nq, 3, 1)
    out = np.empty((ne, nq, 6, 2))
    out[:, :, 0:3] = (4 * L - 1) * g
    for k, (a, b) in enumerate(_EDGE_VERTS):
        out[:, :, 3 + k] = 4 * (L[:, :, a] * g[:, :, b] + L[:, :, b] * g[:, :, a])
    return out


def basis_hessians(degree, grad_lambda):
    """Element-constant Hessians of the basis, shape (ne, nloc, 2, 2)."""
    ne = grad_lambda.shape[0]
    if degree == 1:
        return np.zeros((ne, 3, 2, 2))
    g = grad_lambda
    out = np.empty((ne, 6, 2, 2))
    for k in range(3):
        out[:, k] = 4 * np.einsum("ei,ej->eij", g[:, k], g[:, k])
    for k, (a, b) in enumerate(_EDGE_VERTS):
        ab = np.einsum("ei,ej->eij", g[:, a], g[:, b])
        out[:, 3 + k] = 4 * (ab + ab.transpose(0, 2, 1))
    return out


def element_geometry(mesh):
    """Jacobian determinants (ne,) and barycentric gradients (ne, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    invJ = np.empty_like(J)
    invJ[:, 0, 0] = J[:, 1, 1] / det
    invJ[:, 1, 1] = J[:, 0, 0] / det
    invJ[:, 0, 1] = -J[:, 0, 1] / det
    invJ[:, 1, 0] = -J[:, 1, 0] / det
    # grad(lambda_k) = invJ^T grad_ref(lambda_k)
    grad_lambda = np.einsum("eji,kj->eki", invJ, _REF_GRAD_LAMBDA)
    return det, grad_lambda


@dataclass(frozen=True, eq=False)
class FeSpace:
    """Continuous Lagrange space of degree 1 or 2 with 1 or 2 components.

    Vector DOFs are blocked by component: component ``c`` of scalar node ``i``
    has global index ``c * n_nodes + i``.
    """

    mesh: TriangleMesh
    degree: int
    components: int
    node_coords: np.ndarray  # (n_nodes, 2)
    scalar_cell_dofs: np.ndarray  # (ne, nloc)
    boundary_nodes: dict  # side -> scalar node indices

    @property
    def n_nodes(self):
        return len(self.node_coords)

    @property
    def n_dofs(self):
        return self.components * self.n_nodes

    @property
    def n_local(self):
        return n_local(self.degree)

    @cached_property
    def dof_coords(self):
        return np.tile(self.node_coords, (self.components, 1))

    @cached_property
    def cell_dofs(self):
        d = self.scalar_cell_dofs
        return np.hstack([d + c * self.n_nodes for c in range(self.components)])

    def expand(self, nodes):
        """Global DOF indices of all components for scalar ``nodes``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        return np.concatenate([nodes + c * self.n_nodes for c in range(self.components)])

    @cached_property
    def boundary_dofs(self):
        return {side: self.expand(nodes) for side, nodes in self.boundary_nodes.items()}

    @cached_property
    def all_boundary_nodes(self):
        return np.unique(np.concatenate(list(self.boundary_nodes.values())))

    @cached_property
    def all_boundary_dofs(self):
        return self.expand(self.all_boundary_nodes)

    @cached_property
    def interior_dofs(self):
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.all_boundary_dofs] = False
        return np.flatnonzero(mask)

    @cached_property
    def boundary_edge_nodes(self):
        """Scalar nodes on each boundary edge: endpoints, plus midpoint for P2."""
        mesh = self.mesh
        cols = [mesh.boundary_edges[:, 0], mesh.boundary_edges[:, 1]]
        if self.degree == 2:
            tri, k = mesh.boundary_edge_owner.T
            cols.append(mesh.n_vertices + mesh.triangle_edges[tri, k])
        return np.column_stack(cols)

    @cached_property
    def geometry(self):
        return element_geometry(self.mesh)

    def scalar_part(self):
        """The one-component space on the same nodes."""
        if self.components == 1:
            return self
        return FeSpace(self.mesh, self.degree, 1, self.node_coords,
                       self.scalar_cell_dofs, self.boundary_nodes)

    def split(self, coeffs):
        """View a coefficient vector as (components, n_nodes)."""
        return np.asarray(coeffs).reshape(self.components, self.n_nodes)

    def evaluate(self, coeffs, points):
        """Evaluate the FE function at ``points`` (npts, 2).

        Returns shape (npts,) for scalar and (2, npts) for vector spaces.
        """
        tri, bary = self.mesh.locate(points)
        phi = basis_values(self.degree, bary)  # (npts, nloc)
        local = self.scalar_cell_dofs[tri]  # (npts, nloc)
        vals = [np.sum(c[local] * phi, axis=1) for c in self.split(coeffs)]
        return vals[0] if self.components == 1 else np.stack(vals)


def build_space(mesh, degree, components=1):
    if degree not in (1, 2):
        raise InvalidArgumentError(f"degree must be 1 or 2, got {degree!r}")
    if components not in (1, 2):
        raise InvalidArgumentError(f"components must be 1 or 2, got {components!r}")
    nv = mesh.n_vertices
    if degree == 1:
        coords = mesh.vertices
        cell = mesh.triangles
    else:
        e = mesh.edges
        coords = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])])
        cell = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
    boundary = {}
    for side in SIDES:
        sel = mesh.boundary_tags == side
        nodes = [mesh.boundary_edges[sel].ravel()]
        if degree == 2:
            tri, k = mesh.boundary_edge_owner[sel].T
            nodes.append(nv + mesh.triangle_edges[tri, k])
        arr = np.unique(np.concatenate(nodes))
        arr.setflags(write=False)
        boundary[side] = arr
    coords = np.ascontiguousarray(coords)
    coords.setflags(write=False)
    cell = np.ascontiguousarray(cell, dtype=np.int64)
    cell.setflags(write=False)
    return FeSpace(mesh, degree, components, coords, cell, boundary)


def eval_field(g, x, y, t, components=1):
    """Evaluate a space-time function and broadcast to the point shape.

    Scalars come back shaped like ``x``; vectors as ``(2,) + x.shape``.
    """
    val = np.asarray(g(x, y, t), dtype=float)
    shape = np.shape(x)
    if components == 1:
        return np.broadcast_to(val, shape)
    if val.shape[:1] != (2,):
        raise InvalidArgumentError("vector field must return a length-2 leading axis")
    return np.stack([np.broadcast_to(val[0], shape), np.broadcast_to(val[1], shape)])


def interpolate(space, g, t=0.0):
    """Nodal interpolant of ``g(x, y, t)`` as a coefficient vector."""
    x, y = space.node_coords.T
    vals = eval_field(g, x, y, t, space.components)
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = np.argwhere(bad)[0]
        node = int(idx[-1])
        loc = tuple(space.node_coords[node])
        raise NumericInputError(f"non-finite value at DOF node {node} {loc}", location=loc)
    return np.array(vals, dtype=float).ravel()


@dataclass(frozen=True)
class InflowSet:
    """Inflow portion of the boundary for a given advecting field and time."""

    time: float
    dof_indices: np.ndarray
    edge_indices: np.ndarray

    def __len__(self):
        return len(self.dof_indices)

    @cached_property
    def key(self):
        return self.dof_indices.tobytes()


def classify_inflow(space, b, t):
    """Boundary DOFs and edges where ``b(x, t) . n < 0``.

    ``space`` may be an :class:`FeSpace` or a bare mesh (treated as P1 scalar).
    A node is inflow if the test passes on any boundary edge containing it, so a
    corner joins the set when either incident side is inflow. An edge is inflow
    when the test passes at both endpoints and the midpoint.
    """
    if isinstance(space, TriangleMesh):
        space = build_space(space, 1)
    mesh = space.mesh
    nodes = space.boundary_edge_nodes  # (nb, 2 or 3)
    x = space.node_coords[nodes, 0]
    y = space.node_coords[nodes, 1]
    bv = eval_field(b, x, y, t, components=2)
    n = mesh.boundary_normals
    flux = bv[0] * n[:, 0:1] + bv[1] * n[:, 1:2]
    inflow_pt = flux < 0
    inflow_nodes = np.unique(nodes[inflow_pt])

    if space.degree == 2:
        edge_ok = inflow_pt.all(axis=1)
    else:
        a, c = mesh.boundary_edges.T
        mid = 0.5 * (mesh.vertices[a] + mesh.vertices[c])
        bm = eval_field(b, mid[:, 0], mid[:, 1], t, components=2)
        mid_ok = bm[0] * n[:, 0] + bm[1] * n[:, 1] < 0
        edge_ok = inflow_pt.all(axis=1) & mid_ok
    dofs = space.expand(inflow_nodes) if len(inflow_nodes) else np.empty(0, dtype=np.int64)
    return InflowSet(float(t), np.asarray(dofs, dtype=np.int64), np.flatnonzero(edge_ok))
