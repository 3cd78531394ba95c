"""Vectorised element quadrature and global assembly of the weak forms.

All loops over elements are expressed as numpy array operations; the scatter
into global storage goes through ``scipy.sparse`` (matrices) or
``np.bincount`` (vectors), both of which sum in a fixed order so results are
bitwise reproducible run to run.
"""

from dataclasses import dataclass, field
from weakref import WeakKeyDictionary

import numpy as np
import scipy.sparse as sp

from .errors import CoefficientSignError, InvalidArgumentError
from .fespace import (
    FeSpace,
    InflowSet,
    basis_gradients,
    basis_hessians,
    basis_values,
    eval_field,
)
from .quadrature import gauss_line, triangle_rule

_QUAD_CACHE = WeakKeyDictionary()


def default_rule_degree(space):
    """Degree-4 rule for P1 forms, degree-6 for P2."""
    return 4 if space.degree == 1 else 6


@dataclass(frozen=True)
class ElementQuad:
    w: np.ndarray  # (ne, nq) physical weights
    x: np.ndarray  # (ne, nq)
    y: np.ndarray
    phi: np.ndarray  # (nq, nloc)
    dphi: np.ndarray  # (ne, nq, nloc, 2)
    hess: np.ndarray  # (ne, nloc, 2, 2)


@dataclass(frozen=True)
class BoundaryQuad:
    tri: np.ndarray  # (nb,) owner element
    w: np.ndarray  # (nb, ng)
    x: np.ndarray
    y: np.ndarray
    normal: np.ndarray  # (nb, 2)
    phi: np.ndarray  # (nb, ng, nloc)
    dphi: np.ndarray  # (nb, ng, nloc, 2)
    hess: np.ndarray  # (nb, nloc, 2, 2)


def _cache(space):
    # keyed on the mesh so scalar and vector spaces of one degree share data
    return _QUAD_CACHE.setdefault(space.mesh, {})


def element_quad(space, degree=None, rule=None):
    """Quadrature data on every element; ``rule`` overrides the tabulated rule."""
    if rule is None:
        degree = default_rule_degree(space) if degree is None else degree
        rule = triangle_rule(degree)
    cache = _cache(space)
    key = ("elem", space.degree, rule.exact_degree, len(rule))
    if key not in cache:
        det, grad_lambda = space.geometry
        mesh = space.mesh
        pv = mesh.vertices[mesh.triangles]  # (ne, 3, 2)
        xq = np.einsum("qk,ek->eq", rule.points, pv[:, :, 0])
        yq = np.einsum("qk,ek->eq", rule.points, pv[:, :, 1])
        w = np.abs(det)[:, None] * rule.weights[None, :]
        phi = basis_values(space.degree, rule.points)
        dphi = basis_gradients(space.degree, rule.points, grad_lambda)
        hess = basis_hessians(space.degree, grad_lambda)
        cache[key] = ElementQuad(w, xq, yq, phi, np.ascontiguousarray(dphi), hess)
    return cache[key]


def default_boundary_points(space):
    """3-point Gauss for P1 (degree 5), 5-point for P2 (degree 9)."""
    return 3 if space.degree == 1 else 5


def boundary_quad(space, npoints=None):
    npoints = default_boundary_points(space) if npoints is None else npoints
    cache = _cache(space)
    key = ("bnd", space.degree, npoints)
    if key not in cache:
        mesh = space.mesh
        line = gauss_line(npoints)
        tri, k = mesh.boundary_edge_owner.T
        nb = len(tri)
        bary = np.zeros((nb, npoints, 3))
        a = k
        b = (k + 1) % 3
        rows = np.arange(nb)[:, None]
        bary[rows, np.arange(npoints)[None, :], a[:, None]] = 1.0 - line.points[None, :]
        bary[rows, np.arange(npoints)[None, :], b[:, None]] += line.points[None, :]
        p0 = mesh.vertices[mesh.boundary_edges[:, 0]]
        p1 = mesh.vertices[mesh.boundary_edges[:, 1]]
        length = np.linalg.norm(p1 - p0, axis=1)
        pts = p0[:, None, :] + line.points[None, :, None] * (p1 - p0)[:, None, :]
        _, grad_lambda = space.geometry
        phi = basis_values(space.degree, bary)
        dphi = basis_gradients(space.degree, bary, grad_lambda[tri])
        hess = basis_hessians(space.degree, grad_lambda[tri])
        cache[key] = BoundaryQuad(
            tri, length[:, None] * line.weights[None, :], pts[..., 0], pts[..., 1],
            mesh.boundary_normals, phi, np.ascontiguousarray(dphi), hess,
        )
    return cache[key]


# ---------------------------------------------------------------- scatter

def _pattern(space):
    cache = _cache(space)
    key = ("pattern", space.degree)
    if key not in cache:
        d = space.scalar_cell_dofs
        nloc = d.shape[1]
        rows = np.repeat(d, nloc, axis=1).ravel()
        cols = np.tile(d, (1, nloc)).ravel()
        cache[key] = (rows, cols)
    return cache[key]


def scatter_matrix(space, elem, cells=None, shape=None):
    """Sum element matrices ``elem`` (ne, nloc, nloc) into a scalar CSR matrix."""
    n = space.n_nodes
    if cells is None:
        rows, cols = _pattern(space)
    else:
        d = space.scalar_cell_dofs[cells]
        nloc = d.shape[1]
        rows = np.repeat(d, nloc, axis=1).ravel()
        cols = np.tile(d, (1, nloc)).ravel()
    A = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=shape or (n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def scatter_vector(space, elem, cells=None):
    """Sum element vectors (ne, nloc) into a scalar global vector."""
    d = space.scalar_cell_dofs if cells is None else space.scalar_cell_dofs[cells]
    return np.bincount(d.ravel(), weights=elem.ravel(), minlength=space.n_nodes)


def _blockdiag(space, A):
    if space.components == 1:
        return A
    return sp.block_diag([A] * space.components, format="csr")


# ---------------------------------------------------------------- standard forms

def _symmetric(elem):
    """Exactly symmetric element matrices, so assembled SPD forms satisfy A == A.T bitwise."""
    return 0.5 * (elem + elem.transpose(0, 2, 1))


def mass_matrix(space, lumped=False):
    """Consistent Gram matrix, or its row-sum lumped diagonal."""
    q = element_quad(space)
    elem = _symmetric(np.einsum("eq,qi,qj->eij", q.w, q.phi, q.phi))
    M = scatter_matrix(space, elem)
    if lumped:
        M = sp.diags(np.asarray(M.sum(axis=1)).ravel(), format="csr")
    return _blockdiag(space, M)


def _coefficient(coef, q, t):
    if callable(coef):
        return eval_field(coef, q.x, q.y, t)
    return np.full_like(q.w, float(coef))


def stiffness_matrix(space, eps=1.0, t=0.0):
    q = element_quad(space)
    e = _coefficient(eps, q, t)
    if np.any(e < 0):
        idx = np.unravel_index(np.argmin(e), e.shape)
        raise CoefficientSignError(
            f"negative diffusion coefficient {e[idx]:.3e} at ({q.x[idx]:.4f}, {q.y[idx]:.4f})")
    elem = _symmetric(np.einsum("eq,eqia,eqja->eij", q.w * e, q.dphi, q.dphi))
    return _blockdiag(space, scatter_matrix(space, elem))


def reaction_matrix(space, c=1.0, t=0.0):
    q = element_quad(space)
    cv = _coefficient(c, q, t)
    elem = _symmetric(np.einsum("eq,qi,qj->eij", q.w * cv, q.phi, q.phi))
    return _blockdiag(space, scatter_matrix(space, elem))


def diffusion_reaction_matrix(space, eps, c, t=0.0):
    """Matrix of ``(eps grad u, grad v) + (c u, v)`` at time ``t``."""
    return stiffness_matrix(space, eps, t) + reaction_matrix(space, c, t)


def cd_diffusion_system(space, dt, eps, c, t, mass=None):
    """``M + dt * (diffusion + reaction)`` for the implicit correction step."""
    if dt <= 0:
        raise InvalidArgumentError("time step must be positive")
    M = mass_matrix(space) if mass is None else mass
    return (M + dt * diffusion_reaction_matrix(space, eps, c, t)).tocsr()


def load_operator(space):
    """Sparse map from scalar quadrature-point values to ``(g, v)`` per scalar node."""
    cache = _cache(space)
    key = ("load", space.degree)
    if key not in cache:
        q = element_quad(space)
        ne, nq = q.w.shape
        dofs = space.scalar_cell_dofs
        rows = np.broadcast_to(dofs[:, None, :], (ne, nq, dofs.shape[1])).ravel()
        cols = np.broadcast_to(np.arange(ne * nq).reshape(ne, nq, 1), rows.reshape(ne, nq, -1).shape).ravel()
        vals = (q.w[..., None] * q.phi[None]).ravel()
        L = sp.csr_matrix((vals, (rows, cols)), shape=(space.n_nodes, ne * nq))
        L.sum_duplicates()
        cache[key] = L
    return cache[key]


def load_vector(space, g, t):
    """``(g(., t), v)`` for every basis function ``v`` (full quadrature)."""
    q = element_quad(space)
    vals = eval_field(g, q.x, q.y, t, space.components)
    if space.components == 1:
        vals = vals[None]
    L = load_operator(space)
    return np.concatenate([L @ v.ravel() for v in vals])


# ---------------------------------------------------------------- CD convection

@dataclass
class ConvectionOperator:
    """Affine map ``u -> matrix @ u + shift`` giving the Step-1 right-hand side."""

    matrix: sp.csr_matrix
    shift: np.ndarray | None = None

    def __call__(self, u):
        r = self.matrix @ u
        if self.shift is not None:
            r = r + self.shift
        return r


def _zero_div(x, y, t):
    return np.zeros_like(x)


def cd_convection_operator(space, b, t_lo, dt, inflow, f=None, div_b=None, mass=None,
                           rule=None, boundary_points=None):
    """Assemble the linear map behind :func:`cd_convection_rhs`.

    ``b`` is sampled at ``t_lo + dt/2`` in the form and at ``t_lo`` inside the
    half-step predictor ``xi = u + dt/2 (f - u div b - b . grad u)``. Boundary
    quadrature points whose flux ``b(t_in) . n`` is negative (with ``t_in`` the
    time of ``inflow``) are excluded from the outflow integral. ``rule`` and
    ``boundary_points`` override the default quadrature.
    """
    if inflow is None or not isinstance(inflow, InflowSet):
        raise InvalidArgumentError("an InflowSet is required for the convection step")
    if space.components != 1:
        raise InvalidArgumentError("scalar space required")
    div_b = _zero_div if div_b is None else div_b
    t_mid = t_lo + 0.5 * dt
    half = 0.5 * dt

    q = element_quad(space, rule=rule)
    bm = eval_field(b, q.x, q.y, t_mid, 2)
    bl = eval_field(b, q.x, q.y, t_lo, 2)
    dl = eval_field(div_b, q.x, q.y, t_lo)
    test = np.einsum("ceq,eqic->eqi", bm, q.dphi)  # b_mid . grad phi_i
    trial = q.phi[None] - half * (dl[..., None] * q.phi[None]
                                  + np.einsum("ceq,eqjc->eqj", bl, q.dphi))
    V = scatter_matrix(space, np.einsum("eq,eqi,eqj->eij", q.w, test, trial))

    bq = boundary_quad(space, boundary_points)
    bbm = eval_field(b, bq.x, bq.y, t_mid, 2)
    bbl = eval_field(b, bq.x, bq.y, t_lo, 2)
    bdl = eval_field(div_b, bq.x, bq.y, t_lo)
    bin_ = eval_field(b, bq.x, bq.y, inflow.time, 2)
    nx, ny = bq.normal[:, 0:1], bq.normal[:, 1:2]
    keep = (bin_[0] * nx + bin_[1] * ny) >= 0
    flux_mid = (bbm[0] * nx + bbm[1] * ny) * keep
    btrial = bq.phi - half * (bdl[..., None] * bq.phi + np.einsum("cbg,bgjc->bgj", bbl, bq.dphi))
    belem = np.einsum("bg,bgi,bgj->bij", bq.w * flux_mid, bq.phi, btrial)
    Bd = scatter_matrix(space, belem, cells=bq.tri)

    M = mass_matrix(space) if mass is None else mass
    R = (M + dt * V - dt * Bd).tocsr()
    R.sort_indices()

    shift = None
    if f is not None:
        fm = eval_field(f, q.x, q.y, t_mid)
        fl = eval_field(f, q.x, q.y, t_lo)
        vol = np.einsum("eq,eq,qi->ei", q.w, fm, q.phi) + half * np.einsum("eq,eq,eqi->ei", q.w, fl, test)
        bfl = eval_field(f, bq.x, bq.y, t_lo)
        bnd = half * np.einsum("bg,bg,bgi->bi", bq.w * flux_mid, bfl, bq.phi)
        shift = dt * (scatter_vector(space, vol) - scatter_vector(space, bnd, cells=bq.tri))
    return ConvectionOperator(R, shift)


def cd_convection_rhs(space, u_prev, b, f, t_lo, dt, inflow, div_b=None, mass=None):
    """Right-hand side of the explicit convection substep.

    Entries are ``(u, v) + dt (f_mid, v) + dt (xi, b_mid . grad v)
    - dt <xi, v b_mid . n>`` over the non-inflow boundary, with
    ``xi = u + dt/2 (f_lo - div(b_lo u))`` evaluated pointwise from the
    element-local polynomial of ``u``. Inflow rows are left as assembled; the
    caller overwrites them with Dirichlet data.
    """
    op = cd_convection_operator(space, b, t_lo, dt, inflow, f=f, div_b=div_b, mass=mass)
    return op(np.asarray(u_prev, dtype=float))


# ---------------------------------------------------------------- NS convection

def _grad_slices(dphi):
    """Contiguous ``dphi[..., i, c]`` arrays, indexed ``[i][c]``."""
    return [[np.ascontiguousarray(dphi[..., i, c]) for c in range(2)]
            for i in range(dphi.shape[-2])]


def _vector_fields(space, u, dofs, phi, dslices, hess):
    """Values, gradients and Hessians of a vector P2 field at quadrature points.

    Returns U (2, ..., nq), G (2, ..., nq, 2) with G[k, ..., j] = d_j u_k, and
    H (2, ..., 2, 2) element-constant. ``dslices`` comes from :func:`_grad_slices`.
    """
    uc = space.split(u)[:, dofs]  # (2, ne, nloc)
    if phi.ndim == 2:
        U = uc @ phi.T
    else:
        U = np.einsum("kei,eqi->keq", uc, phi)
    G = np.zeros(U.shape + (2,))
    for i, (dx, dy) in enumerate(dslices):
        coef = uc[:, :, i, None]
        G[..., 0] += coef * dx
        G[..., 1] += coef * dy
    H = np.einsum("kei,eiab->keab", uc, hess)
    return U, G, H


def _eta_and_div(U, G, H, dt):
    half = 0.5 * dt
    conv = U[0][None] * G[..., 0] + U[1][None] * G[..., 1]  # (u . grad) u
    eta = U - half * conv
    div_u = G[0, ..., 0] + G[1, ..., 1]
    grad_div = H[0, :, :, 0] + H[1, :, :, 1]  # (ne, 2): d_j (div u)
    div_conv = (G[0, ..., 0] ** 2 + 2.0 * G[0, ..., 1] * G[1, ..., 0] + G[1, ..., 1] ** 2
                + U[0] * grad_div[:, None, 0] + U[1] * grad_div[:, None, 1])
    return eta, div_u - half * div_conv


def ns_convection_rhs(space, u_prev, dt, inflow, u_b=None, mass=None, rule=None,
                      boundary_points=None):
    """Right-hand side of the explicit Navier-Stokes convection substep.

    ``(u, v) + dt (eta, (div eta) v + (eta . grad) v) - dt <eta, (eta . n) v>``
    over the non-inflow boundary, with ``eta = u - dt/2 (u . grad) u`` built
    from the element polynomial of ``u``. The inflow part is decided per
    boundary quadrature point from ``u_b`` at ``inflow.time``; when ``u_b`` is
    omitted the whole boundary is kept. The default degree-6 volume rule
    under-integrates the degree-7 integrand slightly; pass ``rule`` to change it.
    """
    if space.components != 2:
        raise InvalidArgumentError("ns_convection_rhs needs a vector space")
    if inflow is None or not isinstance(inflow, InflowSet):
        raise InvalidArgumentError("an InflowSet is required for the convection step")
    u = np.asarray(u_prev, dtype=float)
    q = element_quad(space, rule=rule)
    dofs = space.scalar_cell_dofs
    cache = _cache(space)
    key = ("slices", space.degree, id(q))
    if key not in cache:
        cache[key] = _grad_slices(q.dphi)
    slices = cache[key]
    U, G, H = _vector_fields(space, u, dofs, q.phi, slices, q.hess)
    eta, div_eta = _eta_and_div(U, G, H, dt)
    # (eta . grad) phi_i + div(eta) phi_i, weighted by w * eta_k
    weta = q.w * eta
    vol = np.empty(eta.shape[:2] + (len(slices),))
    for i, (dx, dy) in enumerate(slices):
        adv = eta[0] * dx + eta[1] * dy + div_eta * q.phi[:, i]
        vol[..., i] = np.sum(weta * adv, axis=-1)

    bq = boundary_quad(space, boundary_points)
    Ub, Gb, Hb = _vector_fields(space, u, dofs[bq.tri], bq.phi, _grad_slices(bq.dphi), bq.hess)
    eta_b, _ = _eta_and_div(Ub, Gb, Hb, dt)
    nx, ny = bq.normal[:, 0:1], bq.normal[:, 1:2]
    flux = eta_b[0] * nx + eta_b[1] * ny
    if u_b is not None:
        ub = eval_field(u_b, bq.x, bq.y, inflow.time, 2)
        flux = flux * ((ub[0] * nx + ub[1] * ny) >= 0)
    bnd = np.einsum("bg,kbg,bgi->kbi", bq.w * flux, eta_b, bq.phi)

    M = mass_matrix(space) if mass is None else mass
    out = M @ u
    for k in range(2):
        sl = slice(k * space.n_nodes, (k + 1) * space.n_nodes)
        out[sl] += dt * (scatter_vector(space, vol[k]) - scatter_vector(space, bnd[k], cells=bq.tri))
    return out


# ---------------------------------------------------------------- Stokes

@dataclass
class StokesSystem:
    """Blocks of the generalized Stokes problem on a Taylor-Hood pair.

    The full symmetric saddle-point matrix is::

        [ A_uu  -B^T   0 ]
        [ -B     0     m ]
        [ 0      m^T   0 ]

    where the last row and column impose a zero-mean pressure.
    """

    vel_space: FeSpace
    pres_space: FeSpace
    dt: float
    Re: float
    A_uu: sp.csr_matrix
    B: sp.csr_matrix
    mean_row: np.ndarray
    mass: sp.csr_matrix
    dirichlet_dofs: np.ndarray
    factorization_handle: object = field(default=None, repr=False)

    @property
    def n_u(self):
        return self.vel_space.n_dofs

    @property
    def n_p(self):
        return self.pres_space.n_dofs

    def full_matrix(self):
        m = sp.csr_matrix(self.mean_row[:, None])
        return sp.bmat([
            [self.A_uu, -self.B.T, None],
            [-self.B, None, m],
            [None, m.T, None],
        ], format="csr")


def divergence_matrix(vel_space, pres_space):
    """``B[q, (c, a)] = (d_c phi_a, psi_q)``."""
    q = element_quad(vel_space)
    psi = basis_values(pres_space.degree, triangle_rule(default_rule_degree(vel_space)).points)
    shape = (pres_space.n_nodes, vel_space.n_nodes)
    blocks = []
    d_p = pres_space.scalar_cell_dofs
    d_u = vel_space.scalar_cell_dofs
    rows = np.repeat(d_p, d_u.shape[1], axis=1).ravel()
    cols = np.tile(d_u, (1, d_p.shape[1])).ravel()
    for c in range(2):
        elem = np.einsum("eq,qp,eqa->epa", q.w, psi, q.dphi[..., c])
        Bc = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=shape).tocsr()
        Bc.sum_duplicates()
        blocks.append(Bc)
    B = sp.hstack(blocks, format="csr")
    B.sort_indices()
    return B


def stokes_system(vel_space, pres_space, dt, Re, factorize=True):
    if vel_space.mesh is not pres_space.mesh:
        raise InvalidArgumentError("velocity and pressure spaces must share one mesh")
    if vel_space.degree != 2 or vel_space.components != 2 or pres_space.degree != 1 \
            or pres_space.components != 1:
        raise InvalidArgumentError("Taylor-Hood pairing (vector P2 / scalar P1) required")
    if dt <= 0 or Re <= 0:
        raise InvalidArgumentError("dt and Re must be positive")
    M = mass_matrix(vel_space)
    K = stiffness_matrix(vel_space)
    inv_re = 0.0 if np.isinf(Re) else 1.0 / Re
    A = (M / dt + inv_re * K).tocsr()
    B = divergence_matrix(vel_space, pres_space)
    mean = np.asarray(mass_matrix(pres_space).sum(axis=0)).ravel()
    sys = StokesSystem(vel_space, pres_space, dt, Re, A, B, mean, M, vel_space.all_boundary_dofs)
    if factorize:
        from .linsolve import factorize_saddle

        sys.factorization_handle = factorize_saddle(sys)
    return sys
