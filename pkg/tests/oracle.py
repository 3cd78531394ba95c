"""Slow reference implementations used as test oracles.

Nothing here reuses the package's basis functions, quadrature or assembly:
local bases come from inverting a monomial Vandermonde matrix on each
element, integrals from a tensor Gauss rule collapsed onto the triangle, and
everything is accumulated element by element into dense arrays.
"""

import numpy as np

MONO = {1: [(0, 0), (1, 0), (0, 1)],
        2: [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]}


def _mono(degree, x, y):
    return np.array([x ** a * y ** b for a, b in MONO[degree]])


def _mono_grad(degree, x, y):
    gx = [a * x ** (a - 1) * y ** b if a else 0.0 * x for a, b in MONO[degree]]
    gy = [b * x ** a * y ** (b - 1) if b else 0.0 * x for a, b in MONO[degree]]
    return np.array(gx), np.array(gy)


def _mono_hess(degree):
    """Constant second derivatives (xx, xy, yy) of each monomial (degree <= 2)."""
    out = []
    for a, b in MONO[degree]:
        out.append((2.0 if a == 2 else 0.0, 1.0 if (a, b) == (1, 1) else 0.0,
                    2.0 if b == 2 else 0.0))
    return np.array(out)


class LocalBasis:
    """Nodal basis on one triangle given its node coordinates."""

    def __init__(self, degree, nodes):
        self.degree = degree
        V = np.array([_mono(degree, x, y) for x, y in nodes])  # V[node, mono]
        self.C = np.linalg.inv(V)  # phi_j = sum_k C[k, j] mono_k

    def values(self, x, y):
        return self.C.T @ _mono(self.degree, x, y)

    def grads(self, x, y):
        gx, gy = _mono_grad(self.degree, x, y)
        return np.stack([self.C.T @ gx, self.C.T @ gy], axis=-1)

    def hessians(self):
        h = _mono_hess(self.degree)  # (nmono, 3)
        hj = self.C.T @ h  # (nloc, 3)
        return np.stack([np.stack([hj[:, 0], hj[:, 1]], -1), np.stack([hj[:, 1], hj[:, 2]], -1)], 1)


def triangle_points(verts, k=8):
    """Collapsed Gauss points and weights on a physical triangle."""
    g, w = np.polynomial.legendre.leggauss(k)
    g, w = 0.5 * (g + 1), 0.5 * w
    p0, p1, p2 = (np.asarray(v, float) for v in verts)
    e1, e2 = p1 - p0, p2 - p0
    area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
    pts, wts = [], []
    for a, wa in zip(g, w):
        for b, wb in zip(g, w):
            s, t = a, b * (1 - a)
            pts.append(p0 + s * (p1 - p0) + t * (p2 - p0))
            wts.append(wa * wb * (1 - a) * area2)
    return np.array(pts), np.array(wts)


def segment_points(p, q, k=8):
    g, w = np.polynomial.legendre.leggauss(k)
    g, w = 0.5 * (g + 1), 0.5 * w
    p, q = np.asarray(p, float), np.asarray(q, float)
    return p + g[:, None] * (q - p), w * np.linalg.norm(q - p)


def element_bases(space):
    out = []
    for e, dofs in enumerate(space.scalar_cell_dofs):
        out.append((dofs, LocalBasis(space.degree, space.node_coords[dofs]),
                    space.mesh.vertices[space.mesh.triangles[e]]))
    return out


def boundary_edges(space):
    """(owner element index, p0, p1, outward normal) per boundary edge."""
    mesh = space.mesh
    out = []
    for (a, b) in mesh.boundary_edges:
        for e, tri in enumerate(mesh.triangles):
            if a in tri and b in tri:
                break
        p, q = mesh.vertices[a], mesh.vertices[b]
        d = q - p
        n = np.array([d[1], -d[0]]) / np.linalg.norm(d)
        centroid = mesh.vertices[mesh.triangles[e]].mean(axis=0)
        if n @ (p - centroid) < 0:
            n = -n
        out.append((e, p, q, n))
    return out


def mass(space):
    n = space.n_nodes
    M = np.zeros((n, n))
    for dofs, B, verts in element_bases(space):
        pts, wts = triangle_points(verts)
        for (x, y), w in zip(pts, wts):
            phi = B.values(x, y)
            M[np.ix_(dofs, dofs)] += w * np.outer(phi, phi)
    return M


def stiffness(space, eps=1.0):
    n = space.n_nodes
    K = np.zeros((n, n))
    for dofs, B, verts in element_bases(space):
        pts, wts = triangle_points(verts)
        for (x, y), w in zip(pts, wts):
            G = B.grads(x, y)
            K[np.ix_(dofs, dofs)] += w * eps * G @ G.T
    return K


def cd_convection_matrix(space, b, t_lo, dt, t_in, div_b=None):
    """Dense ``M + dt V - dt Bd`` of the scalar convection substep (f = 0)."""
    n = space.n_nodes
    half = 0.5 * dt
    R = mass(space)
    div_b = div_b or (lambda x, y, t: 0.0)
    for dofs, B, verts in element_bases(space):
        pts, wts = triangle_points(verts)
        for (x, y), w in zip(pts, wts):
            bm = np.array(b(x, y, t_lo + half), float).ravel()
            bl = np.array(b(x, y, t_lo), float).ravel()
            phi, G = B.values(x, y), B.grads(x, y)
            test = G @ bm
            trial = phi - half * (float(div_b(x, y, t_lo)) * phi + G @ bl)
            R[np.ix_(dofs, dofs)] += dt * w * np.outer(test, trial)
    bases = element_bases(space)
    for e, p, q, nrm in boundary_edges(space):
        dofs, B, _ = bases[e]
        pts, wts = segment_points(p, q)
        for (x, y), w in zip(pts, wts):
            if np.array(b(x, y, t_in), float).ravel() @ nrm < 0:
                continue
            bm = np.array(b(x, y, t_lo + half), float).ravel()
            bl = np.array(b(x, y, t_lo), float).ravel()
            phi, G = B.values(x, y), B.grads(x, y)
            trial = phi - half * (float(div_b(x, y, t_lo)) * phi + G @ bl)
            R[np.ix_(dofs, dofs)] -= dt * w * (bm @ nrm) * np.outer(phi, trial)
    return R


def cd_convection_shift(space, b, f, t_lo, dt, t_in):
    """Dense-oracle source part of the scalar convection right-hand side."""
    half = 0.5 * dt
    out = np.zeros(space.n_nodes)
    for dofs, B, verts in element_bases(space):
        pts, wts = triangle_points(verts)
        for (x, y), w in zip(pts, wts):
            bm = np.array(b(x, y, t_lo + half), float).ravel()
            phi, G = B.values(x, y), B.grads(x, y)
            out[dofs] += dt * w * (f(x, y, t_lo + half) * phi + half * f(x, y, t_lo) * (G @ bm))
    bases = element_bases(space)
    for e, p, q, nrm in boundary_edges(space):
        dofs, B, _ = bases[e]
        pts, wts = segment_points(p, q)
        for (x, y), w in zip(pts, wts):
            if np.array(b(x, y, t_in), float).ravel() @ nrm < 0:
                continue
            bm = np.array(b(x, y, t_lo + half), float).ravel()
            out[dofs] -= dt * w * half * f(x, y, t_lo) * (bm @ nrm) * B.values(x, y)
    return out


def load(space, g, t):
    """(g(., t), phi_i) for a scalar space."""
    out = np.zeros(space.n_nodes)
    for dofs, B, verts in element_bases(space):
        pts, wts = triangle_points(verts)
        for (x, y), w in zip(pts, wts):
            out[dofs] += w * g(x, y, t) * B.values(x, y)
    return out


def _eta(B, uc, x, y, dt):
    """eta and its exact divergence from the local polynomial of a vector field."""
    phi, G, H = B.values(x, y), B.grads(x, y), B.hessians()
    u = uc @ phi  # (2,)
    J = uc @ G  # J[k, j] = d_j u_k
    Hk = np.einsum("ki,iab->kab", uc, H)  # d_a d_b u_k
    conv = J @ u
    eta = u - 0.5 * dt * conv
    # div((u . grad) u) = sum_jk d_k u_j d_j u_k + u . grad(div u)
    grad_div = Hk[0, 0, :] + Hk[1, 1, :]
    div_conv = np.sum(J * J.T) + u @ grad_div
    return eta, np.trace(J) - 0.5 * dt * div_conv, phi, G


def ns_convection_rhs(space, u, dt, ub, t_in):
    """Dense-oracle right-hand side of the vector convection substep."""
    n = space.n_nodes
    U = np.asarray(u).reshape(2, n)
    M = mass(space)
    out = np.concatenate([M @ U[0], M @ U[1]])
    for dofs, B, verts in element_bases(space):
        pts, wts = triangle_points(verts)
        uc = U[:, dofs]
        for (x, y), w in zip(pts, wts):
            eta, div_eta, phi, G = _eta(B, uc, x, y, dt)
            adv = G @ eta + div_eta * phi
            for k in range(2):
                out[k * n + dofs] += dt * w * eta[k] * adv
    bases = element_bases(space)
    for e, p, q, nrm in boundary_edges(space):
        dofs, B, _ = bases[e]
        uc = U[:, dofs]
        pts, wts = segment_points(p, q)
        for (x, y), w in zip(pts, wts):
            if np.array(ub(x, y, t_in), float).ravel() @ nrm < 0:
                continue
            eta, _, phi, _ = _eta(B, uc, x, y, dt)
            for k in range(2):
                out[k * n + dofs] -= dt * w * eta[k] * (eta @ nrm) * phi
    return out


def divergence(vel, pres):
    """B[q, c * n_u + a] = (d_c phi_a, psi_q)."""
    nu, npr = vel.n_nodes, pres.n_nodes
    Bm = np.zeros((npr, 2 * nu))
    for (du, Bu, verts), (dp, Bp, _) in zip(element_bases(vel), element_bases(pres)):
        pts, wts = triangle_points(verts)
        for (x, y), w in zip(pts, wts):
            G = Bu.grads(x, y)
            psi = Bp.values(x, y)
            for c in range(2):
                Bm[np.ix_(dp, c * nu + du)] += w * np.outer(psi, G[:, c])
    return Bm


def l2_error(space, coeffs, exact, t, k=12):
    """High-order quadrature L2 error of a scalar field."""
    total = 0.0
    for dofs, B, verts in element_bases(space):
        pts, wts = triangle_points(verts, k)
        for (x, y), w in zip(pts, wts):
            total += w * (coeffs[dofs] @ B.values(x, y) - exact(x, y, t)) ** 2
    return np.sqrt(total)
