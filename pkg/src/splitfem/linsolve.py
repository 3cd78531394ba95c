"""Sparse linear solvers.

* :func:`solve_spd` - preconditioned conjugate gradients (none / Jacobi / IC(0)).
* :class:`ReducedSolver` - Dirichlet row/column elimination around a cached
  factorization (or CG) for matrices reused every time step.
* :func:`factorize_saddle` / :func:`solve_saddle` - one sparse LU of the
  generalized Stokes matrix, reused across all steps.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    FactorizationError,
    InvalidArgumentError,
    MatrixPropertyError,
    NonConvergenceError,
    StaleHandleError,
)

log = logging.getLogger(__name__)

PRECONDITIONERS = ("none", "jacobi", "ic0")


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_iter: int | None = None  # None -> 10 * n
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidArgumentError("solver tolerances must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be at least 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise InvalidArgumentError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveInfo:
    iterations: int = 0
    residual: float = 0.0  # recomputed ||b - A x||
    internal_residual: float = 0.0  # recursively updated residual norm
    history: list = field(default_factory=list)


def _as_csr(A):
    A = sp.csr_matrix(A)
    A.sort_indices()
    return A


def incomplete_cholesky(A):
    """Zero fill-in incomplete Cholesky factor ``L`` (lower, CSR) with ``A ~ L L^T``."""
    A = _as_csr(A)
    n = A.shape[0]
    low = sp.tril(A, format="csr")
    low.sort_indices()
    indptr, indices = low.indptr, low.indices
    vals = low.data.astype(float).copy()
    rows = [dict() for _ in range(n)]  # column -> position in vals, row i
    for i in range(n):
        for pos in range(indptr[i], indptr[i + 1]):
            rows[i][indices[pos]] = pos
    for i in range(n):
        row = rows[i]
        start, end = indptr[i], indptr[i + 1]
        for pos in range(start, end):
            k = indices[pos]
            s = vals[pos]
            rk = rows[k]
            for j, pj in row.items():
                if j >= k:
                    continue
                pk = rk.get(j)
                if pk is not None:
                    s -= vals[pj] * vals[pk]
            if k == i:
                if s <= 0:
                    raise MatrixPropertyError(f"IC(0) breakdown at row {i} (pivot {s:.3e})")
                vals[pos] = np.sqrt(s)
            else:
                vals[pos] = s / vals[indptr[k + 1] - 1]
    return sp.csr_matrix((vals, indices.copy(), indptr.copy()), shape=A.shape)


def _preconditioner(A, kind):
    if kind == "none":
        return lambda r: r
    if kind == "jacobi":
        d = A.diagonal()
        if np.any(d <= 0):
            raise MatrixPropertyError("non-positive diagonal entry; matrix is not SPD")
        inv = 1.0 / d
        return lambda r: inv * r
    L = incomplete_cholesky(A)
    Lt = L.T.tocsr()

    def apply(r):
        y = spla.spsolve_triangular(L, r, lower=True)
        return spla.spsolve_triangular(Lt, y, lower=False)

    return apply


def solve_spd(A, rhs, cfg=None, x0=None, info=None):
    """Preconditioned CG for a symmetric positive definite ``A``.

    Stops once ``||A x - rhs|| <= max(rel_tol ||rhs||, abs_tol)`` (checked on
    the recomputed residual, not only the recursive one).
    """
    cfg = cfg or SolverConfig()
    A = _as_csr(A)
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise InvalidArgumentError(f"matrix shape {A.shape} does not match rhs length {n}")
    info = info if info is not None else SolveInfo()
    max_iter = cfg.max_iter or 10 * n
    target = max(cfg.rel_tol * np.linalg.norm(b), cfg.abs_tol)
    precond = _preconditioner(A, cfg.preconditioner)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    rnorm = np.linalg.norm(r)
    info.history = [rnorm]
    it = 0
    info.internal_residual = rnorm
    while rnorm > target:
        z = precond(r)
        p = z.copy()
        rz = r @ z
        while it < max_iter:
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                raise MatrixPropertyError(f"p^T A p = {pAp:.3e} <= 0: matrix is not positive definite")
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            rnorm = np.linalg.norm(r)
            info.history.append(rnorm)
            if rnorm <= target:
                break
            z = precond(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        internal = rnorm
        r = b - A @ x
        rnorm = np.linalg.norm(r)
        if it >= max_iter and rnorm > target:
            raise NonConvergenceError(
                f"CG did not converge in {max_iter} iterations (residual {rnorm:.3e}, target {target:.3e})",
                residual=rnorm, iterations=it)
        info.internal_residual = internal
    info.iterations = it
    info.residual = float(np.linalg.norm(b - A @ x))
    return x


def dense_solve(A, rhs):
    """Dense direct solve; reference oracle for tests."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    return scipy.linalg.solve(A, np.asarray(rhs, dtype=float))


class ReducedSolver:
    """Solve ``A x = rhs`` with ``x`` prescribed on ``fixed`` indices.

    The free block ``A_ff`` is factorized once (``method='direct'``), solved by
    PCG (``method='cg'``), or inverted entrywise when ``A`` is diagonal
    (``method='diagonal'``).
    """

    def __init__(self, A, fixed=(), method="direct", cfg=None):
        A = _as_csr(A)
        n = A.shape[0]
        mask = np.ones(n, dtype=bool)
        fixed = np.asarray(fixed, dtype=np.int64)
        mask[fixed] = False
        self.n = n
        self.free = np.flatnonzero(mask)
        self.fixed = np.flatnonzero(~mask)
        self.method = method
        self.cfg = cfg or SolverConfig()
        self.A_ff = A[self.free][:, self.free].tocsr()
        self.A_fd = A[self.free][:, self.fixed].tocsr()
        if method == "direct":
            try:
                self._lu = spla.splu(self.A_ff.tocsc())
            except RuntimeError as exc:
                raise FactorizationError(f"sparse LU failed: {exc}") from exc
        elif method == "diagonal":
            self._inv = 1.0 / self.A_ff.diagonal()
        elif method != "cg":
            raise InvalidArgumentError(f"unknown solve method {method!r}")

    def solve(self, rhs, fixed_values=None):
        rhs = np.asarray(rhs, dtype=float)
        x = np.empty(self.n)
        b = rhs[self.free]
        if len(self.fixed):
            vals = np.zeros(len(self.fixed)) if fixed_values is None else fixed_values
            x[self.fixed] = vals
            b = b - self.A_fd @ vals
        if self.method == "direct":
            x[self.free] = self._lu.solve(b)
        elif self.method == "diagonal":
            x[self.free] = self._inv * b
        else:
            x[self.free] = solve_spd(self.A_ff, b, self.cfg)
        return x


# ---------------------------------------------------------------- saddle point

class SaddleFactorization:
    """Reusable LU of the Dirichlet-reduced generalized Stokes matrix."""

    def __init__(self, system, lu, free_u, rows, coupling):
        self.system = system
        self.lu = lu
        self.free_u = free_u
        self.n_u = system.n_u
        self.n_p = system.n_p
        self.valid = True
        self._rows = rows
        self._coupling = coupling

    def invalidate(self):
        self.valid = False


def factorize_saddle(system):
    """Factorize the full symmetric indefinite Stokes matrix once."""
    full = system.full_matrix()
    n_total = full.shape[0]
    keep = np.ones(n_total, dtype=bool)
    keep[system.dirichlet_dofs] = False
    rows = np.flatnonzero(keep)
    K = full[rows][:, rows].tocsc()
    try:
        # symmetric ordering suits the saddle structure; partial pivoting
        # is still needed because the pressure block has a zero diagonal
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01)
    except RuntimeError as exc:
        raise FactorizationError(f"saddle-point factorization failed: {exc}") from exc
    free_u = np.setdiff1d(np.arange(system.n_u), system.dirichlet_dofs)
    coupling = full[rows][:, system.dirichlet_dofs].tocsr()
    return SaddleFactorization(system, lu, free_u, rows, coupling)


def solve_saddle(handle, rhs, dirichlet_values=None):
    """Solve ``A u - B^T p = rhs_u``, ``B u = rhs_p``, ``int p = 0``.

    ``rhs`` is the concatenation ``[rhs_u, rhs_p]``; rows of ``rhs_u`` on
    Dirichlet DOFs are ignored and replaced by ``dirichlet_values``.
    Returns ``(velocity, pressure)``.
    """
    if not handle.valid:
        raise StaleHandleError("factorization handle was invalidated")
    n_u, n_p = handle.n_u, handle.n_p
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (n_u + n_p,):
        raise InvalidArgumentError(f"rhs must have length {n_u + n_p}, got {rhs.shape}")
    full_rhs = np.concatenate([rhs[:n_u], -rhs[n_u:], [0.0]])
    b = full_rhs[handle._rows]
    dofs = handle.system.dirichlet_dofs
    vals = np.zeros(len(dofs)) if dirichlet_values is None else np.asarray(dirichlet_values, float)
    if len(dofs):
        b = b - handle._coupling @ vals
    z = handle.lu.solve(b)
    n_free = len(handle.free_u)
    u = np.empty(n_u)
    u[dofs] = vals
    u[handle.free_u] = z[:n_free]
    p = z[n_free:n_free + n_p]
    return u, p
