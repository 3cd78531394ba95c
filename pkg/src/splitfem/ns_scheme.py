"""Operator-splitting time integrators for incompressible Navier-Stokes.

Each global step runs ``m`` explicit convection substeps on the P2 velocity,
then one generalized Stokes solve on the Taylor-Hood pair using an LU
factorization built once per run.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import load_vector, ns_convection_rhs, stokes_system
from .cd_scheme import StepOutcome, check_divergence
from .errors import InvalidArgumentError
from .fespace import classify_inflow, eval_field, interpolate
from .linsolve import ReducedSolver, SolverConfig, factorize_saddle, solve_saddle

log = logging.getLogger(__name__)


@dataclass
class NsState:
    velocity: np.ndarray
    pressure: np.ndarray
    time: float


def _boundary_values(space, fn, t, dofs):
    """Vector boundary data at blocked DOF indices."""
    nodes = dofs % space.n_nodes
    comp = dofs // space.n_nodes
    x, y = space.node_coords[nodes].T
    vals = eval_field(fn, x, y, t, 2)
    return vals[comp, np.arange(len(dofs))]


class NsSolver:
    """Stokes factorization and mass solvers shared by all steps of a run."""

    def __init__(self, problem, vel_space, pres_space, dt, method="direct", cfg=None,
                 refactorize=False):
        if vel_space.mesh is not pres_space.mesh:
            raise InvalidArgumentError("velocity and pressure spaces must share one mesh")
        self.problem = problem
        self.vel = vel_space
        self.pres = pres_space
        self.dt = dt
        self.method = method
        self.cfg = cfg or SolverConfig()
        self.refactorize = refactorize
        self.system = stokes_system(vel_space, pres_space, dt, problem.Re)
        self.mass = self.system.mass
        n = vel_space.n_nodes
        self._scalar_mass = self.mass[:n, :n].tocsr()
        self._mass_solvers = {}

    @property
    def handle(self):
        if self.refactorize:
            old = self.system.factorization_handle
            self.system.factorization_handle = factorize_saddle(self.system)
            old.invalidate()
        return self.system.factorization_handle

    def mass_solver(self, inflow):
        key = inflow.key
        if key not in self._mass_solvers:
            n = self.vel.n_nodes
            dofs = inflow.dof_indices
            if self.method == "direct" and np.array_equal(dofs[dofs < n] + n, dofs[dofs >= n]):
                inner = ReducedSolver(self._scalar_mass, dofs[dofs < n])
                self._mass_solvers[key] = _BlockMassSolver(inner, n)
            else:
                self._mass_solvers[key] = ReducedSolver(self.mass, dofs, method=self.method,
                                                        cfg=self.cfg)
        return self._mass_solvers[key]


class _BlockMassSolver:
    """Two identical scalar blocks solved together with one factorization."""

    def __init__(self, inner, n_nodes):
        self.inner = inner
        self.n = n_nodes
        self.fixed = np.concatenate([inner.fixed, inner.fixed + n_nodes])

    def solve(self, rhs, fixed_values):
        n, k = self.n, len(self.inner.fixed)
        inner = self.inner
        R = np.asarray(rhs, dtype=float).reshape(2, n).T
        V = np.asarray(fixed_values, dtype=float).reshape(2, k).T
        X = np.empty((n, 2))
        X[inner.fixed] = V
        B = R[inner.free]
        if k:
            B = B - inner.A_fd @ V
        X[inner.free] = inner._lu.solve(B)
        return X.T.ravel()


def ns_convection_substep(velocity, t_lo, dt, u_b, space, solver=None, mass=None):
    """Explicit convection substep from ``t_lo`` to ``t_lo + dt``.

    The inflow boundary is taken from ``u_b`` at the new time level; its DOFs
    receive the interpolated boundary velocity.
    """
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    t_hi = t_lo + dt
    inflow = classify_inflow(space, u_b, t_hi)
    if solver is not None:
        mass = solver.mass
        ms = solver.mass_solver(inflow)
    else:
        from .assembly import mass_matrix

        mass = mass_matrix(space) if mass is None else mass
        ms = ReducedSolver(mass, inflow.dof_indices)
    rhs = ns_convection_rhs(space, velocity, dt, inflow, u_b=u_b, mass=mass)
    return ms.solve(rhs, _boundary_values(space, u_b, t_hi, ms.fixed))


def ns_step(state, problem, grid, solver, n=None):
    """One global step; returns ``(NsState, StepOutcome)``.

    ``n`` is the step index on ``grid``; when omitted, times are accumulated
    from ``state.time``.
    """
    if abs(grid.dt - solver.dt) > 1e-14 * grid.dt:
        raise InvalidArgumentError("solver was factorized for a different step size")
    vel = solver.vel
    u = np.asarray(state.velocity, dtype=float)
    delta = grid.local_dt
    for i in range(grid.m):
        if n is not None:
            t_lo, t_hi = grid.time(n, i), grid.time(n, i + 1)
        else:
            t_lo, t_hi = state.time + i * delta, state.time + (i + 1) * delta
        u = ns_convection_substep(u, t_lo, t_hi - t_lo, problem.u_b, vel, solver)
    t_new = grid.time(n + 1) if n is not None else state.time + grid.dt
    rhs_u = solver.mass @ u / grid.dt + load_vector(vel, problem.g, t_new)
    rhs = np.concatenate([rhs_u, np.zeros(solver.pres.n_dofs)])
    dofs = solver.system.dirichlet_dofs
    u_new, p_new = solve_saddle(solver.handle, rhs, _boundary_values(vel, problem.u_b, t_new, dofs))
    diverged, max_abs = check_divergence(u_new)
    return NsState(u_new, p_new, t_new), StepOutcome(u_new, diverged, max_abs)


@dataclass
class NsRun:
    state: NsState
    outcome: StepOutcome
    steps: int
    trajectory: list = field(default_factory=list)
    log: list = field(default_factory=list)  # (time, max_abs) per step


def ns_run(problem, grid, vel_space, pres_space, record=False, method="direct", cfg=None,
           refactorize=False, solver=None, callback=None):
    """Integrate from ``I_h u_0`` (zero pressure) over ``grid``.

    ``callback(n, state, previous_velocity)`` runs after every step; returning
    True stops the run early. Divergence also stops it.
    """
    solver = solver or NsSolver(problem, vel_space, pres_space, grid.dt, method=method,
                                cfg=cfg, refactorize=refactorize)
    u0 = interpolate(vel_space, problem.u_0, 0.0)
    state = NsState(u0, np.zeros(pres_space.n_dofs), 0.0)
    diverged, max_abs = check_divergence(u0)
    run = NsRun(state, StepOutcome(u0, diverged, max_abs), 0)
    if record:
        run.trajectory.append(state)
    for n in range(grid.N):
        prev = state.velocity
        state, outcome = ns_step(state, problem, grid, solver, n=n)
        run.state, run.outcome, run.steps = state, outcome, n + 1
        run.log.append((state.time, outcome.max_abs))
        if record:
            run.trajectory.append(state)
        if outcome.diverged:
            log.info("diverged at step %d (t = %.6g)", n + 1, state.time)
            break
        if callback is not None and callback(n + 1, state, prev):
            break
    return run
