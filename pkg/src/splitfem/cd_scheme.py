"""Operator-splitting time integrators for scalar convection-diffusion-reaction.

Each global step of size ``dt`` runs ``m`` explicit Taylor convection substeps
of size ``dt / m`` followed by one implicit diffusion-reaction correction.
``m = 1`` is the single-step scheme.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    cd_convection_operator,
    cd_diffusion_system,
    load_vector,
    mass_matrix,
)
from .errors import InvalidArgumentError
from .fespace import classify_inflow, eval_field, interpolate
from .linsolve import ReducedSolver, SolverConfig

log = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e8


@dataclass(frozen=True)
class TimeGrid:
    """``N`` global steps of ``dt = T / N``, each split into ``m`` local steps."""

    T: float
    N: int
    m: int = 1

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 0:
            raise InvalidArgumentError(f"N must be a non-negative integer, got {self.N!r}")
        if isinstance(self.m, bool) or int(self.m) != self.m or self.m < 1:
            raise InvalidArgumentError(f"m must be a positive integer, got {self.m!r}")
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise InvalidArgumentError(f"T must be finite and non-negative, got {self.T!r}")
        if self.N > 0 and self.T == 0:
            raise InvalidArgumentError("T must be positive when N > 0")

    @classmethod
    def from_dt(cls, T, dt, m=1, round_up=False):
        """Grid with step ``dt``.

        By default ``T / dt`` must be an integer (to a relative 1e-9). With
        ``round_up`` the step count is ``ceil(T / dt)`` and the final time
        becomes ``N * dt``.
        """
        if not dt > 0:
            raise InvalidArgumentError("dt must be positive")
        ratio = T / dt
        N = round(ratio)
        if abs(N - ratio) <= 1e-9 * max(1.0, ratio):
            return cls(T, int(N), m)
        if not round_up:
            raise InvalidArgumentError(f"T = {T} is not an integer multiple of dt = {dt}")
        N = math.ceil(ratio)
        return cls(N * dt, N, m)

    @property
    def dt(self):
        return self.T / self.N

    @property
    def local_dt(self):
        return self.T / (self.N * self.m)

    def time(self, n, i=0):
        """``t_{n + i/m}`` computed from integers to avoid drift."""
        if self.N == 0:
            return 0.0
        k = n * self.m + i
        return self.T if k == self.N * self.m else self.T * k / (self.N * self.m)


@dataclass
class StepOutcome:
    state: np.ndarray
    diverged: bool
    max_abs: float


def check_divergence(state, threshold=BLOWUP_THRESHOLD):
    """Return ``(diverged, max_abs)``; any non-finite entry counts as divergence."""
    with np.errstate(invalid="ignore"):
        max_abs = float(np.max(np.abs(state))) if len(state) else 0.0
    diverged = not math.isfinite(max_abs) or max_abs > threshold
    return diverged, max_abs


def _dirichlet_values(space, fn, t, dofs):
    x, y = space.dof_coords[dofs].T
    return np.asarray(eval_field(fn, x, y, t), dtype=float)


class CdSolver:
    """Cached matrices and factorizations for one (problem, space) pair.

    Time-independent coefficients let the convection operator, mass
    factorization and diffusion factorization be built once per step size.
    """

    def __init__(self, problem, space, lumped=False, method="direct", cfg=None):
        if space.components != 1:
            raise InvalidArgumentError("convection-diffusion needs a scalar space")
        self.problem = problem
        self.space = space
        self.lumped = lumped
        self.method = method
        self.cfg = cfg or SolverConfig()
        self.mass = mass_matrix(space)
        self.lumped_mass = mass_matrix(space, lumped=True) if lumped else None
        self._conv = {}
        self._mass_solvers = {}
        self._diff = {}
        self._inflow = {}
        self._load_terms = None
        self.steady = problem.steady_coefficients

    def load(self, t):
        """``(g(., t), v)``, from cached spatial load vectors when ``F`` is separable."""
        p = self.problem
        if not p.F_terms or p.f is not None:
            return load_vector(self.space, p.g, t)
        if self._load_terms is None:
            self._load_terms = [(a, load_vector(self.space, lambda x, y, _t, G=G: G(x, y), 0.0))
                                for a, G in p.F_terms]
        out = np.zeros(self.space.n_dofs)
        for a, vec in self._load_terms:
            out += float(a(t)) * vec
        return out

    def inflow(self, t):
        key = None if self.steady else t
        if key not in self._inflow:
            self._inflow[key] = classify_inflow(self.space, self.problem.b, t)
        inflow = self._inflow[key]
        return inflow

    def convection_operator(self, t_lo, dt, inflow):
        p = self.problem
        if not self.steady or p.f is not None:
            return cd_convection_operator(self.space, p.b, t_lo, dt, inflow, f=p.f,
                                          div_b=p.div_b, mass=self.mass)
        key = (dt, inflow.key)
        if key not in self._conv:
            self._conv[key] = cd_convection_operator(self.space, p.b, t_lo, dt, inflow,
                                                     div_b=p.div_b, mass=self.mass)
        return self._conv[key]

    def mass_solver(self, inflow):
        key = inflow.key
        if key not in self._mass_solvers:
            if self.lumped:
                self._mass_solvers[key] = ReducedSolver(self.lumped_mass, inflow.dof_indices,
                                                        method="diagonal")
            else:
                self._mass_solvers[key] = ReducedSolver(self.mass, inflow.dof_indices,
                                                        method=self.method, cfg=self.cfg)
        return self._mass_solvers[key]

    def diffusion_solver(self, dt, t):
        key = (dt,) if self.steady else (dt, t)
        if key not in self._diff:
            p = self.problem
            A = cd_diffusion_system(self.space, dt, p.eps, p.c, t, mass=self.mass)
            if not self.steady:
                self._diff.clear()
            self._diff[key] = ReducedSolver(A, self.space.all_boundary_dofs,
                                            method=self.method, cfg=self.cfg)
        return self._diff[key]


def cd_convection_substep(state, problem, t_lo, dt, space, solver=None):
    """One explicit convection substep from ``t_lo`` to ``t_lo + dt``.

    Inflow DOFs of the new time level receive the interpolated boundary data;
    the mass system is solved on the remaining DOFs.
    """
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    solver = solver or CdSolver(problem, space)
    t_hi = t_lo + dt
    inflow = solver.inflow(t_hi)
    rhs = solver.convection_operator(t_lo, dt, inflow)(np.asarray(state, dtype=float))
    values = _dirichlet_values(space, problem.u_b, t_hi, solver.mass_solver(inflow).fixed)
    return solver.mass_solver(inflow).solve(rhs, values)


def cd_step(state, problem, t_n, grid, space, solver=None, n=None):
    """One global step: ``m`` convection substeps then the diffusion correction.

    When the step index ``n`` is given, times are taken from ``grid`` so that
    substep times carry no rounding drift.
    """
    solver = solver or CdSolver(problem, space)
    dt, m = grid.dt, grid.m
    delta = grid.local_dt
    u = np.asarray(state, dtype=float)
    for i in range(m):
        t_lo = grid.time(n, i) if n is not None else t_n + i * delta
        t_hi = grid.time(n, i + 1) if n is not None else t_n + (i + 1) * delta
        u = cd_convection_substep(u, problem, t_lo, t_hi - t_lo if n is not None else delta,
                                  space, solver)
    t_new = grid.time(n + 1) if n is not None else t_n + dt
    rhs = solver.mass @ u + dt * solver.load(t_new)
    diff = solver.diffusion_solver(dt, t_new)
    u_new = diff.solve(rhs, _dirichlet_values(space, problem.u_b, t_new, diff.fixed))
    diverged, max_abs = check_divergence(u_new)
    return StepOutcome(u_new, diverged, max_abs)


@dataclass
class CdRun:
    outcome: StepOutcome
    time: float
    steps: int
    trajectory: list = field(default_factory=list)  # (time, state) pairs when recorded
    log: list = field(default_factory=list)  # (time, max_abs) per step


def cd_run(problem, grid, space, record=False, lumped=False, method="direct", cfg=None,
           solver=None, callback=None):
    """Integrate from ``I_h u_0`` over ``grid``; stops early on divergence.

    ``callback(n, t, state)`` is invoked after every step.
    """
    solver = solver or CdSolver(problem, space, lumped=lumped, method=method, cfg=cfg)
    u = interpolate(space, problem.u_0, 0.0)
    diverged, max_abs = check_divergence(u)
    outcome = StepOutcome(u, diverged, max_abs)
    run = CdRun(outcome, 0.0, 0)
    if record:
        run.trajectory.append((0.0, u.copy()))
    for n in range(grid.N):
        outcome = cd_step(u, problem, grid.time(n), grid, space, solver, n=n)
        u = outcome.state
        t = grid.time(n + 1)
        run.outcome, run.time, run.steps = outcome, t, n + 1
        run.log.append((t, outcome.max_abs))
        if record:
            run.trajectory.append((t, u.copy()))
        if callback is not None:
            callback(n + 1, t, u)
        if outcome.diverged:
            log.info("diverged at step %d (t = %.6g, max |u| = %.3e)", n + 1, t, outcome.max_abs)
            break
    return run
