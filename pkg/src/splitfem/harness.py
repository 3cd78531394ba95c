"""Study drivers: convergence ladders, critical step search, lid-driven cavity."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .assembly import element_quad, mass_matrix, scatter_vector, stiffness_matrix
from .cd_scheme import CdSolver, TimeGrid, cd_run
from .errors import InvalidArgumentError
from .fespace import basis_values, build_space
from .io import atomic_write_text, paper_sci, write_csv
from .linsolve import ReducedSolver
from .mesh import build_uniform_unit_square
from .ns_scheme import NsSolver, ns_run
from .problems import CdProblem, cavity, convergence_order, exact_norm, l2_error, l2_norm
from .quadrature import triangle_rule

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- single runs

@dataclass
class RunResult:
    n: int
    dt: float
    m: int
    final_time: float
    steps: int
    diverged: bool
    error: float | None = None
    rel_error: float | None = None
    p_error: float | None = None
    state: object = field(default=None, repr=False)
    spaces: tuple = field(default=(), repr=False)


def simulate(problem, n, dt, m=1, T=None, round_up=False, lumped=False, method="direct",
             step_log=None):
    """Run ``problem`` on an ``n x n`` mesh with global step ``dt``; errors at the final time.

    When ``step_log`` is a list, one row per step is appended: ``(t, max|u|,
    ||u||_L2)`` for scalar problems and ``(t, max|u|, kinetic energy,
    max |(div u, q)|)`` for Navier-Stokes.
    """
    T = problem.T if T is None else T
    if T is None:
        raise InvalidArgumentError("a final time is required")
    grid = TimeGrid.from_dt(T, dt, m, round_up=round_up)
    mesh = build_uniform_unit_square(n)
    if isinstance(problem, CdProblem):
        space = build_space(mesh, 1)
        solver = CdSolver(problem, space, lumped=lumped, method=method)
        callback = None
        if step_log is not None:
            def callback(k, t, u):
                step_log.append((t, float(np.max(np.abs(u))), math.sqrt(max(u @ (solver.mass @ u), 0.0))))
        run = cd_run(problem, grid, space, solver=solver, callback=callback)
        res = RunResult(n, dt, m, run.time, run.steps, run.outcome.diverged,
                        state=run.outcome.state, spaces=(space,))
        if problem.exact is not None and not res.diverged and run.steps == grid.N:
            res.error = l2_error(run.outcome.state, space, problem.exact, run.time)
            ref = exact_norm(space, problem.exact, run.time)
            res.rel_error = res.error / ref if ref > 0 else None
        return res
    vel, pres = build_space(mesh, 2, 2), build_space(mesh, 1)
    solver = NsSolver(problem, vel, pres, grid.dt, method=method)
    callback = None
    if step_log is not None:
        def callback(k, state, prev):
            u = state.velocity
            ke = 0.5 * float(u @ (solver.mass @ u))
            div = float(np.max(np.abs(solver.system.B @ u))) if len(u) else 0.0
            step_log.append((state.time, float(np.max(np.abs(u))), ke, div))
            return False
    run = ns_run(problem, grid, vel, pres, solver=solver, callback=callback)
    res = RunResult(n, dt, m, run.state.time, run.steps, run.outcome.diverged,
                    state=run.state, spaces=(vel, pres))
    if problem.exact_u is not None and not res.diverged and run.steps == grid.N:
        res.error = l2_error(run.state.velocity, vel, problem.exact_u, run.state.time)
        ref = exact_norm(vel, problem.exact_u, run.state.time)
        res.rel_error = res.error / ref if ref > 0 else None
        if problem.exact_p is not None:
            res.p_error = l2_error(run.state.pressure, pres, problem.exact_p, run.state.time)
    return res


# ---------------------------------------------------------------- convergence

@dataclass
class ConvergenceRow:
    resolution: float
    error: float | None
    order: float | None = None
    p_error: float | None = None
    p_order: float | None = None
    diverged: bool = False


@dataclass
class ConvergenceReport:
    axis: str
    rows: list
    metadata: dict

    def orders(self, pressure=False):
        return [r.p_order if pressure else r.order for r in self.rows[1:]]

    def table(self):
        """Rows as strings, with ``divergence`` for diverged rungs."""
        has_p = any(r.p_error is not None for r in self.rows)
        header = [self.axis, "error", "error_sci", "order"]
        if has_p:
            header += ["p_error", "p_error_sci", "p_order"]
        out = []
        for r in self.rows:
            err = "divergence" if r.diverged else r.error
            line = [f"{r.resolution:.10g}", "" if err is None else err,
                    paper_sci(math.nan if r.diverged else r.error), _fmt_order(r.order)]
            if has_p:
                line += ["" if r.p_error is None else r.p_error,
                         paper_sci(math.nan if r.diverged else r.p_error), _fmt_order(r.p_order)]
            out.append(line)
        return header, out

    def write_csv(self, path):
        header, rows = self.table()
        write_csv(path, header, rows)

    def summary(self):
        return {"axis": self.axis, "metadata": self.metadata,
                "rows": [asdict(r) for r in self.rows]}


def _fmt_order(order):
    return "" if order is None else f"{order:.4f}"


def _attach_orders(rows, attr, out_attr):
    for prev, cur in zip(rows, rows[1:]):
        e0, e1 = getattr(prev, attr), getattr(cur, attr)
        if e0 is None or e1 is None or not (e0 > 0 and e1 > 0):
            continue
        setattr(cur, out_attr, convergence_order([(prev.resolution, e0), (cur.resolution, e1)])[1])


def run_convergence_study(problem, axis, ladder, fixed, problem_id=None):
    """One solve per rung of ``ladder``.

    ``axis='h'``: ladder of mesh subdivisions ``n``; ``fixed`` holds ``dt``.
    ``axis='dt'``: ladder of global steps; ``fixed`` holds ``n``.
    ``fixed`` may also hold ``m``, ``T``, ``lumped`` and ``method``.
    Resolutions are reported as ``h = 1/n`` or ``dt``.
    """
    if axis not in ("h", "dt"):
        raise InvalidArgumentError(f"axis must be 'h' or 'dt', got {axis!r}")
    ladder = list(ladder)
    if len(ladder) < 2:
        raise InvalidArgumentError("a ladder needs at least two rungs")
    opts = dict(fixed)
    m = opts.pop("m", 1)
    T = opts.pop("T", None)
    extra = {k: opts.pop(k) for k in ("lumped", "method") if k in opts}
    rows = []
    for rung in ladder:
        if axis == "h":
            n, dt, res_value = int(rung), opts["dt"], 1.0 / rung
        else:
            n, dt, res_value = int(opts["n"]), float(rung), float(rung)
        res = simulate(problem, n, dt, m=m, T=T, **extra)
        log.info("rung %s: error=%s diverged=%s", rung, res.error, res.diverged)
        rows.append(ConvergenceRow(res_value, res.error, p_error=res.p_error, diverged=res.diverged))
    rows.sort(key=lambda r: -r.resolution)
    _attach_orders(rows, "error", "order")
    _attach_orders(rows, "p_error", "p_order")
    meta = {"problem": problem_id or problem.name, "m": m, "T": T if T is not None else problem.T,
            **{k: v for k, v in fixed.items() if k not in ("m", "T")}}
    if hasattr(problem, "Re"):
        meta["Re"] = problem.Re
    return ConvergenceReport(axis, rows, meta)


# ---------------------------------------------------------------- critical step

@dataclass
class CriticalDtResult:
    m: int
    dt_crit: float | None
    bracket: tuple  # (largest converging, smallest diverging or None)
    probes: int
    unbounded: bool = False
    reference_rel_error: float | None = None
    history: list = field(default_factory=list)  # (dt, passed, rel_error)


def find_critical_dt(problem, n, m, dt_seed, T=None, max_probes=40, rel_width=0.05,
                     ceiling=None, error_factor=10.0):
    """Largest global step giving a convergent run, by bracketing then bisection.

    Each probe uses ``ceil(T / dt)`` steps and is measured at its own final
    time. A probe passes when it does not blow up and its relative error is at
    most ``error_factor * r_ref * max(1, dt / dt_ref)``, where ``r_ref`` is
    the relative error at ``dt_ref = dt_seed / 4``.
    """
    if not dt_seed > 0:
        raise InvalidArgumentError("dt_seed must be positive")
    T = problem.T if T is None else T
    ceiling = T if ceiling is None else ceiling
    dt_ref = dt_seed / 4
    ref = simulate(problem, n, dt_ref, m=m, T=T, round_up=True)
    if ref.diverged or ref.rel_error is None:
        raise InvalidArgumentError(f"reference run at dt = {dt_ref:g} did not converge")
    r_ref = max(ref.rel_error, 1e-14)
    out = CriticalDtResult(m, None, (None, None), 1, reference_rel_error=ref.rel_error)

    def probe(dt):
        res = simulate(problem, n, dt, m=m, T=T, round_up=True)
        out.probes += 1
        ok = (not res.diverged and res.rel_error is not None
              and res.rel_error <= error_factor * r_ref * max(1.0, dt / dt_ref))
        out.history.append((dt, ok, res.rel_error))
        log.info("probe m=%d dt=%.5g -> %s (rel %s)", m, dt, ok, res.rel_error)
        return ok

    lo, hi = None, None
    dt = dt_seed
    while out.probes < max_probes:
        if probe(dt):
            lo = dt
            if hi is not None:
                break
            if dt >= ceiling:
                out.unbounded = True
                break
            dt = min(2 * dt, ceiling)
        else:
            hi = dt
            if lo is not None:
                break
            dt = dt / 2
    while lo is not None and hi is not None and hi / lo - 1 > rel_width and out.probes < max_probes:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    out.dt_crit = lo
    out.bracket = (lo, hi)
    return out


# ---------------------------------------------------------------- cavity

_WINDOWS = {
    "first_bl": ((0.0, 0.3), (0.0, 0.3), 1),
    "first_br": ((0.7, 1.0), (0.0, 0.3), 1),
    "first_t": ((0.0, 0.3), (0.7, 1.0), 1),
    "second_bl": ((0.0, 0.05), (0.0, 0.05), -1),
    "second_br": ((0.95, 1.0), (0.0, 0.05), -1),
}


def load_ghia():
    """Embedded centreline and vortex reference data."""
    text = resources.files("splitfem").joinpath("data/ghia.json").read_text()
    return json.loads(text)


@dataclass
class CavityReport:
    Re: float
    n: int
    dt: float
    m: int
    steps: int
    steady: bool
    diverged: bool
    final_increment: float
    vortices: dict  # name -> {"psi", "x", "y"}
    u_profile: tuple  # (y, u_x(0.5, y))
    v_profile: tuple  # (x, u_y(x, 0.5))
    vorticity_x: tuple  # (y, omega(0.5, y))
    vorticity_y: tuple  # (x, omega(x, 0.5))
    psi: np.ndarray = field(default=None, repr=False)
    omega: np.ndarray = field(default=None, repr=False)
    velocity: np.ndarray = field(default=None, repr=False)

    def summary(self):
        return {"Re": self.Re, "n": self.n, "dt": self.dt, "m": self.m, "steps": self.steps,
                "steady": self.steady, "diverged": self.diverged,
                "final_increment": self.final_increment, "vortices": self.vortices}

    def compare_ghia(self, ghia=None):
        """Deltas against the reference vortices and centreline profiles for this ``Re``."""
        ghia = ghia or load_ghia()
        key = f"{self.Re:g}"
        out = {"vortices": {}, "u_profile_max_dev": None, "v_profile_max_dev": None}
        for name, ref in ghia["vortices"].get(key, {}).items():
            got = self.vortices.get(name)
            if got is None:
                out["vortices"][name] = None
                continue
            out["vortices"][name] = {
                "psi": got["psi"], "ref_psi": ref["psi"],
                "rel_diff": (got["psi"] - ref["psi"]) / abs(ref["psi"]),
                "dx": got["x"] - ref["x"], "dy": got["y"] - ref["y"]}
        if key in ghia["u_profile"]["values"] and self.velocity is not None:
            u_ref = np.array(ghia["u_profile"]["values"][key])
            v_ref = np.array(ghia["v_profile"]["values"][key])
            u_got, v_got = self._ghia_profiles(ghia)
            out["u_profile_max_dev"] = float(np.max(np.abs(u_got - u_ref)))
            out["v_profile_max_dev"] = float(np.max(np.abs(v_got - v_ref)))
        return out

    def _ghia_profiles(self, ghia):
        vel = self._vel_space
        ys = np.array(ghia["u_profile"]["points"])
        xs = np.array(ghia["v_profile"]["points"])
        u = vel.evaluate(self.velocity, np.column_stack([np.full_like(ys, 0.5), ys]))[0]
        v = vel.evaluate(self.velocity, np.column_stack([xs, np.full_like(xs, 0.5)]))[1]
        return u, v

    def write(self, outdir):
        """CSV tables, profile files and a JSON summary with reference deltas."""
        from pathlib import Path

        outdir = Path(outdir)
        rows = [[name, v["psi"], paper_sci(v["psi"]), v["x"], v["y"]]
                for name, v in self.vortices.items() if v is not None]
        write_csv(outdir / "vortices.csv", ["vortex", "psi", "psi_sci", "x", "y"], rows)
        write_csv(outdir / "u_profile.csv", ["y", "u"], zip(*self.u_profile))
        write_csv(outdir / "v_profile.csv", ["x", "v"], zip(*self.v_profile))
        write_csv(outdir / "vorticity_x05.csv", ["y", "omega"], zip(*self.vorticity_x))
        write_csv(outdir / "vorticity_y05.csv", ["x", "omega"], zip(*self.vorticity_y))
        summary = self.summary()
        summary["ghia"] = self.compare_ghia()
        atomic_write_text(outdir / "summary.json", json.dumps(summary, indent=2, sort_keys=True))


def streamfunction(vel_space, velocity, pres_space=None):
    """P1 vorticity (L2 projection of the curl) and stream function with zero trace.

    Returns ``(psi, omega, scalar_p1_space)`` where ``-lap psi = omega``.
    """
    mesh = vel_space.mesh
    p1 = pres_space if pres_space is not None else build_space(mesh, 1)
    q = element_quad(vel_space)
    uc = vel_space.split(velocity)[:, vel_space.scalar_cell_dofs]
    grad = np.einsum("kei,eqic->keqc", uc, q.dphi)
    curl = grad[1, ..., 0] - grad[0, ..., 1]
    phi1 = basis_values(1, triangle_rule(6).points)
    load = scatter_vector(p1, np.einsum("eq,eq,qi->ei", q.w, curl, phi1))
    omega = ReducedSolver(mass_matrix(p1)).solve(load)
    psi = ReducedSolver(stiffness_matrix(p1), p1.all_boundary_dofs).solve(load)
    return psi, omega, p1


def locate_vortices(space, psi):
    """Primary vortex (global minimum) and windowed secondary extrema over interior nodes."""
    x, y = space.node_coords.T
    interior = space.interior_dofs
    k = int(np.argmin(psi))
    out = {"primary": {"psi": float(psi[k]), "x": float(x[k]), "y": float(y[k])}}
    for name, ((x0, x1), (y0, y1), sign) in _WINDOWS.items():
        sel = interior[(x[interior] >= x0) & (x[interior] <= x1)
                       & (y[interior] >= y0) & (y[interior] <= y1)]
        if not len(sel):
            out[name] = None
            continue
        j = sel[np.argmax(sign * psi[sel])]
        out[name] = ({"psi": float(psi[j]), "x": float(x[j]), "y": float(y[j])}
                     if sign * psi[j] > 0 else None)
    return out


def run_cavity(Re, n, dt, m=1, tol=1e-5, max_steps=50000, profile_points=129, callback=None):
    """March the lid-driven cavity to steady state and post-process it.

    The run stops once ``||u^{n+1} - u^n|| / ||u^{n+1}|| <= tol`` in the L2 norm.
    """
    if not Re > 0:
        raise InvalidArgumentError("Re must be positive")
    problem = cavity(Re)
    mesh = build_uniform_unit_square(n)
    vel, pres = build_space(mesh, 2, 2), build_space(mesh, 1)
    M = mass_matrix(vel)
    grid = TimeGrid(max_steps * dt, max_steps, m)
    incr = [math.inf]

    def stop(step, state, prev):
        d = state.velocity - prev
        num = math.sqrt(max(d @ (M @ d), 0.0))
        den = math.sqrt(max(state.velocity @ (M @ state.velocity), 0.0))
        incr[0] = num / den if den > 0 else math.inf
        if callback is not None:
            callback(step, state, incr[0])
        return incr[0] <= tol

    run = ns_run(problem, grid, vel, pres, callback=stop)
    u = run.state.velocity
    psi, omega, p1 = streamfunction(vel, u, pres)
    s = np.linspace(0.0, 1.0, profile_points)
    half = np.full_like(s, 0.5)
    ux = vel.evaluate(u, np.column_stack([half, s]))[0]
    uy = vel.evaluate(u, np.column_stack([s, half]))[1]
    wx = p1.evaluate(omega, np.column_stack([half, s]))
    wy = p1.evaluate(omega, np.column_stack([s, half]))
    report = CavityReport(
        float(Re), n, dt, m, run.steps, incr[0] <= tol and not run.outcome.diverged,
        run.outcome.diverged, incr[0], locate_vortices(p1, psi),
        (s, ux), (s, uy), (s, wx), (s, wy), psi=psi, omega=omega, velocity=u)
    report._vel_space = vel
    return report


def relative_increment(vel_space, u_new, u_old):
    """L2 relative increment used by the steady-state rule."""
    return l2_norm(u_new - u_old, vel_space) / l2_norm(u_new, vel_space)
