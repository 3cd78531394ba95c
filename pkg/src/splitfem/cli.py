"""Command-line entry point.

Subcommands ``run``, ``converge``, ``critical-dt`` and ``cavity``. Exit status
is 0 on success, 2 when a run diverges, 1 on configuration or solver errors.
Set ``SPLITFEM_THREADS`` to cap BLAS threads.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SplitFemError
from .io import atomic_write_text, paper_sci, write_csv
from .problems import ProblemId, make_problem

log = logging.getLogger("splitfem")

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED = 0, 1, 2
COMMANDS = ("run", "converge", "critical-dt", "cavity")


@dataclass(frozen=True)
class RunConfig:
    """Validated run settings. Unknown keys are rejected when parsing."""

    problem: str
    n: int | None = None
    T: float | None = None
    N: int | None = None
    dt: float | None = None
    m: int = 1
    Re: float | None = None
    lumped: bool = False
    rel_tol: float = 1e-10
    method: str = "direct"
    output: str = "out"
    vtk: bool = False
    csv: bool = True
    summary: bool = True
    # study settings
    axis: str | None = None
    ladder: tuple = ()
    dt_seed: float | None = None
    tol: float = 1e-5
    max_steps: int = 50000

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["ladder"] = list(self.ladder)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self):
        """Git-style blob hash of the canonical JSON form."""
        body = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    @property
    def final_time(self):
        if self.T is not None:
            return self.T
        return make_problem(self.problem, Re=self.Re).T


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
REQUIRED = ("problem",)
_KINDS = {"n": int, "N": int, "m": int, "max_steps": int,
          "T": float, "dt": float, "Re": float, "rel_tol": float, "dt_seed": float, "tol": float,
          "lumped": bool, "vtk": bool, "csv": bool, "summary": bool}


def _coerce(name, value):
    if value is None:
        return None
    kind = _KINDS.get(name, str)
    try:
        if name == "ladder":
            if isinstance(value, (str, bytes)):
                raise ValueError
            return tuple(float(v) for v in value)
        if isinstance(value, bool) and kind is not bool:
            raise ValueError
        if kind is int:
            if float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if kind is float:
            return float(value)
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError
            return value
        if not isinstance(value, str):
            raise ValueError
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name!r}: {value!r}") from None


def validate(cfg, command="run"):
    """Check cross-field rules for ``command``; raise :class:`ConfigError`."""
    try:
        pid = ProblemId(cfg.problem)
    except ValueError:
        raise ConfigError(f"unknown problem {cfg.problem!r}; choose from "
                          + ", ".join(p.value for p in ProblemId)) from None
    if cfg.m < 1:
        raise ConfigError("m must be at least 1")
    if cfg.n is not None and cfg.n < 1:
        raise ConfigError("n must be at least 1")
    if cfg.Re is not None and not cfg.Re > 0:
        raise ConfigError("Re must be positive")
    if cfg.method not in ("direct", "cg"):
        raise ConfigError("method must be 'direct' or 'cg'")
    if cfg.rel_tol <= 0:
        raise ConfigError("rel_tol must be positive")
    if cfg.N is not None and cfg.dt is not None:
        raise ConfigError("give exactly one of N or dt, not both")
    if cfg.N is not None and cfg.N < 0:
        raise ConfigError("N must be non-negative")
    if cfg.dt is not None and not cfg.dt > 0:
        raise ConfigError("dt must be positive")
    missing = []
    if command in ("run", "cavity", "critical-dt") and cfg.n is None:
        missing.append("n")
    if command == "run":
        if cfg.N is None and cfg.dt is None:
            missing.append("N or dt")
        if pid is ProblemId.CAVITY:
            raise ConfigError("use the 'cavity' subcommand for the cavity problem")
    if command == "cavity" and cfg.dt is None:
        missing.append("dt")
    if command == "critical-dt" and cfg.dt_seed is None:
        missing.append("dt_seed")
    if command == "converge":
        if cfg.axis not in ("h", "dt"):
            missing.append("axis (h or dt)")
        elif cfg.axis == "h" and cfg.dt is None and cfg.N is None:
            missing.append("dt")
        elif cfg.axis == "dt" and cfg.n is None:
            missing.append("n")
        if len(cfg.ladder) < 2:
            missing.append("ladder (two or more rungs)")
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))
    if cfg.N is not None and cfg.N > 0 and cfg.final_time is None:
        raise ConfigError("T is required with N for this problem")
    return cfg


def parse_config(path=None, overrides=None, command=None):
    """Build a :class:`RunConfig` from a JSON file and/or a mapping of overrides.

    Overrides win over file values; ``None`` overrides are ignored.
    """
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {p}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    unknown = sorted(set(data) - set(FIELDS))
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown))
    absent = [k for k in REQUIRED if data.get(k) is None]
    if absent:
        raise ConfigError("missing required keys: " + ", ".join(absent)
                          + " (and n plus one of N or dt for 'run')")
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in data.items()})
    if command is not None:
        validate(cfg, command)
    return cfg


def serialize(cfg):
    return cfg.to_json()


def parse_serialized(text):
    data = json.loads(text)
    return parse_config(overrides={k: v for k, v in data.items()})


# ---------------------------------------------------------------- commands

def _write_summary(cfg, outdir, payload, command):
    if not cfg.summary:
        return
    payload = {"command": command, "config": cfg.to_dict(), "config_hash": cfg.config_hash(),
               **payload}
    atomic_write_text(outdir / "summary.json", json.dumps(payload, indent=2, sort_keys=True,
                                                          default=_json_default))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(x):
    return None if x is None or not math.isfinite(x) else x


def cmd_run(cfg):
    from .harness import simulate
    from .mesh import write_vtk

    problem = make_problem(cfg.problem, Re=cfg.Re)
    T = cfg.final_time
    dt = cfg.dt if cfg.dt is not None else (T / cfg.N if cfg.N else T)
    outdir = Path(cfg.output)
    steps = []
    if cfg.N == 0:
        res = _initial_only(problem, cfg)
    else:
        res = simulate(problem, cfg.n, dt, m=cfg.m, T=T, lumped=cfg.lumped, method=cfg.method,
                       step_log=steps)
    ns = problem.__class__.__name__ == "NsProblem"
    if cfg.csv:
        header = ["time", "max_abs", "kinetic_energy", "div_residual"] if ns else \
            ["time", "max_abs", "l2_norm"]
        write_csv(outdir / "steps.csv", header, steps)
    if cfg.vtk:
        space = res.spaces[0]
        mesh = space.mesh
        nv = mesh.n_vertices
        if ns:
            u = space.split(res.state.velocity)[:, :nv]
            data = {"velocity": np.column_stack([u[0], u[1]]),
                    "pressure": res.state.pressure}
        else:
            data = {"u": res.state}
        write_vtk(outdir / "solution.vtk", mesh, data, title=cfg.problem)
    payload = {"final_time": res.final_time, "steps": res.steps, "diverged": res.diverged,
               "error": _finite(res.error), "error_sci": paper_sci(res.error),
               "rel_error": _finite(res.rel_error), "p_error": _finite(res.p_error)}
    _write_summary(cfg, outdir, payload, "run")
    print(f"{cfg.problem}: steps={res.steps} t={res.final_time:.6g} "
          + ("DIVERGED" if res.diverged else f"error={paper_sci(res.error)}"))
    return EXIT_DIVERGED if res.diverged else EXIT_OK


def _initial_only(problem, cfg):
    from .fespace import build_space, interpolate
    from .harness import RunResult
    from .mesh import build_uniform_unit_square
    from .ns_scheme import NsState
    from .problems import CdProblem, l2_error

    mesh = build_uniform_unit_square(cfg.n)
    if isinstance(problem, CdProblem):
        space = build_space(mesh, 1)
        u = interpolate(space, problem.u_0, 0.0)
        err = l2_error(u, space, problem.exact, 0.0) if problem.exact else None
        return RunResult(cfg.n, 0.0, cfg.m, 0.0, 0, False, error=err, state=u, spaces=(space,))
    vel, pres = build_space(mesh, 2, 2), build_space(mesh, 1)
    u = interpolate(vel, problem.u_0, 0.0)
    err = l2_error(u, vel, problem.exact_u, 0.0) if problem.exact_u else None
    return RunResult(cfg.n, 0.0, cfg.m, 0.0, 0, False, error=err,
                     state=NsState(u, np.zeros(pres.n_dofs), 0.0), spaces=(vel, pres))


def cmd_converge(cfg):
    from .harness import run_convergence_study

    problem = make_problem(cfg.problem, Re=cfg.Re)
    fixed = {"m": cfg.m, "T": cfg.final_time, "lumped": cfg.lumped, "method": cfg.method}
    if cfg.axis == "h":
        fixed["dt"] = cfg.dt if cfg.dt is not None else cfg.final_time / cfg.N
        ladder = [int(v) for v in cfg.ladder]
    else:
        fixed["n"] = cfg.n
        ladder = list(cfg.ladder)
    report = run_convergence_study(problem, cfg.axis, ladder, fixed, problem_id=cfg.problem)
    outdir = Path(cfg.output)
    if cfg.csv:
        report.write_csv(outdir / "convergence.csv")
    _write_summary(cfg, outdir, report.summary(), "converge")
    header, rows = report.table()
    print(",".join(header))
    for r in rows:
        print(",".join(str(v) for v in r))
    return EXIT_OK


def cmd_critical(cfg):
    from .harness import find_critical_dt

    problem = make_problem(cfg.problem, Re=cfg.Re)
    res = find_critical_dt(problem, cfg.n, cfg.m, cfg.dt_seed, T=cfg.final_time)
    outdir = Path(cfg.output)
    if cfg.csv:
        write_csv(outdir / "critical_dt_probes.csv", ["dt", "passed", "rel_error"], res.history)
    _write_summary(cfg, outdir, dataclasses.asdict(res), "critical-dt")
    lo, hi = res.bracket
    status = "unbounded within probe ceiling" if res.unbounded else f"bracket=({lo}, {hi})"
    print(f"m={res.m} dt_crit={res.dt_crit} {status} probes={res.probes}")
    return EXIT_OK


def cmd_cavity(cfg):
    from .harness import run_cavity

    Re = cfg.Re if cfg.Re is not None else 1000.0
    report = run_cavity(Re, cfg.n, cfg.dt, m=cfg.m, tol=cfg.tol, max_steps=cfg.max_steps)
    outdir = Path(cfg.output)
    if cfg.csv:
        report.write(outdir)
    if cfg.vtk:
        from .mesh import write_vtk

        mesh = report._vel_space.mesh
        nv = mesh.n_vertices
        u = report._vel_space.split(report.velocity)[:, :nv]
        write_vtk(outdir / "cavity.vtk", mesh,
                  {"velocity": np.column_stack([u[0], u[1]]),
                   "psi": report.psi, "omega": report.omega}, title=f"cavity Re={Re:g}")
    payload = report.summary()
    payload["ghia"] = report.compare_ghia()
    _write_summary(cfg, outdir, payload, "cavity")
    p = report.vortices["primary"]
    print(f"Re={Re:g} steps={report.steps} steady={report.steady} "
          f"psi_min={p['psi']:.6g} at ({p['x']:.4f}, {p['y']:.4f})")
    return EXIT_DIVERGED if report.diverged else EXIT_OK


HANDLERS = {"run": cmd_run, "converge": cmd_converge, "critical-dt": cmd_critical,
            "cavity": cmd_cavity}


def build_parser():
    parser = argparse.ArgumentParser(prog="splitfem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--problem", choices=[pid.value for pid in ProblemId],
                       default="cavity" if name == "cavity" else None)
        p.add_argument("--n", type=int, help="mesh subdivisions per side (h = 1/n)")
        p.add_argument("--T", type=float, help="final time (default: problem's own)")
        p.add_argument("--N", type=int, help="number of global steps")
        p.add_argument("--dt", type=float, help="global time step")
        p.add_argument("--m", type=int, help="convection substeps per step (default 1)")
        p.add_argument("--re", dest="Re", type=float, help="Reynolds number")
        p.add_argument("--lumped", action="store_true", default=None,
                       help="lumped mass in the scalar convection step")
        p.add_argument("--rel-tol", dest="rel_tol", type=float)
        p.add_argument("--method", choices=("direct", "cg"))
        p.add_argument("--output", "-o")
        p.add_argument("--vtk", action="store_true", default=None)
        p.add_argument("--no-csv", dest="csv", action="store_false", default=None)
        p.add_argument("--no-summary", dest="summary", action="store_false", default=None)
        p.add_argument("--dump-config", action="store_true",
                       help="print the resolved config as JSON and exit")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "converge":
            p.add_argument("--axis", choices=("h", "dt"))
            p.add_argument("--ladder", type=float, nargs="+",
                           help="mesh subdivisions (axis h) or time steps (axis dt)")
        if name == "critical-dt":
            p.add_argument("--dt-seed", dest="dt_seed", type=float)
        if name == "cavity":
            p.add_argument("--tol", type=float, help="steady-state tolerance (default 1e-5)")
            p.add_argument("--max-steps", dest="max_steps", type=int)
    return parser


_NON_CONFIG = {"command", "config", "dump_config", "verbose"}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    try:
        cfg = parse_config(args.config, overrides, command=args.command)
        if args.dump_config:
            print(serialize(cfg))
            return EXIT_OK
        return HANDLERS[args.command](cfg)
    except SplitFemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
