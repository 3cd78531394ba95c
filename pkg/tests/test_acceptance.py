"""End-to-end acceptance criteria 1-9.

Each test records one summary line through the ``criterion`` fixture before
asserting, so the session summary lists every criterion even when one fails.
Runtime limits are part of each criterion.

The full-resolution cavity run (h = 1/128, hours) only runs when
``SPLITFEM_FULL_CAVITY=1``; the h = 1/64 variant always runs.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import pytest

from splitfem.harness import find_critical_dt, run_cavity, run_convergence_study, simulate
from splitfem.problems import make_problem

pytestmark = pytest.mark.acceptance

TESTS = Path(__file__).parent


def within(x, lo, hi):
    return x is not None and lo <= x <= hi


def rel(got, ref):
    return abs(got - ref) / abs(ref)


def fmt(values):
    return "[" + ", ".join("-" if v is None else f"{v:.4f}" for v in values) + "]"


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


@pytest.fixture(scope="module")
def cd_spatial_study():
    with Timer() as t:
        rep = run_convergence_study(make_problem("cd-example2"), "h", [8, 16, 32], {"dt": 1e-5, "m": 1})
    return rep, t.seconds


def test_criterion_1_cd_spatial_order(cd_spatial_study, criterion):
    rep, seconds = cd_spatial_study
    orders = rep.orders()
    ok = all(within(o, 1.85, 2.2) for o in orders) and seconds < 300
    criterion(1, ok, f"CD spatial orders {fmt(orders)} in [1.85, 2.2], {seconds:.0f} s < 300 s")
    assert ok


def test_cd_spatial_reference_error(cd_spatial_study):
    # same ladder: the h = 1/16 error against the fine-step reference value, 20% allowance
    rep, _ = cd_spatial_study
    row = next(r for r in rep.rows if abs(r.resolution - 1 / 16) < 1e-12)
    assert rel(row.error, 6.02478e-4) <= 0.2


def test_criterion_2_cd_temporal_order(criterion):
    with Timer() as t:
        rep = run_convergence_study(make_problem("cd-example1"), "dt", [0.1, 0.05, 0.025, 0.0125],
                                    {"n": 64, "m": 64})
    orders = rep.orders()
    ok = all(within(o, 0.9, 1.12) for o in orders) and t.seconds < 600
    criterion(2, ok, f"CD temporal orders {fmt(orders)} in [0.9, 1.12], {t.seconds:.0f} s < 600 s")
    assert ok


def test_criterion_3_multistep_stability(criterion):
    p = make_problem("cd-example1")
    with Timer() as t:
        multi = simulate(p, 128, 0.1, m=64)
        single = simulate(p, 128, 0.1, m=1)
    r = multi.rel_error
    ok = (not multi.diverged and r is not None and rel(r, 5.68483e-1) <= 0.25
          and single.diverged and t.seconds < 600)
    criterion(3, ok, f"m=64 rel error {r if r is None else f'{r:.5g}'} (ref 0.568483, 25%), "
                     f"m=1 diverged={single.diverged} at step {single.steps}, {t.seconds:.0f} s < 600 s")
    assert ok


def test_criterion_4_critical_step_doubling(criterion):
    p = make_problem("cd-example1")
    crit = {}
    with Timer() as t:
        for m in (1, 2, 10, 20, 40, 80):
            crit[m] = find_critical_dt(p, 64, m, dt_seed=0.005 * m).dt_crit
    pairs = [(1, 2), (10, 20), (40, 80)]
    ratios = [crit[b] / crit[a] if crit[a] and crit[b] else None for a, b in pairs]
    ms = sorted(crit)
    monotone = all(crit[a] is not None and crit[b] is not None and crit[b] >= crit[a]
                   for a, b in zip(ms, ms[1:]))
    ok = (all(within(r, 1.6, 2.4) for r in ratios) and crit[1] is not None
          and rel(crit[1], 0.0049) <= 0.4 and monotone and t.seconds < 1800)
    values = ", ".join(f"{m}:{crit[m]:.4g}" if crit[m] else f"{m}:-" for m in ms)
    criterion(4, ok, f"dt_crit {{{values}}}, ratios {fmt(ratios)} in [1.6, 2.4], "
                     f"dt_crit(1) vs 0.0049 within 40%, {t.seconds:.0f} s < 1800 s")
    assert ok


def test_criterion_5_ns_spatial_orders(criterion):
    with Timer() as t:
        rep = run_convergence_study(make_problem("ns-example3", Re=5000.0), "h", [4, 8, 16],
                                    {"dt": 1e-5, "T": 0.05})
    u_orders, p_orders = rep.orders(), rep.orders(pressure=True)
    ok = (all(within(o, 2.7, 3.2) for o in u_orders) and all(within(o, 1.9, 2.1) for o in p_orders)
          and t.seconds < 900)
    criterion(5, ok, f"NS velocity orders {fmt(u_orders)} in [2.7, 3.2], pressure orders "
                     f"{fmt(p_orders)} in [1.9, 2.1], {t.seconds:.0f} s < 900 s")
    assert ok


def test_criterion_6_ns_temporal_order(criterion):
    with Timer() as t:
        rep = run_convergence_study(make_problem("ns-example3", Re=5000.0), "dt", [0.2, 0.1, 0.05, 0.025],
                                    {"n": 64})
    orders = rep.orders()
    ok = all(within(o, 0.93, 1.05) for o in orders) and t.seconds < 900
    criterion(6, ok, f"NS temporal orders {fmt(orders)} in [0.93, 1.05], {t.seconds:.0f} s < 900 s")
    assert ok


def test_criterion_7_ns_multistep_robustness(criterion):
    p = make_problem("ns-example4", Re=5000.0)
    with Timer() as t:
        e2 = simulate(p, 48, 0.1 / 16, m=2).error
        e64 = simulate(p, 48, 0.1 / 16, m=64).error
    ok = (e2 is not None and e64 is not None and rel(e2, e64) <= 0.05
          and rel(e2, 1.60997e-3) <= 0.25 and rel(e64, 1.60997e-3) <= 0.25 and t.seconds < 900)
    criterion(7, ok, f"velocity errors m=2 {e2:.6g}, m=64 {e64:.6g} (agree within 5%, "
                     f"ref 1.60997e-3 within 25%), {t.seconds:.0f} s < 900 s")
    assert ok


def cavity_check(n, tol_psi, limit):
    with Timer() as t:
        rep = run_cavity(1000.0, n, 0.004, m=1)
    prim, br = rep.vortices["primary"], rep.vortices["first_br"]
    checks = {
        "psi_min": rel(prim["psi"], -0.114722) <= tol_psi,
        "location": abs(prim["x"] - 0.5313) <= 1 / n + 1e-4 and abs(prim["y"] - 0.5625) <= 1 / n + 1e-4,
        "first_br": br is not None and rel(br["psi"], 1.67313e-3) <= 0.15,
        "steady": rep.steady,
        "runtime": t.seconds < limit,
    }
    detail = (f"h=1/{n}: psi_min {prim['psi']:.6g} ({rel(prim['psi'], -0.114722):.1%} vs {tol_psi:.0%}) "
              f"at ({prim['x']:.4f}, {prim['y']:.4f}); first BR "
              + (f"{br['psi']:.6g} ({rel(br['psi'], 1.67313e-3):.1%} vs 15%)" if br else "missing")
              + f"; {rep.steps} steps, {t.seconds:.0f} s < {limit:.0f} s")
    failed = [k for k, v in checks.items() if not v]
    if failed:
        detail += "; failed: " + ", ".join(failed)
    return not failed, detail


def test_criterion_8_cavity_smoke(criterion):
    ok, detail = cavity_check(64, 0.10, 1800)
    criterion(8, ok, detail)
    assert ok


@pytest.mark.slow
def test_criterion_8_cavity_full(criterion):
    if os.environ.get("SPLITFEM_FULL_CAVITY") != "1":
        criterion("8 (h=1/128)", None, "set SPLITFEM_FULL_CAVITY=1 to run (several hours)")
        pytest.skip("full-resolution cavity disabled")
    ok, detail = cavity_check(128, 0.05, float("inf"))
    criterion("8 (h=1/128)", ok, detail)
    assert ok


PROPERTY_SUITES = [
    "test_quadrature.py",
    "test_mesh.py",
    "test_fespace.py::test_interpolate_constant_and_affine",
    "test_fespace.py::test_p1_reproduces_affine",
    "test_fespace.py::test_p2_reproduces_quadratics",
    "test_fespace.py::test_vector_p2_reproduces_quadratics",
    "test_assembly.py::test_diffusion_system_spd_after_elimination",
    "test_assembly.py::test_mass_and_stiffness_match_oracle",
    "test_assembly.py::test_divergence_matches_oracle",
    "test_assembly.py::test_load_vector_matches_oracle",
    "test_assembly.py::test_cd_convection_matches_oracle",
    "test_assembly.py::test_cd_convection_source_matches_oracle",
    "test_assembly.py::test_ns_convection_matches_oracle",
    "test_assembly.py::test_ns_convection_with_inflow_matches_oracle",
    "test_cd_scheme.py::test_single_index_equals_reference_step",
    "test_ns_scheme.py::test_single_index_equals_reference_step",
    "test_ns_scheme.py::test_reuse_equals_refactorization",
    "test_ns_scheme.py::test_constraints_hold_after_every_step",
    "test_linsolve.py::test_random_rhs_pressure_mean_zero_and_divergence_free",
    "test_cd_scheme.py::test_zero_data_fixed_point",
    "test_ns_scheme.py::test_zero_data_trajectory",
    "test_linsolve.py::test_zero_rhs_gives_zero",
]


def test_criterion_9_property_suites(criterion):
    with Timer() as t:
        proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                               *[str(TESTS / s) for s in PROPERTY_SUITES]],
                              capture_output=True, text=True, cwd=TESTS.parent)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and t.seconds < 120
    criterion(9, ok, f"property suites: {tail.strip('= ')}, {t.seconds:.0f} s < 120 s")
    assert ok, proc.stdout[-3000:]
