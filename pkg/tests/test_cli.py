import csv
import json
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from splitfem.cli import RunConfig, main, parse_config, parse_serialized, serialize, validate
from splitfem.errors import ConfigError


def test_flags_for_converging_table_row(capsys):
    assert main(["run", "--problem", "cd-example1", "--n", "128", "--dt", "0.0015625", "--m", "1",
                 "--dump-config"]) == 0
    cfg = parse_serialized(capsys.readouterr().out)
    assert (cfg.problem, cfg.n, cfg.dt, cfg.m, cfg.N) == ("cd-example1", 128, 0.1 / 2 ** 6, 1, None)
    assert cfg.final_time == 1.0 and round(cfg.final_time / cfg.dt) == 640


def test_defaults():
    cfg = parse_config(overrides={"problem": "cd-example2", "n": 4, "N": 2}, command="run")
    assert (cfg.m, cfg.lumped, cfg.rel_tol, cfg.method) == (1, False, 1e-10, "direct")


def test_empty_config_lists_required_keys(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("{}")
    with pytest.raises(ConfigError, match="problem.*n plus one of N or dt"):
        parse_config(path)


def test_invalid_substep_count(capsys):
    assert main(["run", "--problem", "cd-example1", "--n", "4", "--N", "2", "--m", "0"]) == 1
    assert "m must be at least 1" in capsys.readouterr().err


def test_step_count_and_step_size_conflict():
    with pytest.raises(ConfigError, match="not both"):
        parse_config(overrides={"problem": "cd-example1", "n": 4, "N": 10, "dt": 0.1}, command="run")


def test_unknown_key_is_named(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"problem": "cd-example1", "mesh_size": 4}))
    with pytest.raises(ConfigError, match="mesh_size"):
        parse_config(path)


@pytest.mark.parametrize("overrides, command, match", [
    ({"problem": "cd-example7"}, "run", "unknown problem"),
    ({"problem": "cd-example1", "N": 4}, "run", "n"),
    ({"problem": "cd-example1", "n": 4}, "run", "N or dt"),
    ({"problem": "cavity", "n": 4, "dt": 0.1}, "run", "cavity"),
    ({"problem": "cavity", "n": 4}, "cavity", "dt"),
    ({"problem": "cd-example1", "n": 4}, "critical-dt", "dt_seed"),
    ({"problem": "cd-example1", "dt": 0.1, "ladder": [4]}, "converge", "axis"),
    ({"problem": "cd-example1", "axis": "h", "dt": 0.1, "ladder": [4]}, "converge", "ladder"),
    ({"problem": "cd-example1", "n": 4, "dt": -0.1}, "run", "dt must be positive"),
    ({"problem": "ns-example3", "n": 4, "N": 2, "Re": 0}, "run", "Re"),
])
def test_validation_errors(overrides, command, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(overrides=overrides, command=command)


@pytest.mark.parametrize("key, value", [("n", 2.5), ("n", "four"), ("m", True), ("lumped", 1),
                                        ("ladder", "4 8"), ("problem", 3)])
def test_type_errors(key, value):
    with pytest.raises(ConfigError, match=key):
        parse_config(overrides={"problem": "cd-example1", key: value})


def test_malformed_and_missing_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{problem:")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(bad)
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.json")


def test_flags_override_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"problem": "cd-example2", "n": 4, "N": 2, "m": 3}))
    cfg = parse_config(path, {"m": 5, "n": None}, command="run")
    assert cfg.m == 5 and cfg.n == 4


configs = st.builds(
    RunConfig,
    problem=st.sampled_from(["cd-example1", "cd-example2", "ns-example3", "ns-example4", "cavity"]),
    n=st.one_of(st.none(), st.integers(1, 256)),
    T=st.one_of(st.none(), st.floats(1e-3, 10)),
    N=st.one_of(st.none(), st.integers(0, 10 ** 6)),
    m=st.integers(1, 128),
    Re=st.one_of(st.none(), st.floats(1e-2, 1e4)),
    lumped=st.booleans(),
    rel_tol=st.floats(1e-14, 1e-2),
    method=st.sampled_from(["direct", "cg"]),
    output=st.text("abc/_-", min_size=1, max_size=12),
    vtk=st.booleans(),
    ladder=st.lists(st.floats(1e-4, 256), max_size=5).map(tuple),
    tol=st.floats(1e-10, 1e-2),
)


@given(configs)
def test_round_trip(cfg):
    back = parse_serialized(serialize(cfg))
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_config_hash_is_git_blob_hash(tmp_path):
    cfg = RunConfig(problem="cd-example1", n=4, N=2)
    body = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    blob = tmp_path / "blob"
    blob.write_text(body)
    git = subprocess.run(["git", "hash-object", str(blob)], capture_output=True, text=True)
    if git.returncode != 0:
        pytest.skip("git not available")
    assert git.stdout.strip() == cfg.config_hash()


# --------------------------------------------------------------- commands


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_zero_problem(tmp_path, capsys):
    out = tmp_path / "zero"
    assert main(["run", "--problem", "cd-zero", "--n", "4", "--N", "3", "-o", str(out), "--vtk"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["error"] == 0.0 and summary["diverged"] is False and summary["steps"] == 3
    rows = read_csv(out / "steps.csv")
    assert rows[0] == ["time", "max_abs", "l2_norm"] and len(rows) == 4
    assert all(float(r[1]) == 0.0 for r in rows[1:])
    assert "SCALARS u" in (out / "solution.vtk").read_text()


def test_run_initial_state_only(tmp_path):
    out = tmp_path / "init"
    assert main(["run", "--problem", "ns-example3", "--n", "2", "--N", "0", "-o", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["steps"] == 0


def test_divergence_exits_two(tmp_path, capsys):
    out = tmp_path / "div"
    assert main(["run", "--problem", "cd-example1", "--n", "16", "--dt", "0.1", "-o", str(out)]) == 2
    assert "DIVERGED" in capsys.readouterr().out
    assert json.loads((out / "summary.json").read_text())["diverged"] is True


def test_ns_run_writes_step_log(tmp_path):
    out = tmp_path / "ns"
    assert main(["run", "--problem", "ns-example4", "--n", "2", "--dt", "0.25", "--m", "2",
                 "-o", str(out), "--vtk"]) == 0
    rows = read_csv(out / "steps.csv")
    assert rows[0] == ["time", "max_abs", "kinetic_energy", "div_residual"] and len(rows) == 5
    assert "VECTORS velocity" in (out / "solution.vtk").read_text()


def test_converge_writes_table(tmp_path, capsys):
    out = tmp_path / "conv"
    assert main(["converge", "--problem", "cd-example2", "--axis", "h", "--ladder", "2", "4",
                 "--dt", "0.05", "--m", "4", "-o", str(out)]) == 0
    rows = read_csv(out / "convergence.csv")
    assert rows[0][:2] == ["h", "error"] and "order" in rows[0]
    assert [float(r[0]) for r in rows[1:]] == [0.5, 0.25]
    assert rows[1][rows[0].index("order")] == ""
    assert float(rows[2][rows[0].index("order")]) > 0


def test_critical_dt_command(tmp_path, capsys):
    out = tmp_path / "crit"
    assert main(["critical-dt", "--problem", "cd-diffusion", "--n", "4", "--dt-seed", "0.25",
                 "--T", "0.5", "-o", str(out)]) == 0
    assert "unbounded" in capsys.readouterr().out
    assert read_csv(out / "critical_dt_probes.csv")[0] == ["dt", "passed", "rel_error"]


def test_cavity_command(tmp_path, capsys):
    out = tmp_path / "cav"
    assert main(["cavity", "--re", "1000", "--n", "4", "--dt", "0.05", "--max-steps", "5",
                 "-o", str(out), "--vtk"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["Re"] == 1000.0 and summary["steps"] == 5
    assert "primary" in summary["ghia"]["vortices"]
    assert read_csv(out / "vortices.csv")[0] == ["vortex", "psi", "psi_sci", "x", "y"]
    assert (out / "cavity.vtk").exists()
    assert "psi_min=" in capsys.readouterr().out


def test_no_summary_flag(tmp_path):
    out = tmp_path / "quiet"
    assert main(["run", "--problem", "cd-zero", "--n", "2", "--N", "1", "-o", str(out),
                 "--no-summary", "--no-csv"]) == 0
    assert not out.exists() or not any(out.iterdir())


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "splitfem.cli", "run", "--problem", "cd-zero"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 1 and "missing required keys" in proc.stderr


def test_validate_returns_config():
    cfg = RunConfig(problem="ns-example3", n=2, dt=0.5)
    assert validate(cfg, "run") is cfg
