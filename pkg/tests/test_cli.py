"""Config-driven runner: artifacts, exit codes, determinism, isolation."""

from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from relaxbv.cli import main, run

from oracles import frozen


STEP_FIELD = """
pieces = [
  { region = [0.0, 0.5], value = [0.0] },
  { region = [0.5, 1.0], value = [1.0] },
]
"""


def write(tmp_path: Path, name: str, text: str) -> str:
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def relax_config(tmp_path: Path, density="p-norm-sum") -> str:
    return write(tmp_path, "relax.toml", f"""
density = "{density}"
p = 2.0

[solver]
grid_n = 8
multistart = 4
seed = 0
tol = 1e-6

[field]
{STEP_FIELD}
""")


def verify_config(tmp_path: Path, tol_rel=0.03) -> str:
    return write(tmp_path, "verify.toml", f"""
density = "area-like"
p = 2.0
tol_rel = {tol_rel}

[field]
{STEP_FIELD}
""")


def read_rows(out_dir: Path) -> list[dict]:
    with open(out_dir / "results.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def read_jsonl(out_dir: Path) -> list[dict]:
    with open(out_dir / "results.jsonl") as fh:
        return [json.loads(line) for line in fh]


def test_relax_step_writes_unit_total(tmp_path):
    out = tmp_path / "out"
    assert run("relax", relax_config(tmp_path), out=str(out)) == 0
    rows = read_rows(out)
    assert len(rows) == 1 and rows[0]["status"] == "OK"
    assert float(rows[0]["total"]) == frozen.STEP_FIELD_TOTAL
    (record,) = read_jsonl(out)
    for key in ("run_id", "field_hash", "density", "mode", "bulk", "jump",
                "cantor", "total", "ladders", "flags"):
        assert key in record
    assert record["total"] == frozen.STEP_FIELD_TOTAL
    assert (out / "config_echo.json").exists()


def test_verify_pass_exits_zero(tmp_path):
    out = tmp_path / "out"
    assert run("verify", verify_config(tmp_path), out=str(out)) == 0
    (record,) = read_jsonl(out)
    assert record["flags"] == ["PASS"]
    assert len(record["ladders"]["recovery"]) == 3
    assert len(record["ladders"]["mollified"]) == 3


def test_verify_fail_exits_four(tmp_path):
    # at 0.1% tolerance the mollified ladder honestly sits below the total
    out = tmp_path / "out"
    assert run("verify", verify_config(tmp_path, tol_rel=0.001), out=str(out)) == 4
    (record,) = read_jsonl(out)
    assert record["flags"] == ["FAIL"]
    assert record["status"] == "OK"


def test_malformed_configs_exit_two(tmp_path, capsys):
    bad_grid = write(tmp_path, "bad_grid.toml", """
density = "p-norm-sum"
[solver]
grid_n = 1
[field]
""" + STEP_FIELD)
    assert run("relax", bad_grid, out=str(tmp_path / "o1")) == 2
    assert "solver.grid_n" in capsys.readouterr().err

    unknown = write(tmp_path, "unknown.toml", """
density = "no-such-density"
[[query]]
b = [0.0]
""")
    assert run("envelope", unknown, out=str(tmp_path / "o2")) == 2
    assert "UNKNOWN_DENSITY" in capsys.readouterr().err

    not_toml = write(tmp_path, "broken.toml", "density = [unclosed\n")
    assert run("relax", not_toml, out=str(tmp_path / "o3")) == 2

    no_query = write(tmp_path, "noquery.toml", 'density = "p-norm-sum"\n')
    assert run("envelope", no_query, out=str(tmp_path / "o4")) == 2
    assert "'query'" in capsys.readouterr().err

    assert run("relax", str(tmp_path / "missing.toml"), out=str(tmp_path / "o5")) == 2


def test_results_are_byte_identical_across_runs(tmp_path):
    cfg = verify_config(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run("verify", cfg, out=str(out_a)) == 0
    assert run("verify", cfg, out=str(out_b)) == 0
    assert (out_a / "results.csv").read_bytes() == (out_b / "results.csv").read_bytes()
    assert (out_a / "results.jsonl").read_bytes() == (out_b / "results.jsonl").read_bytes()


def surface_config(tmp_path: Path) -> str:
    return write(tmp_path, "surface.toml", """
density = "p-norm-sum"
p = 2.0

[solver]
grid_n = 8
multistart = 2
seed = 3

[[jump]]
c = [1.0]
d = [0.0]
kind = "p"

[[jump]]
c = [2.0]
d = [0.0]
kind = "p"

[[jump]]
c = [1.0]
d = [0.0]
kind = "r"
r = 2.0
""")


def test_parallel_matches_serial_bytes(tmp_path):
    cfg = surface_config(tmp_path)
    out_a, out_b = tmp_path / "par", tmp_path / "ser"
    assert run("surface", cfg, out=str(out_a), jobs=4) == 0
    assert run("surface", cfg, out=str(out_b), jobs=1) == 0
    assert (out_a / "results.csv").read_bytes() == (out_b / "results.csv").read_bytes()
    assert (out_a / "results.jsonl").read_bytes() == (out_b / "results.jsonl").read_bytes()
    rows = read_rows(out_a)
    assert [row["job"] for row in rows] == ["0", "1", "2"]
    assert abs(float(rows[0]["value"]) - 1.0) < 1e-6
    assert abs(float(rows[1]["value"]) - 2.0) < 1e-6


def test_failing_job_becomes_row_without_aborting_siblings(tmp_path):
    cfg = write(tmp_path, "iso.toml", """
[density]
expr = "abs(b[0])^2 + norm(xi) * sqrt(1.0 - 0.0001*norm(xi))"
p = 2.0

[solver]
grid_n = 8
multistart = 2

[[query]]
xi = [[0.5]]

[[query]]
xi = [[20000.0]]
""")
    out = tmp_path / "out"
    assert run("envelope", cfg, out=str(out)) == 3
    rows = read_rows(out)
    assert [row["status"] for row in rows] == ["OK", "ERROR"]
    assert rows[0]["value"] != ""
    assert rows[1]["error"] != ""


def test_seed_enters_run_identity(tmp_path):
    cfg = relax_config(tmp_path)
    out_a, out_b, out_c = tmp_path / "s0", tmp_path / "s1", tmp_path / "s0b"
    assert run("relax", cfg, out=str(out_a), seed=0) == 0
    assert run("relax", cfg, out=str(out_b), seed=1) == 0
    assert run("relax", cfg, out=str(out_c), seed=0) == 0
    id_a = read_jsonl(out_a)[0]["run_id"]
    id_b = read_jsonl(out_b)[0]["run_id"]
    id_c = read_jsonl(out_c)[0]["run_id"]
    assert id_a != id_b and id_a == id_c


def test_env_jobs_fallback(tmp_path, monkeypatch):
    cfg = surface_config(tmp_path)
    monkeypatch.setenv("RELAXBV_JOBS", "3")
    assert run("surface", cfg, out=str(tmp_path / "envout")) == 0
    monkeypatch.setenv("RELAXBV_JOBS", "many")
    assert run("surface", cfg, out=str(tmp_path / "envbad")) == 2


def test_hypotheses_rows(tmp_path):
    cfg = write(tmp_path, "hyp.toml", """
densities = ["p-norm-sum", "double-well-xi"]
p = 2.0
""")
    out = tmp_path / "out"
    assert run("hypotheses", cfg, out=str(out)) == 0
    rows = read_rows(out)
    assert rows[0]["h1_pass"] == "true"
    assert rows[1]["h1_pass"] == "false"


def test_envelope_rows_match_oracle(tmp_path):
    cfg = write(tmp_path, "env.toml", """
density = "double-well-b"
p = 4.0

[solver]
grid_n = 16
multistart = 4

[[query]]
b = [0.0]
""")
    out = tmp_path / "out"
    assert run("envelope", cfg, out=str(out)) == 0
    (row,) = read_rows(out)
    assert float(row["value"]) <= 0.05
    assert abs(float(row["defect"]) - frozen.DOUBLE_WELL_DEFECT_AT_ORIGIN) < 0.05


def test_grid_override_lands_in_echo(tmp_path):
    out = tmp_path / "out"
    assert run("relax", relax_config(tmp_path), out=str(out), grid=16) == 0
    echo = json.loads((out / "config_echo.json").read_text())
    assert echo["solver"]["grid_n"] == 16
    assert echo["command"] == "relax"


def test_main_argv_and_module_entry(tmp_path):
    cfg = relax_config(tmp_path)
    out = tmp_path / "out"
    assert main(["relax", "--config", cfg, "--out", str(out)]) == 0
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command", "--config", cfg])
    assert exc.value.code == 2
    proc = subprocess.run(
        [sys.executable, "-m", "relaxbv.cli", "relax", "--config", cfg,
         "--out", str(tmp_path / "sub")],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "1/1 jobs ok" in proc.stdout
