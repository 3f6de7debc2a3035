"""Configuration-driven batch runner with deterministic result artifacts.

One TOML config file describes a batch of independent jobs for one command
(envelope, surface, relax, verify, or hypotheses).  The runner validates the
whole config up front (exit 2 on any problem, naming the offending key),
executes the jobs on a fixed thread pool (a failing job becomes a status row,
exit 3, without aborting its siblings; verify reports that fail their own
check exit 4), and writes results.csv, results.jsonl, and config_echo.json
into the output directory.

Reproducibility: the root seed plus the job index derive every per-job seed
through numpy's SeedSequence spawn keys (seed_j = SeedSequence(root,
spawn_key=(j,)).generate_state(1)[0]), rows are written in job-index order,
and no timestamps enter the artifacts, so a fixed (config, seed) pair yields
byte-identical output files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import tomli

from .density import (
    INFINITY,
    check_hypotheses_p,
    density_from_expression,
    evaluate_density,
    make_density,
    recession_infty,
    recession_p,
)
from .energy import SolverSettings, relaxed_energy, sandwich_report
from .envelope import EnvelopeProblem, cq_envelope
from .errors import ConfigParseError, OutputIOError, RelaxbvError
from .fields import QuadratureSpec, build_field, build_lp_field
from .surface import JumpData, solve_Kinfty, solve_Kp, solve_Kr

__all__ = ["main", "run"]

COMMANDS = ("envelope", "surface", "relax", "verify", "hypotheses")

_CSV_COLUMNS = {
    "envelope": ["density", "x", "u", "b", "xi", "value", "f_value", "defect",
                 "cq", "converged"],
    "surface": ["density", "kind", "c", "d", "nu", "b", "r", "value",
                "err_est", "converged"],
    "relax": ["density", "mode", "field_hash", "bulk", "jump", "cantor",
              "total"],
    "verify": ["density", "mode", "field_hash", "total", "recovery",
               "mollified", "flags"],
    "hypotheses": ["density", "p", "C_empirical", "h1_pass",
                   "h1_within_declared", "h3_tau", "h3_ratio"],
}


# ---------------------------------------------------------------------------
# config loading and normalization


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigParseError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigParseError(f"cannot read config file {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigParseError(f"config file {path} is not valid TOML: {exc}") from None


def _expect(table: dict, key: str, kinds, context: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigParseError(f"missing required key '{context}{key}'")
        return default
    val = table[key]
    if kinds is bool and not isinstance(val, bool):
        raise ConfigParseError(f"key '{context}{key}' must be a boolean, got {val!r}")
    if kinds is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigParseError(f"key '{context}{key}' must be an integer, got {val!r}")
    if kinds is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigParseError(f"key '{context}{key}' must be a number, got {val!r}")
        return float(val)
    if kinds is str and not isinstance(val, str):
        raise ConfigParseError(f"key '{context}{key}' must be a string, got {val!r}")
    if kinds is list and not isinstance(val, list):
        raise ConfigParseError(f"key '{context}{key}' must be an array, got {val!r}")
    if kinds is dict and not isinstance(val, dict):
        raise ConfigParseError(f"key '{context}{key}' must be a table, got {val!r}")
    return val


def _jobs_count(cfg: dict, cli_jobs: int | None) -> int:
    if cli_jobs is not None:
        n = cli_jobs
    elif "RELAXBV_JOBS" in os.environ:
        raw = os.environ["RELAXBV_JOBS"]
        try:
            n = int(raw)
        except ValueError:
            raise ConfigParseError(
                f"environment variable RELAXBV_JOBS must be an integer, got {raw!r}") from None
    else:
        n = _expect(cfg, "jobs", int, "", default=1)
    if n < 1:
        raise ConfigParseError(f"worker count must be >= 1, got {n}")
    return n


def _normalize_config(cfg: dict, command: str, args) -> dict:
    """Apply CLI overrides and defaults; returns the config echoed to disk."""
    norm = json.loads(json.dumps(cfg))  # deep copy of plain TOML data
    solver = _expect(norm, "solver", dict, "", default={}) or {}
    solver.setdefault("grid_n", 8)
    solver.setdefault("multistart", 4)
    solver.setdefault("seed", 0)
    solver.setdefault("tol", 1e-6)
    if args.seed is not None:
        solver["seed"] = args.seed
    if args.grid is not None:
        solver["grid_n"] = args.grid
    norm["solver"] = solver
    output = _expect(norm, "output", dict, "", default={}) or {}
    if args.out is not None:
        output["dir"] = args.out
    output.setdefault("dir", "relaxbv-out")
    norm["output"] = output
    norm["jobs"] = _jobs_count(norm, args.jobs)
    norm["command"] = command
    for key in ("grid_n", "multistart", "seed"):
        _expect(solver, key, int, "solver.")
    _expect(solver, "tol", float, "solver.")
    if solver["grid_n"] < 2:
        raise ConfigParseError(f"key 'solver.grid_n' must be >= 2, got {solver['grid_n']}")
    if solver["seed"] < 0:
        raise ConfigParseError(f"key 'solver.seed' must be >= 0, got {solver['seed']}")
    return norm


def _quadrature(cfg: dict) -> QuadratureSpec:
    quad = _expect(cfg, "quadrature", dict, "", default=None)
    if quad is None:
        return QuadratureSpec()
    bulk_n = _expect(quad, "bulk_n", int, "quadrature.", default=None)
    gauss = _expect(quad, "gauss_points", int, "quadrature.", default=4)
    return QuadratureSpec(bulk_n=bulk_n, gauss_points=gauss)


def _settings(cfg: dict, seed: int) -> SolverSettings:
    solver = cfg["solver"]
    return SolverSettings(
        grid_n=solver["grid_n"], multistart=solver["multistart"], seed=seed,
        tol=solver["tol"], quadrature=_quadrature(cfg),
        check_hypotheses=_expect(cfg, "check_hypotheses", bool, "", default=True))


def _job_seed(root: int, index: int) -> int:
    return int(np.random.SeedSequence(root, spawn_key=(index,)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# shared builders


def _build_density(cfg: dict):
    dens = cfg.get("density")
    if dens is None:
        raise ConfigParseError("missing required key 'density'")
    space = _expect(cfg, "space_dim", int, "", default=1)
    target = _expect(cfg, "target_dim", int, "", default=1)
    fdim = _expect(cfg, "field_dim", int, "", default=1)
    p = _expect(cfg, "p", float, "", default=None)
    if isinstance(dens, str):
        return make_density(dens, space_dim=space, target_dim=target,
                            field_dim=fdim, p=p)
    if isinstance(dens, dict):
        expr = _expect(dens, "expr", str, "density.", required=True)
        name = _expect(dens, "name", str, "density.", default=None)
        p_loc = _expect(dens, "p", float, "density.", default=p)
        return density_from_expression(expr, space_dim=space, target_dim=target,
                                       field_dim=fdim,
                                       p=2.0 if p_loc is None else p_loc,
                                       name=name)
    raise ConfigParseError(
        "key 'density' must be a catalog name or a table with an 'expr' key")


def _point_array(entry, shape, key: str) -> np.ndarray:
    if entry is None:
        return np.zeros(shape)
    arr = np.asarray(entry, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if len(shape) == 2 and arr.ndim == 1 and shape[1] == 1:
        arr = arr[:, None]
    if arr.shape != shape:
        raise ConfigParseError(
            f"key '{key}' must have shape {shape}, got {tuple(arr.shape)}")
    if not np.isfinite(arr).all():
        raise ConfigParseError(f"key '{key}' contains nonfinite entries")
    return arr


def _default_companion(cfg_case: dict, cfg: dict, f, u) -> dict:
    comp = cfg_case.get("companion", cfg.get("companion"))
    if comp is not None:
        return _expect({"companion": comp}, "companion", dict, "")
    bbox = u.domain_bbox()
    domain = [float(v) for v in bbox.reshape(-1)] if u.space_dim == 2 else \
        [float(bbox[0, 0]), float(bbox[0, 1])]
    m = f.dims.field_dim
    p = f.dims.exponent if np.isfinite(f.dims.exponent) else 2.0
    return {"space_dim": u.space_dim, "field_dim": m,
            "value": ["0.0"] * m if m > 1 else "0.0", "p": p, "domain": domain}


def _hash_spec(spec: dict) -> str:
    return hashlib.sha256(
        json.dumps(spec, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# job preparation (validation phase: every error here exits 2)


def _prepare_jobs(command: str, cfg: dict) -> list[dict]:
    jobs: list[dict] = []
    if command == "hypotheses":
        names = _expect(cfg, "densities", list, "", default=None)
        if names is None:
            f = _build_density(cfg)
            p = _expect(cfg, "p", float, "", default=None)
            jobs.append({"f": f, "p": p, "density": f.name})
        else:
            for name in names:
                sub = dict(cfg)
                sub["density"] = name
                f = _build_density(sub)
                jobs.append({"f": f, "p": sub.get("p"), "density": f.name})
        return jobs

    f = _build_density(cfg)
    dims = f.dims
    N, d, m = dims.space_dim, dims.target_dim, dims.field_dim

    if command == "envelope":
        queries = _expect(cfg, "query", list, "", required=True)
        if not queries:
            raise ConfigParseError("key 'query' must contain at least one entry")
        for i, q in enumerate(queries):
            ctx = f"query[{i}]."
            if not isinstance(q, dict):
                raise ConfigParseError(f"key 'query[{i}]' must be a table")
            point = (_point_array(q.get("x"), (N,), ctx + "x"),
                     _point_array(q.get("u"), (d,), ctx + "u"),
                     _point_array(q.get("b"), (m,), ctx + "b"),
                     _point_array(q.get("xi"), (d, N), ctx + "xi"))
            jobs.append({"f": f, "point": point, "density": f.name})
        return jobs

    if command == "surface":
        entries = _expect(cfg, "jump", list, "", required=True)
        if not entries:
            raise ConfigParseError("key 'jump' must contain at least one entry")
        kinds = set()
        for i, entry in enumerate(entries):
            ctx = f"jump[{i}]."
            if not isinstance(entry, dict):
                raise ConfigParseError(f"key 'jump[{i}]' must be a table")
            kind = _expect(entry, "kind", str, ctx, default="p")
            if kind not in ("p", "infty", "r"):
                raise ConfigParseError(
                    f"key '{ctx}kind' must be one of p, infty, r, got {kind!r}")
            r = _expect(entry, "r", float, ctx, default=None)
            if kind == "r" and r is None:
                raise ConfigParseError(f"key '{ctx}r' is required when kind = 'r'")
            nu_default = [1.0] if N == 1 else None
            nu_raw = entry.get("nu", nu_default)
            if nu_raw is None:
                raise ConfigParseError(f"missing required key '{ctx}nu'")
            jd = JumpData(
                x=None if entry.get("x") is None else _point_array(entry.get("x"), (N,), ctx + "x"),
                b=_point_array(entry.get("b"), (m,), ctx + "b"),
                c=_point_array(entry.get("c"), (d,), ctx + "c"),
                d_=_point_array(entry.get("d"), (d,), ctx + "d"),
                nu=_point_array(nu_raw, (N,), ctx + "nu"))
            kinds.add(kind)
            jobs.append({"f": f, "jd": jd, "kind": kind, "r": r, "density": f.name})
        # recessions are shared read-only inputs: build them before the pool
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rec_p = recession_p(f) if "p" in kinds else None
            rec_i = recession_infty(f) if kinds & {"infty", "r"} else None
        for job in jobs:
            job["f_inf"] = rec_p if job["kind"] == "p" else rec_i
        return jobs

    # relax / verify
    cases = _expect(cfg, "case", list, "", default=None)
    if cases is None:
        field_spec = _expect(cfg, "field", dict, "", required=True)
        cases = [{"field": field_spec}]
    if not cases:
        raise ConfigParseError("key 'case' must contain at least one entry")
    for i, case in enumerate(cases):
        ctx = f"case[{i}]."
        if not isinstance(case, dict):
            raise ConfigParseError(f"key 'case[{i}]' must be a table")
        field_spec = _expect(case, "field", dict, ctx,
                             default=_expect(cfg, "field", dict, ""))
        if field_spec is None:
            raise ConfigParseError(f"missing required key '{ctx}field'")
        try:
            u = build_field(field_spec)
        except RelaxbvError as exc:
            raise ConfigParseError(f"key '{ctx}field' is invalid: {exc}") from None
        comp_spec = _default_companion(case, cfg, f, u)
        try:
            v = build_lp_field(comp_spec)
        except RelaxbvError as exc:
            raise ConfigParseError(f"key '{ctx}companion' is invalid: {exc}") from None
        mode = case.get("mode", cfg.get("mode", "P"))
        if mode not in ("P", "INFTY"):
            raise ConfigParseError(
                f"key '{ctx}mode' must be 'P' or 'INFTY', got {mode!r}")
        job = {"f": f, "u": u, "v": v, "mode": mode, "density": f.name,
               "field_hash": _hash_spec(field_spec)}
        if command == "verify":
            job["ks"] = [int(k) for k in
                         _expect(cfg, "ks", list, "", default=[4, 16, 64])]
            job["epsilons"] = [float(e) for e in
                               _expect(cfg, "epsilons", list, "",
                                       default=[0.02, 0.01, 0.005])]
            job["tol_rel"] = _expect(cfg, "tol_rel", float, "", default=0.03)
        jobs.append(job)
    return jobs


# ---------------------------------------------------------------------------
# job execution (runtime phase: every error here becomes a status row)


def _fmt_vec(arr) -> list:
    return [float(t) for t in np.asarray(arr, dtype=float).reshape(-1)]


def _run_one(command: str, job: dict, cfg: dict, seed: int) -> dict:
    if command == "envelope":
        solver = cfg["solver"]
        x, u, b, xi = job["point"]
        sol = cq_envelope(EnvelopeProblem(
            f=job["f"], point=(x, u, b, xi), grid_n=solver["grid_n"],
            multistart=solver["multistart"], seed=seed, tol=solver["tol"]))
        f_val = sol.value + sol.gap_to_f
        return {"density": job["density"], "x": _fmt_vec(x), "u": _fmt_vec(u),
                "b": _fmt_vec(b), "xi": _fmt_vec(xi), "value": sol.value,
                "f_value": f_val, "defect": sol.gap_to_f,
                "cq": bool(sol.gap_to_f <= solver["tol"]),
                "converged": sol.converged}
    if command == "surface":
        solver = cfg["solver"]
        jd, kind = job["jd"], job["kind"]
        kwargs = dict(grid_n=solver["grid_n"], multistart=solver["multistart"],
                      seed=seed, with_error_estimate=True)
        if kind == "p":
            sol = solve_Kp(job["f_inf"], jd, **kwargs)
        elif kind == "infty":
            sol = solve_Kinfty(job["f_inf"], jd, **kwargs)
        else:
            sol = solve_Kr(job["f_inf"], jd, r=job["r"], **kwargs)
        return {"density": job["density"], "kind": kind,
                "c": _fmt_vec(jd.c), "d": _fmt_vec(jd.d_), "nu": _fmt_vec(jd.nu),
                "b": _fmt_vec(jd.b), "r": job["r"], "value": sol.value,
                "err_est": sol.err_est, "converged": sol.converged}
    if command == "relax":
        br = relaxed_energy(job["u"], job["v"], job["f"], mode=job["mode"],
                            settings=_settings(cfg, seed))
        return {"density": job["density"], "mode": job["mode"],
                "field_hash": job["field_hash"], "bulk": br.bulk,
                "jump": br.jump, "cantor": br.cantor, "total": br.total,
                "ladders": None, "flags": br.provenance["field_flags"]}
    if command == "verify":
        rep = sandwich_report(job["u"], job["v"], job["f"], mode=job["mode"],
                              ks=job["ks"], epsilons=job["epsilons"],
                              tol_rel=job["tol_rel"],
                              settings=_settings(cfg, seed))
        br = rep.breakdown
        return {"density": job["density"], "mode": job["mode"],
                "field_hash": job["field_hash"], "bulk": br.bulk,
                "jump": br.jump, "cantor": br.cantor, "total": br.total,
                "recovery": [[int(k), val] for k, val in rep.recovery],
                "mollified": [[eps, val] for eps, val in rep.mollified],
                "ladders": {"recovery": [[int(k), val] for k, val in rep.recovery],
                            "mollified": [[eps, val] for eps, val in rep.mollified]},
                "flags": list(rep.flags), "notes": rep.notes}
    # hypotheses
    p_arg = job["p"]
    rep = check_hypotheses_p(job["f"],
                             p=None if p_arg is None else float(p_arg))
    return {"density": job["density"], "p": rep.p,
            "C_empirical": rep.C_empirical, "h1_pass": rep.h1_pass,
            "h1_within_declared": rep.h1_within_declared,
            "h3_tau": rep.h3_tau, "h3_ratio": rep.h3_ratio,
            "notes": list(rep.notes)}


def _execute(command: str, jobs: list[dict], cfg: dict) -> list[dict]:
    root = cfg["solver"]["seed"]
    workers = max(1, min(cfg["jobs"], len(jobs)))

    def task(index: int) -> dict:
        base = {"job": index, "status": "OK", "error": ""}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                payload = _run_one(command, jobs[index], cfg,
                                   _job_seed(root, index))
            base.update(payload)
        except RelaxbvError as exc:
            base["status"] = "ERROR"
            base["error"] = f"{exc.code}: {exc}"
            base["density"] = jobs[index].get("density", "")
        except Exception as exc:  # isolation: siblings keep running
            base["status"] = "ERROR"
            base["error"] = f"{type(exc).__name__}: {exc}"
            base["density"] = jobs[index].get("density", "")
        return base

    if workers == 1:
        return [task(i) for i in range(len(jobs))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, range(len(jobs))))


# ---------------------------------------------------------------------------
# artifact emission


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, sort_keys=True)
    return str(value)


def _write_outputs(out_dir: str, command: str, cfg: dict, rows: list[dict],
                   run_id: str) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        columns = ["run_id", "command", "job", "status"] + \
            _CSV_COLUMNS[command] + ["error"]
        with open(out / "results.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                record = {"run_id": run_id, "command": command, **row}
                writer.writerow([_csv_cell(record.get(col)) for col in columns])
        with open(out / "results.jsonl", "w") as fh:
            for row in rows:
                record = {"run_id": run_id, "command": command, **row}
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        with open(out / "config_echo.json", "w") as fh:
            json.dump({"run_id": run_id, **cfg}, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OutputIOError(f"cannot write results under {out}: {exc}") from None


# ---------------------------------------------------------------------------
# entry points


def run(command: str, config_path: str, out: str | None = None,
        seed: int | None = None, jobs: int | None = None,
        grid: int | None = None) -> int:
    """Programmatic equivalent of the command line; returns the exit code."""
    ns = argparse.Namespace(out=out, seed=seed, jobs=jobs, grid=grid)
    if command not in COMMANDS:
        print(f"error: CONFIG_PARSE: unknown command {command!r}", file=sys.stderr)
        return 2
    try:
        cfg = _normalize_config(_load_toml(config_path), command, ns)
        job_list = _prepare_jobs(command, cfg)
    except RelaxbvError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 2
    # the run identity covers the semantic payload only: where results land
    # and how many workers ran must not change the bytes inside them
    semantic = {k: v for k, v in cfg.items() if k not in ("output", "jobs")}
    run_id = hashlib.sha256(
        json.dumps(semantic, sort_keys=True).encode()).hexdigest()[:16]
    rows = _execute(command, job_list, cfg)
    try:
        _write_outputs(cfg["output"]["dir"], command, cfg, rows, run_id)
    except OutputIOError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 3
    n_ok = sum(1 for row in rows if row["status"] == "OK")
    print(f"{command}: {n_ok}/{len(rows)} jobs ok -> {cfg['output']['dir']} "
          f"(run {run_id})")
    if n_ok < len(rows):
        return 3
    if command == "verify":
        if any("PASS" not in row.get("flags", []) for row in rows):
            return 4
    return 0


def _uint(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a nonnegative integer")
    return value


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="relaxbv",
        description="Batch runner for relaxed-energy evaluation: envelopes, "
                    "surface densities, energy assembly, and sandwich checks.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=_uint, default=None, help="root seed")
    parser.add_argument("--jobs", type=int, default=None,
                        help="worker count (falls back to RELAXBV_JOBS)")
    parser.add_argument("--grid", type=int, default=None,
                        help="cell-solver grid override")
    args = parser.parse_args(argv)
    return run(args.command, args.config, out=args.out, seed=args.seed,
               jobs=args.jobs, grid=args.grid)


if __name__ == "__main__":
    sys.exit(main())
