"""Convex-quasiconvex envelope by discretized cell-problem minimization.

The envelope value at a frozen point (x, u, b, xi) is the infimum of the
cell average of f(x, u, b + eta(y), xi + grad phi(y)) over the unit cube,
where phi is piecewise-multilinear and pinned to zero on the whole
boundary and eta is piecewise-constant with zero mean, re-projected after
every accepted step. The zero pair is always one descent start, so the
reported value never exceeds f(point) beyond roundoff; random starts seed
multi-level eta patterns so laminate minima invisible from the zero start
(a critical point for even wells) are still found.

Descent evaluations silence the non-fatal scale-convergence warning that
recession densities may emit per batch; consult the input density's own
certificates for that signal.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._optim import FDGroup, StartReport, multistart_minimize
from .density import (Dimensions, Integrand, RecessionDensity, _certify,
                      _check_schedule, _coerce_point, _probe_points,
                      evaluate_density, recession_p)
from .errors import DimensionMismatchError, NotConvergedWarning


@dataclass
class EnvelopeProblem:
    """Cell problem for the envelope of ``f`` at ``point`` = (x, u, b, xi);
    entries of ``point`` may be None for zero defaults.

    grid_n: cells per axis on the unit cube.
    oscillation_levels: how many distinct values the random-start eta
    patterns cycle through (>= 2; descent then moves cells freely).
    multistart: random starts added to the always-present zero start.
    """

    f: Integrand
    point: tuple = (None, None, None, None)
    grid_n: int = 8
    oscillation_levels: int = 2
    multistart: int = 8
    seed: int = 0
    tol: float = 1e-6

    def __post_init__(self):
        if not isinstance(self.point, (tuple, list)) or len(self.point) != 4:
            raise DimensionMismatchError("point must be a 4-tuple (x, u, b, xi)")
        if int(self.grid_n) < 2:
            raise DimensionMismatchError("grid_n must be at least 2")
        if int(self.oscillation_levels) < 2:
            raise DimensionMismatchError("oscillation_levels must be at least 2")
        if int(self.multistart) < 1:
            raise DimensionMismatchError("multistart must be at least 1")
        if not (self.tol > 0):
            raise DimensionMismatchError("tol must be positive")


@dataclass
class EnvelopeSolution:
    """Best cell-average found, the gap f(point) - value (>= -tol since the
    zero start is admissible), and the discrete minimizer fields."""

    value: float
    gap_to_f: float
    minimizer_summary: dict
    starts_report: list[StartReport]
    converged: bool
    amplitude_capped: bool


def _phi_groups_1d(n: int, d: int) -> list[FDGroup]:
    # interior node i touches cells i-1 and i; same-parity nodes never share
    groups = []
    for par in (0, 1):
        node_ids = [i for i in range(1, n) if i % 2 == par]
        if not node_ids:
            continue
        local = {i: k for k, i in enumerate(node_ids)}
        for c in range(d):
            coords = np.array([(i - 1) * d + c for i in node_ids])
            owner = np.full(n, -1)
            for t in range(n):
                i = t if t % 2 == par else t + 1
                if 1 <= i <= n - 1:
                    owner[t] = local[i]
            groups.append(FDGroup(coords=coords, owner=owner))
    return groups


def _phi_groups_2d(n: int, d: int) -> list[FDGroup]:
    # node (i, j) touches the four cells with corners at it; parity classes
    # in each axis separate overlapping stencils
    groups = []
    for pi in (0, 1):
        for pj in (0, 1):
            node_ids = [(i, j) for i in range(1, n) for j in range(1, n)
                        if i % 2 == pi and j % 2 == pj]
            if not node_ids:
                continue
            local = {ij: k for k, ij in enumerate(node_ids)}
            for c in range(d):
                coords = np.array([((i - 1) * (n - 1) + (j - 1)) * d + c
                                   for i, j in node_ids])
                owner = np.full(n * n, -1)
                for a in range(n):
                    i = a if a % 2 == pi else a + 1
                    if not (1 <= i <= n - 1):
                        continue
                    for bb in range(n):
                        j = bb if bb % 2 == pj else bb + 1
                        if 1 <= j <= n - 1:
                            owner[a * n + bb] = local[(i, j)]
                groups.append(FDGroup(coords=coords, owner=owner))
    return groups


def _eta_groups(n_phi: int, n_cells: int, m: int) -> list[FDGroup]:
    # each eta coordinate feeds exactly its own cell
    return [FDGroup(coords=n_phi + np.arange(n_cells) * m + c,
                    owner=np.arange(n_cells))
            for c in range(m)]


def _warm_vector(summary: dict, dims: Dimensions, n: int) -> np.ndarray:
    """Interpolate a coarse minimizer onto an n-cell grid: multilinear for
    the phi nodes, piecewise-constant (containing cell) for eta."""
    N, d, m = dims.space_dim, dims.target_dim, dims.field_dim
    phi_old = np.asarray(summary["phi_nodes"], dtype=float)
    eta_old = np.asarray(summary["eta_cells"], dtype=float)
    n_old = int(summary["grid_n"])
    if phi_old.shape[-1] != d or eta_old.shape[-1] != m:
        raise DimensionMismatchError("warm start fields do not match the density dimensions")
    if N == 1:
        t_new = np.arange(1, n) / n
        t_old = np.arange(n_old + 1) / n_old
        phi_new = np.stack([np.interp(t_new, t_old, phi_old[:, c])
                            for c in range(d)], axis=1)
        centers = (np.arange(n) + 0.5) / n
        idx = np.minimum((centers * n_old).astype(int), n_old - 1)
        return np.concatenate([phi_new.ravel(), eta_old[idx].ravel()])
    t_new = np.arange(1, n) / n
    pos = t_new * n_old
    i0 = np.minimum(pos.astype(int), n_old - 1)
    fr = pos - i0
    a0, b0 = i0[:, None], i0[None, :]
    fa, fb = fr[:, None, None], fr[None, :, None]
    p00 = phi_old[a0, b0]
    p10 = phi_old[a0 + 1, b0]
    p01 = phi_old[a0, b0 + 1]
    p11 = phi_old[a0 + 1, b0 + 1]
    phi_new = ((1 - fa) * (1 - fb) * p00 + fa * (1 - fb) * p10
               + (1 - fa) * fb * p01 + fa * fb * p11)
    centers = (np.arange(n) + 0.5) / n
    ci = np.minimum((centers * n_old).astype(int), n_old - 1)
    eta_new = eta_old[ci[:, None], ci[None, :]]
    return np.concatenate([phi_new.ravel(), eta_new.ravel()])


def cq_envelope(prob: EnvelopeProblem,
                warm_start: EnvelopeSolution | None = None) -> EnvelopeSolution:
    """Minimize the discrete cell average from the zero start plus seeded
    random starts (plus an interpolated ``warm_start`` minimizer if given).

    The eta field is re-centered to zero mean after every accepted step; its
    amplitude is capped at 10 (1 + |b|), with ``amplitude_capped`` set when
    the returned minimizer sits on that cap.
    """
    f = prob.f
    dims = f.dims
    N, d, m = dims.space_dim, dims.target_dim, dims.field_dim
    x0, u0, b0, xi0 = _coerce_point(dims, *prob.point)
    n = int(prob.grid_n)
    n_cells = n if N == 1 else n * n
    n_phi = (n - 1) * d if N == 1 else (n - 1) * (n - 1) * d
    X = np.repeat(x0, n_cells, axis=0)
    U = np.repeat(u0, n_cells, axis=0)

    if N == 1:
        def terms(z):
            nodes = np.zeros((n + 1, d))
            nodes[1:n] = z[:n_phi].reshape(n - 1, d)
            dphi = (nodes[1:] - nodes[:-1]) * n
            eta = z[n_phi:].reshape(n_cells, m)
            return f.eval_batch(X, U, b0 + eta, xi0 + dphi[:, :, None])
    else:
        def terms(z):
            nodes = np.zeros((n + 1, n + 1, d))
            nodes[1:n, 1:n] = z[:n_phi].reshape(n - 1, n - 1, d)
            gx = ((nodes[1:, :-1] + nodes[1:, 1:])
                  - (nodes[:-1, :-1] + nodes[:-1, 1:])) * (0.5 * n)
            gy = ((nodes[:-1, 1:] + nodes[1:, 1:])
                  - (nodes[:-1, :-1] + nodes[1:, :-1])) * (0.5 * n)
            grad = np.stack([gx.reshape(n_cells, d), gy.reshape(n_cells, d)], axis=2)
            eta = z[n_phi:].reshape(n_cells, m)
            return f.eval_batch(X, U, b0 + eta, xi0 + grad)

    def quiet_terms(z):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConvergedWarning)
            return np.asarray(terms(z), dtype=float)

    weights = np.full(n_cells, 1.0 / n_cells)
    groups = (_phi_groups_1d(n, d) if N == 1 else _phi_groups_2d(n, d))
    groups += _eta_groups(n_phi, n_cells, m)

    cap = 10.0 * (1.0 + float(np.linalg.norm(b0[0])))

    def project(z):
        out = z.copy()
        eta = out[n_phi:].reshape(n_cells, m)
        eta -= eta.mean(axis=0)
        if float(np.abs(eta).max(initial=0.0)) > cap:
            for _ in range(3):
                np.clip(eta, -cap, cap, out=eta)
                eta -= eta.mean(axis=0)
        return out

    def project_gradient(g):
        out = g.copy()
        ge = out[n_phi:].reshape(n_cells, m)
        ge -= ge.mean(axis=0)
        return out

    rho = 2.0 * max(1.0, float(np.linalg.norm(b0[0])), float(np.linalg.norm(xi0[0])))
    k_lev = int(prob.oscillation_levels)

    def random_start(rng):
        z = np.empty(n_phi + n_cells * m)
        z[:n_phi] = rng.uniform(-rho, rho, n_phi)
        levels = rng.uniform(-rho, rho, (k_lev, m))
        z[n_phi:] = levels[np.arange(n_cells) % k_lev].ravel()
        return z

    extra = []
    if warm_start is not None:
        extra.append(_warm_vector(warm_start.minimizer_summary, dims, n))

    # the iteration budget must grow with the unknown count or fine grids
    # stall at MAX_ITER far above the discrete optimum
    dof = n_phi + n_cells * m
    best_z, best_val, reports = multistart_minimize(
        np.zeros(dof), random_start, int(prob.multistart),
        int(prob.seed), quiet_terms, weights, groups, project,
        project_gradient, extra_starts=extra, max_iter=max(500, 16 * dof))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConvergedWarning)
        f_point = evaluate_density(f, *prob.point)

    finite = [r for r in reports if r.status != "NONFINITE" and np.isfinite(r.value)]
    best_rep = min(finite, key=lambda r: (r.value, r.start))
    if N == 1:
        nodes = np.zeros((n + 1, d))
        nodes[1:n] = best_z[:n_phi].reshape(n - 1, d)
        eta = best_z[n_phi:].reshape(n, m)
    else:
        nodes = np.zeros((n + 1, n + 1, d))
        nodes[1:n, 1:n] = best_z[:n_phi].reshape(n - 1, n - 1, d)
        eta = best_z[n_phi:].reshape(n, n, m)
    capped = bool(np.abs(best_z[n_phi:]).max(initial=0.0) >= cap * (1.0 - 1e-9))
    return EnvelopeSolution(
        value=float(best_val),
        gap_to_f=float(f_point - best_val),
        minimizer_summary={"grid_n": n, "phi_nodes": nodes, "eta_cells": eta},
        starts_report=reports,
        converged=best_rep.status in ("CONVERGED", "LS_STALL"),
        amplitude_capped=capped)


def is_cq_at(f: Integrand, point, grid_n: int = 8, multistart: int = 8,
             seed: int = 0, tol: float = 1e-6) -> tuple[bool, float]:
    """Test whether no admissible oscillation pair lowers the cell average
    of f below its value at ``point``. defect = f(point) - envelope value;
    the flag is true when the defect stays within tol."""
    sol = cq_envelope(EnvelopeProblem(f=f, point=tuple(point), grid_n=grid_n,
                                      multistart=multistart, seed=seed, tol=tol))
    return bool(sol.gap_to_f <= tol), float(sol.gap_to_f)


def envelope_integrand(f: Integrand, grid_n: int = 8, multistart: int = 8,
                       seed: int = 0, tol: float = 1e-6,
                       oscillation_levels: int = 2) -> Integrand:
    """The pointwise envelope of f as a new density; every distinct batch
    entry triggers one (memoized) cell-problem solve. Intended for
    desk-scale cross-checks, not bulk quadrature.

    The growth constant carries over: the envelope stays under C (1 + g)
    because f does, and above g / C because that lower bound is convex."""
    memo: dict = {}

    def ev(x, u, b, xi):
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            key = (x[i].tobytes(), u[i].tobytes(), b[i].tobytes(), xi[i].tobytes())
            val = memo.get(key)
            if val is None:
                sol = cq_envelope(EnvelopeProblem(
                    f=f, point=(x[i], u[i], b[i], xi[i]), grid_n=grid_n,
                    oscillation_levels=oscillation_levels,
                    multistart=multistart, seed=seed, tol=tol))
                val = memo[key] = sol.value
            out[i] = val
        return out

    return Integrand(dims=f.dims, eval_batch=ev, name=f"cq[{f.name}]",
                     growth_constant=getattr(f, "growth_constant", None),
                     depends_on_x=f.depends_on_x, depends_on_u=f.depends_on_u)


def cq_recession_p(f: Integrand, schedule=None, grid_n: int = 8,
                   multistart: int = 8, seed: int = 0, *, tol: float = 1e-6,
                   queries=None, n_queries: int = 5) -> RecessionDensity:
    """Joint-scaling limit of the envelope, certified by exchanging the
    operator order on query points.

    The returned density evaluates envelope-after-recession (one cell solve
    per query); ``order_certificate`` is the worst absolute disagreement
    against recession-after-envelope over the queries and ``order_report``
    holds one row per query. Both orders share ``schedule``, so the finite
    truncation bias of the scaling limit cancels in the comparison.
    """
    p = f.dims.exponent
    if not math.isfinite(p):
        raise DimensionMismatchError("cq_recession_p needs a finite exponent")
    sched = _check_schedule(schedule)
    f_inf = recession_p(f, sched, tol=tol)
    env_of_rec = envelope_integrand(f_inf, grid_n=grid_n, multistart=multistart,
                                    seed=seed, tol=tol)
    env_f = envelope_integrand(f, grid_n=grid_n, multistart=multistart,
                               seed=seed, tol=tol)
    rec_of_env = recession_p(env_f, sched, tol=tol, probe_count=2)

    if queries is None:
        qx, qu, qb, qxi = _probe_points(f.dims, int(n_queries), seed=7)
    else:
        pts = [_coerce_point(f.dims, *q) for q in queries]
        qx = np.concatenate([t[0] for t in pts])
        qu = np.concatenate([t[1] for t in pts])
        qb = np.concatenate([t[2] for t in pts])
        qxi = np.concatenate([t[3] for t in pts])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConvergedWarning)
        a_vals = rec_of_env.eval_batch(qx, qu, qb, qxi)
        b_vals = env_of_rec.eval_batch(qx, qu, qb, qxi)
    report = [{"x": qx[i].tolist(), "u": qu[i].tolist(), "b": qb[i].tolist(),
               "xi": qxi[i].tolist(),
               "recession_of_envelope": float(a_vals[i]),
               "envelope_of_recession": float(b_vals[i]),
               "discrepancy": float(abs(a_vals[i] - b_vals[i]))}
              for i in range(len(qx))]

    rd = RecessionDensity(dims=f.dims, eval_batch=env_of_rec.eval_batch,
                          mode="P_ONE", p=p, name=f"cq_recession_p[{f.name}]",
                          depends_on_x=f.depends_on_x, depends_on_u=f.depends_on_u,
                          schedule=tuple(float(t) for t in sched))
    _certify(rd, f, probe_count=2, probe_seed=7, tol=tol)
    rd.not_converged = rd.not_converged or f_inf.not_converged or rec_of_env.not_converged
    rd.convergence_gap = max(rd.convergence_gap, f_inf.convergence_gap,
                             rec_of_env.convergence_gap)
    rd.order_certificate = max((r["discrepancy"] for r in report), default=0.0)
    rd.order_report = report
    return rd
