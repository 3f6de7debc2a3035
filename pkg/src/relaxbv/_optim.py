"""Projected limited-memory quasi-Newton descent with grouped central
finite differences.

The objective is ``weights @ terms(z)`` where ``terms`` evaluates one value
per quadrature cell in a single batch. Gradients are central finite
differences taken group-by-group: an FDGroup collects coordinates whose
term dependencies are disjoint, so a single pair of perturbed batch
evaluations prices every coordinate in the group (each term sees at most
one perturbed coordinate and is attributed to it through ``owner``).

Feasibility (zero-mean or mean-b oscillation fields, amplitude caps) is a
caller-supplied projection applied to the start and to every accepted
trial point; a matching gradient projection keeps descent directions in
the tangent space of the affine part of the constraint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AllStartsFailedError


@dataclass
class FDGroup:
    """Coordinates with disjoint term footprints.

    coords: (k,) indices into z.
    owner: (n_terms,) local index in [0, k) of the group coordinate the term
    depends on, or -1 when the term touches none of them.
    """

    coords: np.ndarray
    owner: np.ndarray


@dataclass
class StartReport:
    start: int
    value: float
    iterations: int
    status: str


def grouped_gradient(terms_fn, weights, z, groups, fd_scale=1e-6):
    grad = np.zeros_like(z)
    for g in groups:
        h = fd_scale * (1.0 + np.abs(z[g.coords]))
        zp = z.copy()
        zp[g.coords] += h
        zm = z.copy()
        zm[g.coords] -= h
        diff = (terms_fn(zp) - terms_fn(zm)) * weights
        valid = g.owner >= 0
        sums = np.bincount(g.owner[valid], weights=diff[valid],
                           minlength=len(g.coords))
        grad[g.coords] += sums / (2.0 * h)
    return grad


def _two_loop(g, S, Y, rhos):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(S), reversed(Y), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if S:
        q *= float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
    for (s, y, rho), a in zip(zip(S, Y, rhos), reversed(alphas)):
        btr = rho * float(y @ q)
        q += s * (a - btr)
    return q


def minimize_projected(terms_fn, weights, z0, groups, project=None,
                       project_gradient=None, *, max_iter=500, rel_tol=1e-10,
                       memory=10, fd_scale=1e-6, max_backtracks=40):
    """Descend from z0; returns (z, value, iterations, status).

    status: CONVERGED (relative decrease below rel_tol), MAX_ITER, LS_STALL
    (no decreasing projected trial found), or NONFINITE (objective not
    finite at the start; nonfinite trial points are merely skipped).
    """

    def objective(z):
        return float(weights @ terms_fn(z))

    z = project(z0.copy()) if project else z0.copy()
    val = objective(z)
    if not np.isfinite(val):
        return z, val, 0, "NONFINITE"
    g = grouped_gradient(terms_fn, weights, z, groups, fd_scale)
    if not np.isfinite(g).all():
        return z, val, 0, "NONFINITE"
    if project_gradient is not None:
        g = project_gradient(g)
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    rhos: list[float] = []
    status = "MAX_ITER"
    it = 0
    for it in range(1, max_iter + 1):
        if float(np.max(np.abs(g), initial=0.0)) < 1e-14:
            status = "CONVERGED"
            break
        d = -_two_loop(g, S, Y, rhos)
        if not np.isfinite(d).all() or float(d @ g) >= 0.0:
            d = -g
        step = 1.0
        z_new = None
        for _ in range(max_backtracks):
            trial = z + step * d
            if project is not None:
                trial = project(trial)
            v_try = objective(trial)
            if np.isfinite(v_try) and v_try < val:
                z_new, v_new = trial, v_try
                break
            step *= 0.5
        if z_new is None:
            status = "LS_STALL"
            break
        g_new = grouped_gradient(terms_fn, weights, z_new, groups, fd_scale)
        if not np.isfinite(g_new).all():
            z, val = z_new, v_new
            status = "NONFINITE"
            break
        if project_gradient is not None:
            g_new = project_gradient(g_new)
        s = z_new - z
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            S.append(s)
            Y.append(y)
            rhos.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
                rhos.pop(0)
        decrease = val - v_new
        z, val, g = z_new, v_new, g_new
        if decrease < rel_tol * max(1.0, abs(val)):
            status = "CONVERGED"
            break
    return z, val, it, status


def multistart_minimize(default_start, random_start: Callable, n_random: int,
                        seed: int, terms_fn, weights, groups, project=None,
                        project_gradient=None, extra_starts=None, **descent_kw):
    """Run descent from the default start, ``n_random`` seeded random starts,
    and any ``extra_starts`` (e.g. an interpolated coarse-grid minimizer);
    per-start randomness comes from spawned seed-sequence children so the set
    of starts is independent of evaluation order.

    Returns (best_z, best_value, reports). Ties keep the lowest start index.
    Raises ALL_STARTS_FAILED if no start produced a finite value.
    """
    n_random = max(n_random, 0)
    extra_starts = list(extra_starts or [])
    children = np.random.SeedSequence(seed).spawn(n_random)
    best_z, best_val, best_i = None, np.inf, -1
    reports: list[StartReport] = []
    for i in range(1 + n_random + len(extra_starts)):
        if i == 0:
            z0 = np.asarray(default_start, dtype=float)
        elif i <= n_random:
            z0 = np.asarray(random_start(np.random.default_rng(children[i - 1])),
                            dtype=float)
        else:
            z0 = np.asarray(extra_starts[i - 1 - n_random], dtype=float)
        try:
            z, val, iters, status = minimize_projected(
                terms_fn, weights, z0, groups, project, project_gradient,
                **descent_kw)
        except FloatingPointError:
            reports.append(StartReport(i, float("nan"), 0, "NONFINITE"))
            continue
        reports.append(StartReport(i, val, iters, status))
        if status != "NONFINITE" and np.isfinite(val) and val < best_val:
            best_z, best_val, best_i = z, val, i
    if best_z is None:
        raise AllStartsFailedError(
            f"all {len(reports)} descent starts failed with nonfinite values")
    return best_z, best_val, reports
