"""Jump cell problems on the rotated reference cube.

The surface cost of a jump (traces c over d_, normal nu, oscillation mean
b) is the infimum of the cell average of f_inf(x, w(y), eta(y), grad w(y)
R^T) over transition profiles w joining the traces across the cube and
piecewise-constant oscillations eta with mean b. Work happens on the
reference cube (-1/2, 1/2)^N: the normal axis is the last coordinate
(bottom face pinned to d_, top face to c), lateral faces are identified
node-for-node, and the rotation taking e_N to nu enters only through the
gradient argument.

solve_Kp treats joint-scaling limits (mode P_ONE), solve_Kinfty the
gradient-only limits (mode INFTY_ONE, with the b-independence spread
reported), and solve_Kr adds the per-cell amplitude bound |eta| <= |b| + r
via alternating mean/clip projection. closed_form_K shortcuts densities
with no explicit (x, u) dependence.

Descent evaluations silence the non-fatal scale-convergence warning that
recession surrogates may emit; consult the density's own certificates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._optim import FDGroup, StartReport, multistart_minimize
from .density import evaluate_density
from .envelope import _phi_groups_1d
from .errors import (DegenerateNormalError, DimensionMismatchError,
                     NonunitNormalError, NotConvergedWarning,
                     UDependentDensityError)


@dataclass
class JumpData:
    """One jump datum: location x (None for the origin), oscillation mean b,
    trace c on the face the normal points toward, trace d_ on the opposite
    face, unit normal nu."""

    x: object = None
    b: object = 0.0
    c: object = 0.0
    d_: object = 0.0
    nu: object = 1.0

    def __post_init__(self):
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        self.d_ = np.atleast_1d(np.asarray(self.d_, dtype=float))
        self.nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if self.x is not None:
            self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        nrm = float(np.linalg.norm(self.nu))
        if nrm < 1e-8:
            raise DegenerateNormalError(f"normal has length {nrm:.3g}")
        if abs(nrm - 1.0) > 1e-12:
            raise NonunitNormalError(f"normal must be unit length, |nu| = {nrm!r}")


@dataclass
class CellSolution:
    """Best cell average found, the discrete fields behind it, and the
    mean-constraint residual of eta (componentwise, <= 1e-12 in practice).
    err_est is the half-grid comparison |value(n) - value(n/2)| when
    requested; b_spread is the re-solve spread at b = 0 (gradient-scaling
    problems only)."""

    value: float
    w_field: np.ndarray
    eta_field: np.ndarray
    grid_n: int
    residual: float
    starts_report: list[StartReport]
    converged: bool
    err_est: float | None = None
    b_spread: float | None = None


def make_rotation(nu) -> np.ndarray:
    """Deterministic rotation with R e_N = nu (N = 1 or 2). For N = 2 the
    closed form [[nu_2, nu_1], [-nu_1, nu_2]] is orthogonal with det +1;
    the N = 1 degenerate case is the 1x1 matrix [nu]."""
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    nrm = float(np.linalg.norm(nu))
    if nrm < 1e-8:
        raise DegenerateNormalError(f"normal has length {nrm:.3g}")
    if abs(nrm - 1.0) > 1e-12:
        raise NonunitNormalError(f"normal must be unit length, |nu| = {nrm!r}")
    if len(nu) == 1:
        return nu.reshape(1, 1).copy()
    if len(nu) == 2:
        return np.array([[nu[1], nu[0]], [-nu[0], nu[1]]])
    raise DimensionMismatchError("rotations are provided for N in {1, 2}")


def _w_groups_2d(n: int, d: int) -> list[FDGroup]:
    # lateral node i touches cell columns (i-1) mod n and i; with the wrap,
    # parity alone fails for odd n where nodes 0 and n-1 become neighbors,
    # so i = n-1 gets its own class
    if n % 2 == 0:
        lat_classes = [list(range(0, n, 2)), list(range(1, n, 2))]
    else:
        lat_classes = [list(range(0, n - 1, 2)), list(range(1, n - 1, 2)), [n - 1]]
    groups = []
    for lat in lat_classes:
        lat_set = set(lat)
        for pj in (0, 1):
            node_ids = [(i, j) for i in lat for j in range(1, n) if j % 2 == pj]
            if not node_ids:
                continue
            local = {ij: k for k, ij in enumerate(node_ids)}
            for c in range(d):
                coords = np.array([(i * (n - 1) + (j - 1)) * d + c
                                   for i, j in node_ids])
                owner = np.full(n * n, -1)
                for a in range(n):
                    cand = [i for i in (a, (a + 1) % n) if i in lat_set]
                    if not cand:
                        continue
                    i = cand[0]
                    for bb in range(n):
                        j = bb if bb % 2 == pj else bb + 1
                        if 1 <= j <= n - 1:
                            owner[a * n + bb] = local[(i, j)]
                groups.append(FDGroup(coords=coords, owner=owner))
    return groups


def _eta_groups(n_w: int, n_cells: int, m: int) -> list[FDGroup]:
    return [FDGroup(coords=n_w + np.arange(n_cells) * m + c,
                    owner=np.arange(n_cells))
            for c in range(m)]


def _require_mode(f_inf, mode: str):
    got = getattr(f_inf, "mode", None)
    if got is not None and got != mode:
        raise DimensionMismatchError(
            f"cell problem needs a {mode} density, got mode {got}")


def _solve_cell(f_inf, jd: JumpData, grid_n: int, multistart: int, seed: int,
                r: float | None = None) -> CellSolution:
    dims = f_inf.dims
    N, d, m = dims.space_dim, dims.target_dim, dims.field_dim
    n = int(grid_n)
    if n < 2:
        raise DimensionMismatchError("grid_n must be at least 2")
    if jd.nu.shape != (N,):
        raise DimensionMismatchError(f"normal must have shape ({N},), got {jd.nu.shape}")
    if jd.c.shape != (d,) or jd.d_.shape != (d,):
        raise DimensionMismatchError(f"traces must have shape ({d},)")
    if jd.b.shape != (m,):
        raise DimensionMismatchError(f"b must have shape ({m},)")
    x_row = np.zeros(N) if jd.x is None else np.asarray(jd.x, dtype=float)
    if x_row.shape != (N,):
        raise DimensionMismatchError(f"x must have shape ({N},), got {x_row.shape}")
    Rt = make_rotation(jd.nu).T
    c_v, d_v, b_v = jd.c, jd.d_, jd.b

    n_cells = n if N == 1 else n * n
    n_w = (n - 1) * d if N == 1 else n * (n - 1) * d
    X = np.tile(x_row, (n_cells, 1))

    # linear transition profile between the pinned faces (interior nodes)
    frac = np.arange(1, n) / n
    if N == 1:
        lin = (d_v[None, :] + frac[:, None] * (c_v - d_v)[None, :]).ravel()

        def terms(z):
            W = np.empty((n + 1, d))
            W[0] = d_v
            W[n] = c_v
            W[1:n] = z[:n_w].reshape(n - 1, d)
            g = (W[1:] - W[:-1]) * n
            u_mid = 0.5 * (W[:-1] + W[1:])
            eta = z[n_w:].reshape(n_cells, m)
            return f_inf.eval_batch(X, u_mid, eta, g[:, :, None] @ Rt)

        w_groups = _phi_groups_1d(n, d)
    else:
        prof = d_v[None, :] + frac[:, None] * (c_v - d_v)[None, :]
        lin = np.broadcast_to(prof[None], (n, n - 1, d)).ravel().copy()

        def terms(z):
            W = np.empty((n + 1, n + 1, d))
            W[:, 0] = d_v
            W[:, n] = c_v
            W[:n, 1:n] = z[:n_w].reshape(n, n - 1, d)
            W[n, 1:n] = W[0, 1:n]
            gx = ((W[1:, :-1] + W[1:, 1:])
                  - (W[:-1, :-1] + W[:-1, 1:])) * (0.5 * n)
            gy = ((W[:-1, 1:] + W[1:, 1:])
                  - (W[:-1, :-1] + W[1:, :-1])) * (0.5 * n)
            G = np.stack([gx.reshape(n_cells, d), gy.reshape(n_cells, d)], axis=2)
            u_mid = 0.25 * (W[:-1, :-1] + W[1:, :-1]
                            + W[:-1, 1:] + W[1:, 1:]).reshape(n_cells, d)
            eta = z[n_w:].reshape(n_cells, m)
            return f_inf.eval_batch(X, u_mid, eta, G @ Rt)

        w_groups = _w_groups_2d(n, d)

    def quiet_terms(z):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConvergedWarning)
            return np.asarray(terms(z), dtype=float)

    weights = np.full(n_cells, 1.0 / n_cells)
    groups = w_groups + _eta_groups(n_w, n_cells, m)
    bound = None if r is None else float(np.linalg.norm(b_v)) + float(r)

    def project(z):
        out = z.copy()
        eta = out[n_w:].reshape(n_cells, m)
        eta += b_v - eta.mean(axis=0)
        if bound is not None:
            # alternating projection onto {mean = b} and the amplitude ball
            for _ in range(50):
                norms = np.sqrt(np.einsum("ij,ij->i", eta, eta))
                over = norms > bound
                if not over.any():
                    break
                eta[over] *= (bound / norms[over])[:, None]
                gap = b_v - eta.mean(axis=0)
                if float(np.abs(gap).max(initial=0.0)) < 1e-12:
                    break
                eta += gap
        return out

    def project_gradient(g):
        out = g.copy()
        ge = out[n_w:].reshape(n_cells, m)
        ge -= ge.mean(axis=0)
        return out

    rho = 2.0 * max(1.0, float(np.linalg.norm(b_v)),
                    float(np.linalg.norm(c_v - d_v)))

    def random_start(rng):
        z = np.empty(n_w + n_cells * m)
        z[:n_w] = lin + rng.uniform(-rho, rho, n_w)
        levels = rng.uniform(-rho, rho, (2, m))
        z[n_w:] = (b_v + levels[np.arange(n_cells) % 2]).ravel()
        return z

    default = np.concatenate([lin, np.tile(b_v, n_cells)])
    best_z, best_val, reports = multistart_minimize(
        default, random_start, int(multistart), int(seed), quiet_terms,
        weights, groups, project, project_gradient)

    finite = [rep for rep in reports
              if rep.status != "NONFINITE" and np.isfinite(rep.value)]
    best_rep = min(finite, key=lambda rep: (rep.value, rep.start))
    if N == 1:
        W = np.empty((n + 1, d))
        W[0] = d_v
        W[n] = c_v
        W[1:n] = best_z[:n_w].reshape(n - 1, d)
    else:
        W = np.empty((n + 1, n + 1, d))
        W[:, 0] = d_v
        W[:, n] = c_v
        W[:n, 1:n] = best_z[:n_w].reshape(n, n - 1, d)
        W[n, 1:n] = W[0, 1:n]
    eta = best_z[n_w:].reshape(n_cells, m)
    residual = float(np.abs(eta.mean(axis=0) - b_v).max(initial=0.0))
    return CellSolution(
        value=float(best_val), w_field=W,
        eta_field=eta if N == 1 else eta.reshape(n, n, m),
        grid_n=n, residual=residual, starts_report=reports,
        converged=best_rep.status in ("CONVERGED", "LS_STALL"))


def solve_Kp(f_inf, jd: JumpData, grid_n: int = 16, multistart: int = 8,
             seed: int = 0, *, with_error_estimate: bool = True) -> CellSolution:
    """Cell infimum for a joint-scaling (mode P_ONE) density. The default
    start is the exact linear profile with constant eta = b, so densities
    whose optimum is affine are solved to roundoff."""
    _require_mode(f_inf, "P_ONE")
    sol = _solve_cell(f_inf, jd, grid_n, multistart, seed)
    if with_error_estimate:
        half = _solve_cell(f_inf, jd, max(2, int(grid_n) // 2), multistart, seed)
        sol.err_est = abs(sol.value - half.value)
    return sol


def solve_Kinfty(f_inf, jd: JumpData, grid_n: int = 16, multistart: int = 8,
                 seed: int = 0, *, with_error_estimate: bool = True) -> CellSolution:
    """Cell infimum for a gradient-scaling (mode INFTY_ONE) density. The
    value is independent of b in the limit; b_spread reports the sampled
    spread against a re-solve at b = 0 rather than assuming it."""
    _require_mode(f_inf, "INFTY_ONE")
    sol = _solve_cell(f_inf, jd, grid_n, multistart, seed)
    if with_error_estimate:
        half = _solve_cell(f_inf, jd, max(2, int(grid_n) // 2), multistart, seed)
        sol.err_est = abs(sol.value - half.value)
    if np.any(jd.b != 0.0):
        zero = JumpData(x=jd.x, b=np.zeros_like(jd.b), c=jd.c, d_=jd.d_, nu=jd.nu)
        alt = _solve_cell(f_inf, zero, grid_n, multistart, seed)
        sol.b_spread = abs(sol.value - alt.value)
    else:
        sol.b_spread = 0.0
    return sol


def solve_Kr(f_inf, jd: JumpData, r: float, grid_n: int = 16,
             multistart: int = 8, seed: int = 0, *,
             with_error_estimate: bool = True) -> CellSolution:
    """Amplitude-truncated variant of solve_Kinfty: each eta cell stays in
    the ball |eta| <= |b| + r (alternating mean/clip projection), so the
    feasible sets are nested and the value is nonincreasing in r. eta = b
    is always feasible."""
    if not (r >= 0.0):
        raise DimensionMismatchError(f"r must be nonnegative, got {r!r}")
    _require_mode(f_inf, "INFTY_ONE")
    sol = _solve_cell(f_inf, jd, grid_n, multistart, seed, r=r)
    if with_error_estimate:
        half = _solve_cell(f_inf, jd, max(2, int(grid_n) // 2), multistart,
                           seed, r=r)
        sol.err_est = abs(sol.value - half.value)
    return sol


def closed_form_K(f_inf, jd: JumpData) -> float:
    """Direct surface cost f_inf(x, b, (c - d_) tensor nu) for densities
    with no explicit u dependence (the cell infimum is attained by the
    linear profile with constant oscillation)."""
    if getattr(f_inf, "depends_on_u", False):
        raise UDependentDensityError(
            "closed-form surface cost needs a density without u dependence")
    xi = np.outer(jd.c - jd.d_, jd.nu)
    return evaluate_density(f_inf, x=jd.x, u=None, b=jd.b, xi=xi)
