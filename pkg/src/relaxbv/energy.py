"""Three-term relaxed energies and their verification ladders.

relaxed_energy assembles bulk + jump + cantor for a pair (u, v); the jump
integrand is always taken at zero oscillation mean, so the jump term is a
function of u alone.  recovery_estimate and mollified_estimate build
explicit approximating families whose values bracket the representation,
and sandwich_report compares all of them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .density import (
    INFINITY,
    Integrand,
    RecessionDensity,
    check_hypotheses_p,
    recession_infty,
    recession_p,
)
from .envelope import envelope_integrand, is_cq_at
from .errors import (
    ConfigParseError,
    DimensionMismatchError,
    HypothesisFailError,
    NonfiniteValueError,
    NotAStepFieldError,
    QuadratureUnderresolvedWarning,
)
from .fields import (
    LpField,
    PiecewiseBVField,
    QuadratureSpec,
    decompose_derivative,
)
from .surface import JumpData, closed_form_K, solve_Kinfty, solve_Kp, solve_Kr

__all__ = [
    "EnergyBreakdown",
    "SandwichReport",
    "SolverSettings",
    "mollified_estimate",
    "recovery_estimate",
    "relaxed_energy",
    "sandwich_report",
]


@dataclass
class SolverSettings:
    """Cell-solver and quadrature knobs shared by the energy operations."""

    grid_n: int = 8
    multistart: int = 4
    seed: int = 0
    tol: float = 1e-6
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    schedule: object = None
    check_hypotheses: bool = True
    memo_decimals: int = 6
    r_start: float = 1.0
    r_growth: float = 2.0
    r_levels: int = 7
    r_rel_tol: float = 0.01

    def __post_init__(self):
        if not isinstance(self.grid_n, (int, np.integer)) or self.grid_n < 2:
            raise DimensionMismatchError(f"grid_n must be an integer >= 2, got {self.grid_n!r}")
        if not isinstance(self.multistart, (int, np.integer)) or self.multistart < 1:
            raise DimensionMismatchError(f"multistart must be >= 1, got {self.multistart!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise DimensionMismatchError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not (self.tol > 0.0):
            raise DimensionMismatchError(f"tol must be positive, got {self.tol!r}")
        if not (self.r_start > 0.0 and self.r_growth > 1.0 and self.r_levels >= 2):
            raise DimensionMismatchError("r-ladder needs r_start > 0, r_growth > 1, r_levels >= 2")
        if not (0.0 < self.r_rel_tol < 1.0):
            raise DimensionMismatchError(f"r_rel_tol must be in (0, 1), got {self.r_rel_tol!r}")


@dataclass
class EnergyBreakdown:
    """The three terms, their exact sum, per-term error estimates, and a
    record of every density, grid, and solver setting that produced them."""

    bulk: float
    jump: float
    cantor: float
    total: float
    per_term_error: dict[str, float]
    provenance: dict

    def as_dict(self) -> dict:
        return {"bulk": self.bulk, "jump": self.jump, "cantor": self.cantor,
                "total": self.total,
                "per_term_error": dict(self.per_term_error),
                "provenance": dict(self.provenance)}


@dataclass
class SandwichReport:
    """Representation total against recovery and mollified ladders."""

    breakdown: EnergyBreakdown
    recovery: list[tuple[int, float]]
    mollified: list[tuple[float, float]]
    tol_rel: float
    flags: tuple[str, ...]
    notes: list[str]

    def as_dict(self) -> dict:
        return {"breakdown": self.breakdown.as_dict(),
                "recovery": [[int(k), v] for k, v in self.recovery],
                "mollified": [[e, v] for e, v in self.mollified],
                "tol_rel": self.tol_rel,
                "flags": list(self.flags), "notes": list(self.notes)}


# ---------------------------------------------------------------------------
# shared plumbing


def _batch_eval(f, X, U, B, XI) -> np.ndarray:
    vals = np.asarray(f.eval_batch(X, U, B, XI), dtype=float)
    if vals.shape != (X.shape[0],):
        raise DimensionMismatchError(
            f"density returned shape {vals.shape}, expected ({X.shape[0]},)")
    if not np.isfinite(vals).all():
        raise NonfiniteValueError("density produced nonfinite values during assembly")
    if (vals < 0.0).any():
        raise NonfiniteValueError("density produced negative values during assembly")
    return vals


def _check_pair(u: PiecewiseBVField, v: LpField, f: Integrand) -> None:
    dims = f.dims
    if u.space_dim != dims.space_dim or u.target_dim != dims.target_dim:
        raise DimensionMismatchError(
            f"field dims ({u.space_dim}, {u.target_dim}) do not match the density's "
            f"({dims.space_dim}, {dims.target_dim})")
    if v.space_dim != u.space_dim:
        raise DimensionMismatchError(
            f"companion field space_dim {v.space_dim} does not match the field's {u.space_dim}")
    if v.field_dim != dims.field_dim:
        raise DimensionMismatchError(
            f"companion field dimension {v.field_dim} does not match the density's "
            f"{dims.field_dim}")


def _recession(f: Integrand, mode: str, s: SolverSettings) -> RecessionDensity:
    if mode == "P":
        return recession_p(f, s.schedule, tol=s.tol)
    return recession_infty(f, s.schedule, tol=s.tol)


def _bulk_term(u: PiecewiseBVField, v: LpField, f: Integrand, dec) -> float:
    keep = ~dec.bulk_cantor_mask
    X = dec.bulk_points[keep]
    if X.shape[0] == 0:
        return 0.0
    vals = _batch_eval(f, X, dec.bulk_values[keep], v.sample(X), dec.bulk_gradients[keep])
    return float((dec.bulk_weights[keep] * vals).sum())


def _cantor_term(dec, f_inf: RecessionDensity) -> float:
    K = dec.cantor_masses.size
    if K == 0:
        return 0.0
    a = dec.cantor_direction
    N = dec.cantor_points.shape[1]
    XI = np.zeros((K, a.size, N))
    XI[:, :, 0] = a  # unit rank-one direction against the first axis
    B0 = np.zeros((K, f_inf.dims.field_dim))
    vals = _batch_eval(f_inf, dec.cantor_points, dec.cantor_values, B0, XI)
    return float((dec.cantor_masses * vals).sum())


def _r_ladder_value(f_inf, jd: JumpData, s: SolverSettings):
    """Truncation ladder for the bounded-oscillation surface density: grow r
    until two successive values agree within r_rel_tol."""
    prev_val = None
    r = s.r_start
    last = None
    for _ in range(s.r_levels):
        sol = solve_Kr(f_inf, jd, r=r, grid_n=s.grid_n, multistart=s.multistart,
                       seed=s.seed, with_error_estimate=True)
        if prev_val is not None and \
                abs(sol.value - prev_val) <= s.r_rel_tol * max(abs(sol.value), 1e-12):
            return sol.value, max(sol.err_est or 0.0, abs(sol.value - prev_val)), r
        prev_val = sol.value
        last = sol
        r *= s.r_growth
    return last.value, max(last.err_est or 0.0, s.r_rel_tol * abs(last.value)), r / s.r_growth


def _jump_term(dec, f_inf: RecessionDensity, mode: str, s: SolverSettings):
    J = dec.jump_points.shape[0]
    info = {"solver": "none", "cell_solves": 0, "memo_hits": 0, "rows": int(J)}
    if J == 0:
        return 0.0, 0.0, info
    use_closed = not (f_inf.depends_on_u or f_inf.depends_on_x)
    info["solver"] = "closed-form" if use_closed else (
        "cell" if mode == "P" else "cell-r-ladder")
    m = f_inf.dims.field_dim
    b0 = np.zeros(m)
    memo: dict[tuple, tuple[float, float]] = {}
    dm = s.memo_decimals
    total = 0.0
    err = 0.0
    for j in range(J):
        x = dec.jump_points[j]
        c = dec.jump_plus[j]
        d_ = dec.jump_minus[j]
        nu = dec.jump_normals[j]
        key = (tuple(np.round(x, dm)), tuple(np.round(c, dm)),
               tuple(np.round(d_, dm)), tuple(np.round(nu, dm)))
        if key in memo:
            K_val, e = memo[key]
            info["memo_hits"] += 1
        else:
            jd = JumpData(x=x, b=b0, c=c, d_=d_, nu=nu)
            if use_closed:
                K_val, e = closed_form_K(f_inf, jd), 0.0
            elif mode == "P":
                sol = solve_Kp(f_inf, jd, grid_n=s.grid_n, multistart=s.multistart,
                               seed=s.seed, with_error_estimate=True)
                K_val, e = sol.value, sol.err_est or 0.0
                info["cell_solves"] += 1
            else:
                K_val, e, r_used = _r_ladder_value(f_inf, jd, s)
                info["cell_solves"] += 1
                info["r_final"] = r_used
            memo[key] = (K_val, e)
        total += dec.jump_weights[j] * K_val
        err += dec.jump_weights[j] * e
    info["memo_entries"] = len(memo)
    return float(total), float(err), info


def relaxed_energy(u: PiecewiseBVField, v: LpField, f: Integrand,
                   mode: str = "P",
                   settings: SolverSettings | None = None) -> EnergyBreakdown:
    """Assemble bulk + jump + cantor for the pair (u, v).

    bulk integrates f(x, u, v, grad u) over the pieces; jump integrates the
    cell surface density at zero oscillation mean over the jump set, so it
    does not depend on v; cantor integrates the recession density at b = 0
    against the staircase records.  total is the exact float sum of the
    three terms.
    """
    s = settings or SolverSettings()
    if mode not in ("P", "INFTY"):
        raise ConfigParseError(f"mode must be 'P' or 'INFTY', got {mode!r}")
    _check_pair(u, v, f)
    hyp_notes: list[str] = []
    if s.check_hypotheses:
        rep = check_hypotheses_p(f, p=(f.dims.exponent if mode == "P" else INFINITY))
        if not rep.h1_pass:
            raise HypothesisFailError(
                f"density {f.name!r} fails the sampled growth sandwich "
                f"(C table {rep.C_table[-2:]}); refusing to assemble")
        hyp_notes = list(rep.notes)
    f_inf = _recession(f, mode, s)

    dec = decompose_derivative(u, s.quadrature)
    bulk = _bulk_term(u, v, f, dec)
    n_bulk = s.quadrature.resolve_bulk(u.space_dim)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureUnderresolvedWarning)
        dec_half = decompose_derivative(
            u, QuadratureSpec(bulk_n=max(2, n_bulk // 2),
                              gauss_points=s.quadrature.gauss_points))
    bulk_half = _bulk_term(u, v, f, dec_half)

    jump, jump_err, jump_info = _jump_term(dec, f_inf, mode, s)
    cantor = _cantor_term(dec, f_inf)
    total = bulk + jump + cantor
    per_term_error = {
        "bulk": abs(bulk - bulk_half),
        "jump": jump_err,
        "cantor": f_inf.convergence_gap if f_inf.not_converged else 0.0,
    }
    provenance = {
        "density": f.name,
        "mode": mode,
        "p": (f.dims.exponent if np.isfinite(f.dims.exponent) else "inf"),
        "recession": f_inf.name,
        "recession_converged": not f_inf.not_converged,
        "grid_n": s.grid_n,
        "multistart": s.multistart,
        "seed": s.seed,
        "tol": s.tol,
        "bulk_n": n_bulk,
        "gauss_points": s.quadrature.gauss_points,
        "jump_solver": jump_info["solver"],
        "jump_rows": jump_info["rows"],
        "jump_cell_solves": jump_info["cell_solves"],
        "jump_memo_entries": jump_info.get("memo_entries", 0),
        "jump_memo_hits": jump_info["memo_hits"],
        "field_flags": list(dec.flags),
        "hypothesis_notes": hyp_notes,
    }
    if "r_final" in jump_info:
        provenance["jump_r_final"] = jump_info["r_final"]
    return EnergyBreakdown(bulk=bulk, jump=jump, cantor=cantor, total=total,
                           per_term_error=per_term_error, provenance=provenance)


# ---------------------------------------------------------------------------
# recovery sequences


def _require_step(u: PiecewiseBVField):
    """A two-piece constant field with a single jump in one space dimension."""
    if u.space_dim != 1:
        raise NotAStepFieldError(
            "recovery sequences are constructed for one-dimensional step fields")
    if u.cantor is not None:
        raise NotAStepFieldError("step fields carry no staircase part")
    if len(u.pieces) != 2 or len(u.jumps) != 1:
        raise NotAStepFieldError(
            f"need exactly two pieces and one jump, got {len(u.pieces)} pieces "
            f"and {len(u.jumps)} jumps")
    for k, piece in enumerate(u.pieces):
        lo, hi = piece.region.lo, piece.region.hi
        probes = np.array([[lo + 0.25 * (hi - lo)], [lo + 0.5 * (hi - lo)],
                           [lo + 0.75 * (hi - lo)]])
        vals = piece.value(probes)
        if np.abs(vals - vals[0]).max() > 1e-10 or np.abs(piece.gradient(probes)).max() > 1e-12:
            raise NotAStepFieldError(f"piece {k} is not constant")
    rec = u.jumps[0]
    xj = float(rec.vertices[0, 0])
    X0 = np.array([[xj]])
    c = np.asarray(rec.trace_plus(X0), dtype=float)[0]
    d_ = np.asarray(rec.trace_minus(X0), dtype=float)[0]
    return xj, c, d_


def recovery_estimate(u: PiecewiseBVField, v: LpField, f: Integrand, k: int,
                      quadrature: QuadratureSpec | None = None,
                      mode: str = "P",
                      settings: SolverSettings | None = None) -> float:
    """Upper estimate from the k-th member of the recovery family.

    The field transitions through the best cell profile inside the layer of
    width 1/(2k+1) around the jump while the companion field carries the
    scaled cell oscillation there.  The returned value is the full bulk
    integral plus the scaled layer cost; the overlap strip contributes
    O(1/k), which keeps every rung an upper estimate of the limit
    bulk + jump.
    """
    s = settings or SolverSettings()
    quad = quadrature or s.quadrature
    if mode not in ("P", "INFTY"):
        raise ConfigParseError(f"mode must be 'P' or 'INFTY', got {mode!r}")
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 1:
        raise DimensionMismatchError(f"k must be a positive integer, got {k!r}")
    _check_pair(u, v, f)
    xj, c, d_ = _require_step(u)
    f_inf = _recession(f, mode, s)
    m = f_inf.dims.field_dim
    jd = JumpData(x=np.array([xj]), b=np.zeros(m), c=c, d_=d_, nu=np.array([1.0]))
    if mode == "P":
        sol = solve_Kp(f_inf, jd, grid_n=s.grid_n, multistart=s.multistart,
                       seed=s.seed, with_error_estimate=False)
    else:
        sol = solve_Kinfty(f_inf, jd, grid_n=s.grid_n, multistart=s.multistart,
                           seed=s.seed, with_error_estimate=False)

    n = sol.grid_n
    W = sol.w_field              # (n+1, d) transition profile on the cell
    E = sol.eta_field            # (n, m) oscillation per cell
    g = (W[1:] - W[:-1]) * n
    w_mid = 0.5 * (W[1:] + W[:-1])
    t = float(2 * k + 1)
    t_mid = (np.arange(n) + 0.5) / n - 0.5
    X_layer = xj + (t_mid / t)[:, None]
    p = f.dims.exponent
    b_scale = t ** (1.0 / p) if np.isfinite(p) else 1.0
    XI = t * g[:, :, None]       # profile gradient against the jump normal
    layer_vals = _batch_eval(f, X_layer, w_mid, b_scale * E, XI)
    layer = float((layer_vals / n).sum() / t)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureUnderresolvedWarning)
        dec = decompose_derivative(u, quad)
    return _bulk_term(u, v, f, dec) + layer


# ---------------------------------------------------------------------------
# mollified sequences


def _triangle_cdf(y: np.ndarray, eps: float) -> np.ndarray:
    y = np.clip(y, -eps, eps)
    lower = (y + eps) ** 2 / (2.0 * eps * eps)
    upper = 1.0 - (eps - y) ** 2 / (2.0 * eps * eps)
    return np.where(y <= 0.0, lower, upper)


def _triangle_pdf(y: np.ndarray, eps: float) -> np.ndarray:
    return np.maximum(eps - np.abs(y), 0.0) / (eps * eps)


def _step_parts(u: PiecewiseBVField):
    xs, deltas = [], []
    for rec in u.jumps:
        X0 = rec.vertices[:1]
        xs.append(float(rec.vertices[0, 0]))
        deltas.append(np.asarray(rec.trace_plus(X0), dtype=float)[0]
                      - np.asarray(rec.trace_minus(X0), dtype=float)[0])
    return xs, deltas


def _mollify(u: PiecewiseBVField, eps: float, X: np.ndarray):
    """Triangle-kernel smoothing of a one-dimensional field: the continuous
    part is convolved by two-panel Gauss quadrature, the jump part uses the
    analytic kernel primitives."""
    nodes, gw = leggauss(8)
    half = 0.5 * eps
    S = np.concatenate([-half + half * nodes, half + half * nodes])
    Wq = np.concatenate([gw * half, gw * half])
    rho = _triangle_pdf(S, eps)
    xs, deltas = _step_parts(u)
    Q = X.shape[0]
    d = u.target_dim

    Y = (X[:, 0][:, None] - S[None, :]).reshape(-1, 1)
    U = u.value(Y).reshape(Q, S.size, d)
    G = u.gradient(Y)[:, :, 0].reshape(Q, S.size, d)
    for xj, delta in zip(xs, deltas):
        heav = (Y[:, 0] > xj).astype(float).reshape(Q, S.size)
        U = U - heav[:, :, None] * delta[None, None, :]
    coeff = (Wq * rho)[None, :, None]
    u_eps = (coeff * U).sum(axis=1)
    g_eps = (coeff * G).sum(axis=1)
    for xj, delta in zip(xs, deltas):
        y = X[:, 0] - xj
        u_eps = u_eps + _triangle_cdf(y, eps)[:, None] * delta[None, :]
        g_eps = g_eps + _triangle_pdf(y, eps)[:, None] * delta[None, :]
    return u_eps, g_eps[:, :, None]


def mollified_estimate(u: PiecewiseBVField, v: LpField, f: Integrand,
                       eps: float,
                       quadrature: QuadratureSpec | None = None) -> float:
    """Energy of the triangle-kernel smoothing (u * rho_eps, v) by fine
    quadrature; one admissible approximating family, hence an upper view
    of the unrelaxed functional only."""
    if u.space_dim != 1:
        raise DimensionMismatchError(
            "the mollified ladder is implemented for one space dimension")
    _check_pair(u, v, f)
    bbox = u.domain_bbox()
    width = float(bbox[0, 1] - bbox[0, 0])
    if not (0.0 < eps < 0.25 * width):
        raise DimensionMismatchError(
            f"eps must be in (0, {0.25 * width}), got {eps!r}")
    quad = quadrature or QuadratureSpec()
    n = quad.resolve_bulk(1)
    total = 0.0
    for piece in u.pieces:
        X, w = piece.region.grid(n)
        u_eps, g_eps = _mollify(u, eps, X)
        vals = _batch_eval(f, X, u_eps, v.sample(X), g_eps)
        total += float((w * vals).sum())
    return total


# ---------------------------------------------------------------------------
# sandwich verification


def sandwich_report(u: PiecewiseBVField, v: LpField, f: Integrand,
                    mode: str = "P",
                    ks: Sequence[int] = (4, 16, 64),
                    epsilons: Sequence[float] = (0.02, 0.01, 0.005),
                    tol_rel: float = 0.03,
                    settings: SolverSettings | None = None) -> SandwichReport:
    """Compare the representation total against the recovery ladder (upper
    estimates approaching it) and the mollified ladder, and flag PASS when
    every ladder value stays above total (1 - tol_rel) and the recovery tail
    lands below total (1 + tol_rel)."""
    s = settings or SolverSettings()
    if not (0.0 < tol_rel < 1.0):
        raise DimensionMismatchError(f"tol_rel must be in (0, 1), got {tol_rel!r}")
    br = relaxed_energy(u, v, f, mode=mode, settings=s)
    total = br.total
    notes: list[str] = []

    recovery: list[tuple[int, float]] = []
    ks = sorted(int(k) for k in ks)
    if u.jumps:
        try:
            for k in ks:
                recovery.append((k, recovery_estimate(u, v, f, k, mode=mode, settings=s)))
        except NotAStepFieldError as exc:
            notes.append(f"recovery ladder unavailable: {exc}")
            recovery = []
    else:
        # no jump: the constant family u_k = u is the recovery sequence
        recovery = [(k, br.bulk + br.cantor) for k in ks]

    mollified: list[tuple[float, float]] = []
    if u.space_dim == 1:
        for eps in epsilons:
            mollified.append((float(eps), mollified_estimate(u, v, f, eps, s.quadrature)))
    else:
        notes.append("mollified ladder unavailable in two space dimensions")

    flags: list[str] = []
    slack = 1e-12 * max(1.0, abs(total))
    values = [val for _, val in recovery] + [val for _, val in mollified]
    pass_lower = all(val >= total * (1.0 - tol_rel) - slack for val in values)
    pass_tail = (not recovery) or recovery[-1][1] <= total * (1.0 + tol_rel) + slack

    # Probe whether the density sits above its envelope along the field; if
    # so, smoothing families can only reach the unrelaxed value, which sits
    # strictly above the envelope bulk: expected gap, not a failure.
    gap_expected = False
    if u.space_dim == 1 and mollified:
        bbox = u.domain_bbox()
        xs = bbox[0, 0] + (bbox[0, 1] - bbox[0, 0]) * np.array([0.25, 0.5, 0.75])
        X = xs[:, None]
        Uv, Gv, Vv = u.value(X), u.gradient(X), v.sample(X)
        non_cq = False
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for i in range(X.shape[0]):
                point = (X[i], Uv[i], Vv[i], Gv[i])
                cq, gap = is_cq_at(f, point, grid_n=4, multistart=2,
                                   seed=s.seed, tol=s.tol)
                if not cq and gap > max(10.0 * s.tol, 1e-4):
                    non_cq = True
                    break
        if non_cq:
            env_f = envelope_integrand(f, grid_n=4, multistart=2, seed=s.seed,
                                       tol=s.tol)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                dec64 = decompose_derivative(u, QuadratureSpec(
                    bulk_n=64, gauss_points=s.quadrature.gauss_points))
                env_bulk = _bulk_term(u, v, env_f, dec64)
            moll_min = min(val for _, val in mollified)
            if moll_min > env_bulk * (1.0 + tol_rel) + slack:
                gap_expected = True
                notes.append(
                    "GAP_EXPECTED: the density is not convex-quasiconvex along "
                    "the field, so the mollified family bounds only the "
                    f"unrelaxed functional (min mollified {moll_min:.6g} vs "
                    f"envelope bulk estimate {env_bulk:.6g})")

    flags.append("PASS" if (pass_lower and pass_tail) else "FAIL")
    if gap_expected:
        flags.append("GAP_EXPECTED")
    return SandwichReport(breakdown=br, recovery=recovery, mollified=mollified,
                          tol_rel=float(tol_rel), flags=tuple(flags), notes=notes)
