"""Three-term energy assembly, recovery/mollified ladders, sandwich reports."""

from __future__ import annotations

import json
import warnings

import numpy as np
import pytest

from relaxbv.density import make_density
from relaxbv.energy import (
    SolverSettings,
    mollified_estimate,
    recovery_estimate,
    relaxed_energy,
    sandwich_report,
)
from relaxbv.envelope import envelope_integrand
from relaxbv.errors import (
    ConfigParseError,
    DimensionMismatchError,
    HypothesisFailError,
    NotAStepFieldError,
)
from relaxbv.fields import QuadratureSpec, build_field, build_lp_field, total_variation

from oracles import frozen


def v_const(value=0.0, field_dim=1, space_dim=1, p=2.0):
    domain = [0.0, 1.0] if space_dim == 1 else [0.0, 1.0, 0.0, 1.0]
    entry = [repr(float(value))] * field_dim
    return build_lp_field({"space_dim": space_dim, "field_dim": field_dim,
                           "value": entry if field_dim > 1 else entry[0],
                           "p": p, "domain": domain})


def v_linear():
    return build_lp_field({"space_dim": 1, "field_dim": 1, "value": "x[0]",
                           "p": 2.0, "domain": [0.0, 1.0]})


def step_field():
    return build_field({"pieces": [{"region": [0.0, 0.5], "value": [0.0]},
                                   {"region": [0.5, 1.0], "value": [1.0]}]})


def smooth_field():
    return build_field({"pieces": [{"region": [0.0, 1.0], "value": "x[0]^2",
                                    "gradient": "2*x[0]"}]})


def stair_field(depth=8):
    return build_field({"pieces": [{"region": [0.0, 1.0], "value": [0.0]}],
                        "staircase": {"depth": depth, "interval": [0.0, 1.0],
                                      "mass": 1.0}})


def pnorm(p=2.0):
    return make_density("p-norm-sum", space_dim=1, target_dim=1, field_dim=1, p=p)


def area_like():
    return make_density("area-like", space_dim=1, target_dim=1, field_dim=1, p=2.0)


# ---------------------------------------------------------------------------
# relaxed_energy


def test_step_field_splits_into_pure_jump():
    br = relaxed_energy(step_field(), v_const(), pnorm())
    assert br.bulk == 0.0
    assert br.cantor == 0.0
    assert abs(br.jump - 1.0) < 1e-9
    assert abs(br.total - frozen.STEP_FIELD_TOTAL) < 1e-9
    assert br.provenance["jump_solver"] == "closed-form"


def test_smooth_pair_is_pure_bulk():
    br = relaxed_energy(smooth_field(), v_linear(), pnorm())
    assert br.jump == 0.0 and br.cantor == 0.0
    assert abs(br.total - frozen.SMOOTH_BULK) < 1e-6
    assert br.per_term_error["bulk"] < 1e-5


def test_staircase_total_is_pure_cantor():
    br = relaxed_energy(stair_field(8), v_const(), pnorm())
    assert br.bulk == 0.0 and br.jump == 0.0
    assert abs(br.cantor - 1.0) < 1e-9
    assert abs(br.total - frozen.STEP_FIELD_TOTAL) < 1e-9


def test_total_is_exact_sum_of_terms():
    for u in (step_field(), smooth_field(), stair_field(4)):
        br = relaxed_energy(u, v_const(), pnorm())
        assert br.total == br.bulk + br.jump + br.cantor


def mixed_field():
    return build_field({"pieces": [{"region": [0.0, 0.5], "value": "x[0]",
                                    "gradient": "1.0"},
                                   {"region": [0.5, 1.0], "value": "2.0 - x[0]",
                                    "gradient": "-1.0"}],
                        "jumps": [{"point": 0.5, "minus": 0.5, "plus": 1.5}]})


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_total_variation_reduction(p):
    # f = |b|^p + |xi| with v = 0 turns every term into a mass term
    f = pnorm(p)
    v = v_const(p=p)
    for u in (step_field(), mixed_field(), stair_field(6)):
        br = relaxed_energy(u, v, f)
        assert abs(br.total - total_variation(u)) < 1e-9


def test_jump_term_bit_identical_under_v_change():
    u = mixed_field()
    a = relaxed_energy(u, v_const(), pnorm())
    b = relaxed_energy(u, v_linear(), pnorm())
    assert a.jump == b.jump
    fu = make_density("u-weighted-tv", space_dim=1, target_dim=1, field_dim=1, p=2.0)
    a = relaxed_energy(step_field(), v_const(), fu)
    b = relaxed_energy(step_field(), v_linear(), fu)
    assert a.jump == b.jump


def test_u_weighted_jump_uses_cell_solver():
    fu = make_density("u-weighted-tv", space_dim=1, target_dim=1, field_dim=1, p=2.0)
    br = relaxed_energy(step_field(), v_const(), fu)
    assert br.provenance["jump_solver"] == "cell"
    assert br.provenance["jump_cell_solves"] == 1
    assert abs(br.jump - frozen.U_WEIGHTED_TRANSITION_COST) < 5e-3


def test_infty_mode_runs_r_ladder_for_u_weighted():
    fu = make_density("u-weighted-tv", space_dim=1, target_dim=1, field_dim=1, p=2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        br = relaxed_energy(step_field(), v_const(), fu, mode="INFTY")
    assert br.provenance["jump_solver"] == "cell-r-ladder"
    assert br.provenance["jump_r_final"] >= 1.0
    assert abs(br.jump - frozen.U_WEIGHTED_TRANSITION_COST) < 5e-2


def test_hypothesis_gate_blocks_superquadratic():
    fd = make_density("double-well-xi", space_dim=1, target_dim=1, field_dim=1, p=2.0)
    with pytest.raises(HypothesisFailError):
        relaxed_energy(smooth_field(), v_const(), fd)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        br = relaxed_energy(smooth_field(), v_const(), fd,
                            settings=SolverSettings(check_hypotheses=False))
    assert np.isfinite(br.total)


def test_mode_and_dims_validation():
    with pytest.raises(ConfigParseError):
        relaxed_energy(step_field(), v_const(), pnorm(), mode="Q")
    f2 = make_density("p-norm-sum", space_dim=2, target_dim=1, field_dim=1, p=2.0)
    with pytest.raises(DimensionMismatchError):
        relaxed_energy(step_field(), v_const(), f2)
    with pytest.raises(DimensionMismatchError):
        relaxed_energy(step_field(), v_const(field_dim=2), pnorm())


def test_memo_deduplicates_identical_jump_rows():
    # two jumps with identical trace data share one cell solve
    u = build_field({"pieces": [{"region": [0.0, 0.3], "value": [0.0]},
                                {"region": [0.3, 0.7], "value": [1.0]},
                                {"region": [0.7, 1.0], "value": [2.0]}]})
    fu = make_density("u-weighted-tv", space_dim=1, target_dim=1, field_dim=1, p=2.0)
    br = relaxed_energy(u, v_const(), fu)
    # traces differ (0->1 vs 1->2), so no memo hit here
    assert br.provenance["jump_rows"] == 2
    assert br.provenance["jump_cell_solves"] == 2
    f = pnorm()
    br2 = relaxed_energy(u, v_const(), f)
    assert abs(br2.jump - 2.0) < 1e-9


def test_appendix_envelope_consistency_for_cq_density():
    # replacing an already convex-quasiconvex f by its computed envelope
    # moves the total by at most solver tolerance
    f = pnorm()
    env = envelope_integrand(f, grid_n=4, multistart=2, seed=0)
    s = SolverSettings(check_hypotheses=False,
                       quadrature=QuadratureSpec(bulk_n=32))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        raw = relaxed_energy(step_field(), v_const(), f, settings=s)
        via_env = relaxed_energy(step_field(), v_const(), env, settings=s)
    assert abs(raw.total - via_env.total) < 1e-6
    assert raw.jump == via_env.jump


def test_breakdown_record_is_json_ready():
    br = relaxed_energy(step_field(), v_const(), pnorm())
    blob = json.dumps(br.as_dict(), sort_keys=True)
    back = json.loads(blob)
    assert back["total"] == br.total
    assert back["provenance"]["density"] == "p-norm-sum"


# ---------------------------------------------------------------------------
# recovery ladder


def test_recovery_exact_for_scale_covariant_density():
    u, v, f = step_field(), v_const(), pnorm()
    for k in (1, 4, 16, 64):
        assert abs(recovery_estimate(u, v, f, k) - 1.0) < 1e-12


def test_recovery_ladder_decreases_to_area_like_total():
    u, v, f = step_field(), v_const(), area_like()
    limit = frozen.AREA_LIKE_STEP_TOTAL
    vals = [recovery_estimate(u, v, f, k) for k in (4, 16, 64)]
    assert all(val >= limit - 1e-9 for val in vals)
    assert vals[0] >= vals[1] >= vals[2]
    assert abs(vals[-1] - limit) <= 0.03 * limit
    br = relaxed_energy(u, v, f)
    assert abs(vals[-1] - (br.bulk + br.jump)) <= 0.03 * limit


def test_recovery_rejects_non_step_fields():
    v, f = v_const(), pnorm()
    with pytest.raises(NotAStepFieldError):
        recovery_estimate(smooth_field(), v, f, 4)
    with pytest.raises(NotAStepFieldError):
        recovery_estimate(stair_field(4), v, f, 4)
    with pytest.raises(NotAStepFieldError):
        recovery_estimate(mixed_field(), v, f, 4)
    with pytest.raises(DimensionMismatchError):
        recovery_estimate(step_field(), v, f, 0)


# ---------------------------------------------------------------------------
# mollified ladder


def test_mollified_step_matches_closed_form():
    u, v, f = step_field(), v_const(), area_like()
    for eps in (0.02, 0.01):
        got = mollified_estimate(u, v, f, eps)
        # triangle-kernel smoothing of the unit step under the area density
        want = (1.0 - 2.0 * eps) + np.sqrt(1.0 + eps * eps) \
            + eps * eps * np.arcsinh(1.0 / eps)
        assert abs(got - want) < 1e-3


def test_mollified_ladder_stays_below_step_total():
    u, v, f = step_field(), v_const(), area_like()
    vals = [mollified_estimate(u, v, f, eps) for eps in (0.02, 0.01, 0.005)]
    total = frozen.AREA_LIKE_STEP_TOTAL
    assert vals[0] < vals[1] < vals[2] < total
    assert all(val >= total * 0.97 for val in vals)


def test_mollified_validates_eps():
    u, v, f = step_field(), v_const(), pnorm()
    with pytest.raises(DimensionMismatchError):
        mollified_estimate(u, v, f, 0.0)
    with pytest.raises(DimensionMismatchError):
        mollified_estimate(u, v, f, 0.5)


# ---------------------------------------------------------------------------
# sandwich reports


def test_sandwich_pass_on_area_like_step():
    rep = sandwich_report(step_field(), v_const(), area_like())
    assert rep.flags == ("PASS",)
    ks = [k for k, _ in rep.recovery]
    assert ks == sorted(ks)
    vals = [val for _, val in rep.recovery]
    assert vals[0] >= vals[1] >= vals[2]
    assert vals[-1] <= rep.breakdown.total * 1.03
    assert min(val for _, val in rep.mollified) >= rep.breakdown.total * 0.97


def test_sandwich_trivial_for_smooth_pair():
    rep = sandwich_report(smooth_field(), v_linear(), pnorm())
    assert rep.flags == ("PASS",)
    for _, val in rep.recovery:
        assert val == rep.breakdown.bulk
    assert min(val for _, val in rep.mollified) >= rep.breakdown.total * 0.97


def test_sandwich_notes_gap_for_non_cq_density():
    fd = make_density("double-well-xi", space_dim=1, target_dim=1, field_dim=1,
                      p=2.0)
    ramp = build_field({"pieces": [{"region": [0.0, 1.0], "value": "0.5*x[0]",
                                    "gradient": "0.5"}]})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = sandwich_report(ramp, v_const(), fd,
                              settings=SolverSettings(check_hypotheses=False))
    assert "GAP_EXPECTED" in rep.flags
    assert "PASS" in rep.flags
    assert any("envelope" in note for note in rep.notes)


def test_sandwich_report_is_json_ready():
    rep = sandwich_report(step_field(), v_const(), pnorm())
    back = json.loads(json.dumps(rep.as_dict(), sort_keys=True))
    assert back["flags"] == ["PASS"]
    assert len(back["recovery"]) == 3 and len(back["mollified"]) == 3
