from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import relaxbv as rx
from oracles import frozen

coords = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


def _solve(f, point, **kw):
    return rx.cq_envelope(rx.EnvelopeProblem(f=f, point=point, **kw))


def test_convex_density_is_fixed_point():
    f = rx.make_density("p-norm-sum")
    sol = _solve(f, (None, None, 1.0, 1.0))
    assert sol.value == pytest.approx(2.0, abs=1e-9)
    assert sol.gap_to_f == pytest.approx(0.0, abs=1e-9)
    assert sol.gap_to_f >= -1e-6
    assert sol.converged
    assert not sol.amplitude_capped
    assert len(sol.starts_report) == 9  # zero start + 8 random


def test_double_well_b_laminate_annihilates_well():
    sol = _solve(rx.make_density("double-well-b"), (None, None, 0.0, 0.0))
    assert 0.0 <= sol.value <= 1e-6
    assert sol.value == pytest.approx(frozen.DOUBLE_WELL_ENVELOPE_AT_ORIGIN, abs=1e-6)
    eta = sol.minimizer_summary["eta_cells"]
    assert abs(eta.mean()) < 1e-12
    assert np.abs(np.abs(eta) - 1.0).max() < 1e-3  # two-level +-1 laminate


def test_double_well_xi_convexifies_at_origin():
    sol = _solve(rx.make_density("double-well-xi"), (None, None, 0.0, 0.0), grid_n=16)
    assert 0.0 <= sol.value <= 1e-6
    assert sol.value == pytest.approx(frozen.DOUBLE_WELL_ENVELOPE_AT_ORIGIN, abs=1e-6)
    # slopes of the sawtooth minimizer sit in the wells
    nodes = sol.minimizer_summary["phi_nodes"][:, 0]
    slopes = np.diff(nodes) * 16
    assert np.abs(np.abs(slopes) - 1.0).max() < 1e-3


def test_envelope_on_two_dimensional_domain():
    f = rx.make_density("p-norm-sum", space_dim=2, target_dim=2, field_dim=1)
    sol = _solve(f, (None, None, 1.0, np.ones((2, 2))), grid_n=4, multistart=2)
    assert sol.value == pytest.approx(3.0, abs=1e-9)
    assert sol.gap_to_f == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=12, deadline=None)
@given(b=coords, xi=coords)
def test_envelope_never_exceeds_density(b, xi):
    f = rx.make_density("double-well-b")
    sol = _solve(f, (None, None, b, xi), grid_n=4, multistart=1)
    assert sol.value <= f(b=b, xi=xi) + 1e-8
    assert sol.value >= 0.0


def test_is_cq_flags():
    ok, defect = rx.is_cq_at(rx.make_density("p-norm-sum"), (None, None, 0.7, -1.2))
    assert ok
    assert -1e-9 <= defect <= 1e-6

    ok, defect = rx.is_cq_at(rx.make_density("double-well-xi"), (None, None, 0.0, 0.0))
    assert not ok
    assert defect == pytest.approx(frozen.DOUBLE_WELL_DEFECT_AT_ORIGIN, abs=1e-4)

    ok, defect = rx.is_cq_at(rx.make_density("sqrt-joint"), (None, None, 1.0, 1.0))
    assert ok
    assert -1e-9 <= defect <= 1e-6


def test_refinement_monotonicity_with_warm_start():
    f = rx.make_density("double-well-xi")
    coarse = _solve(f, (None, None, 0.0, 0.3), grid_n=4)
    fine = rx.cq_envelope(
        rx.EnvelopeProblem(f=f, point=(None, None, 0.0, 0.3), grid_n=8),
        warm_start=coarse)
    assert len(fine.starts_report) == 10  # zero + 8 random + warm
    assert fine.value <= coarse.value + 1e-6
    assert fine.value >= 0.0


def test_envelope_is_separately_convex_in_b():
    f = rx.make_density("double-well-b")
    vals = {b: _solve(f, (None, None, b, 0.5)).value for b in (0.0, 0.75, 1.5)}
    assert vals[0.75] <= 0.5 * (vals[0.0] + vals[1.5]) + 1e-4


def test_order_exchange_on_homogeneous_fixed_point():
    rd = rx.cq_recession_p(rx.make_density("p-norm-sum"), grid_n=4,
                           multistart=2, n_queries=3)
    assert rd.order_certificate <= 2e-6
    assert rd(b=0.0, xi=0.0) == 0.0
    assert rd(b=1.0, xi=1.0) == pytest.approx(2.0, abs=1e-6)
    assert rd.mode == "P_ONE"


def test_order_exchange_on_double_well():
    rd = rx.cq_recession_p(rx.make_density("double-well-b"), grid_n=6,
                           multistart=4, n_queries=4)
    assert rd.order_certificate <= 2e-6
    assert len(rd.order_report) == 4
    # truncated scaling of the quartic well is flagged, not hidden
    assert rd.not_converged


def test_amplitude_cap_engages_on_runaway_oscillation():
    g = rx.density_from_expression("max(0, 20 - norm(b)) + norm(xi)")
    sol = _solve(g, (None, None, 0.0, 0.0), grid_n=4, multistart=2)
    assert sol.amplitude_capped
    assert np.abs(sol.minimizer_summary["eta_cells"]).max() <= 10.0 + 1e-9


def test_problem_validation():
    f = rx.make_density("p-norm-sum")
    with pytest.raises(rx.DimensionMismatchError):
        rx.EnvelopeProblem(f=f, grid_n=1)
    with pytest.raises(rx.DimensionMismatchError):
        rx.EnvelopeProblem(f=f, oscillation_levels=1)
    with pytest.raises(rx.DimensionMismatchError):
        rx.EnvelopeProblem(f=f, multistart=0)
    with pytest.raises(rx.DimensionMismatchError):
        rx.EnvelopeProblem(f=f, tol=0.0)
    with pytest.raises(rx.DimensionMismatchError):
        rx.EnvelopeProblem(f=f, point=(0.0, 0.0))
