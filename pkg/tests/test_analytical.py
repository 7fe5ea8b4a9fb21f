import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import make_vpp, random_fleet
from oracles import enumerate_kkt
from tecflow.analytical import (
    ActiveSet,
    kkt_residuals,
    projected_gradient_oracle,
    refine_active_set,
    solve_centralized,
)
from tecflow.model import FlowDirection, InfeasibleScenarioError, Scenario


def test_symmetric_pair(symmetric_pair):
    sol = solve_centralized(Scenario(symmetric_pair, 4.0))
    assert sol.lambda_star == pytest.approx(4.0, abs=1e-12)
    assert sol.p_star == pytest.approx({"vpp1": 2.0, "vpp2": 2.0}, abs=1e-12)
    assert sol.active_set == ActiveSet()
    assert sol.direction is FlowDirection.GRID_TO_COMMUNITY


def test_single_free_vpp():
    sol = solve_centralized(Scenario((make_vpp("v", 0.5, 1.0, 10.0),), 3.0))
    assert sol.lambda_star == pytest.approx(4.0, abs=1e-12)
    assert sol.p_star["v"] == pytest.approx(3.0, abs=1e-12)


def test_pinned_pair_matches_enumeration(pinned_pair):
    s = Scenario(pinned_pair, 5.0)
    sol = solve_centralized(s)
    lam, p, assign = enumerate_kkt(*s.arrays(), s.demand)
    assert assign == "uf"
    assert sol.lambda_star == pytest.approx(16.0, abs=1e-12) == lam
    assert sol.p_star == pytest.approx({"vpp1": 2.0, "vpp2": 3.0}, abs=1e-12)
    assert sol.active_set == ActiveSet({"vpp1"}, set())
    assert sol.kkt.mu_upper["vpp1"] == pytest.approx(12.0)
    assert refine_active_set(s) == ActiveSet({"vpp1"}, set())


def test_oracle_on_published_examples(symmetric_pair, pinned_pair):
    o = projected_gradient_oracle(Scenario(symmetric_pair, 4.0))
    assert o.p_star == pytest.approx({"vpp1": 2.0, "vpp2": 2.0}, abs=1e-4)
    o = projected_gradient_oracle(Scenario(pinned_pair, 5.0))
    assert o.lambda_star == pytest.approx(16.0, abs=1e-4)


def test_infeasible_rejected(symmetric_pair):
    with pytest.raises(InfeasibleScenarioError):
        solve_centralized(Scenario(symmetric_pair, 25.0))


def test_no_flow_is_empty(symmetric_pair):
    sol = solve_centralized(Scenario(symmetric_pair, 0.0))
    assert sol.is_empty and sol.p_star == {} and sol.lambda_star is None
    assert projected_gradient_oracle(Scenario(symmetric_pair, 0.0)).is_empty
    assert refine_active_set(Scenario(symmetric_pair, 0.0)) == ActiveSet()


def test_saturation_all_at_upper(pinned_pair):
    s = Scenario(pinned_pair, 12.0)
    sol = solve_centralized(s)
    assert sol.active_set.at_upper == {"vpp1", "vpp2"}
    assert sol.p_star == pytest.approx({"vpp1": 2.0, "vpp2": 10.0})
    assert max(kkt_residuals(s, sol).values()) <= 1e-9


def test_export_direction_uses_export_curve():
    v = (make_vpp("a", 5.0, 5.0, 10.0, c1_out=1.0, c2_out=0.0),
         make_vpp("b", 5.0, 5.0, 10.0, c1_out=1.0, c2_out=0.0))
    sol = solve_centralized(Scenario(v, -4.0))
    assert sol.direction is FlowDirection.COMMUNITY_TO_GRID
    assert sol.lambda_star == pytest.approx(4.0)


def test_opposite_side_violations_resolved():
    # the unconstrained price pushes one VPP below zero and the other above
    # capacity in the same pass; only one side may be pinned at a time
    v = (make_vpp("vpp1", 0.0038057, 3.95673533, 151.14968035),
         make_vpp("vpp2", 0.0037889, 2.3366633, 146.43656758))
    s = Scenario(v, 126.46965700666651)
    sol = solve_centralized(s)
    assert sum(sol.p_star.values()) == pytest.approx(s.demand, abs=1e-9)
    assert max(kkt_residuals(s, sol).values()) <= 1e-9
    lam, p, _ = enumerate_kkt(*s.arrays(), s.demand)
    assert sol.lambda_star == pytest.approx(lam, rel=1e-12)


@pytest.mark.parametrize("seed", range(60))
def test_matches_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    fleet = random_fleet(rng, n)
    cap = sum(v.p_max_g2c for v in fleet)
    s = Scenario(fleet, float(rng.uniform(0.01, 1.0)) * cap)
    sol = solve_centralized(s)
    lam, p, _ = enumerate_kkt(*s.arrays(), s.demand)
    got = np.array([sol.p_star[v.id] for v in fleet])
    np.testing.assert_allclose(got, p, atol=1e-9)
    if any(0 < x < m for x, m in zip(p, s.arrays()[2])):
        assert sol.lambda_star == pytest.approx(lam, rel=1e-10)
    assert max(kkt_residuals(s, sol).values()) <= 1e-9


fleet_strategy = st.integers(1, 8).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0.05, 5.0), min_size=n, max_size=n),
    st.lists(st.floats(0.0, 10.0), min_size=n, max_size=n),
    st.lists(st.floats(0.1, 20.0), min_size=n, max_size=n),
))


def _fleet(data):
    c1, c2, pm = data
    return tuple(make_vpp(f"v{g}", c1[g], c2[g], pm[g]) for g in range(len(c1)))


@given(fleet_strategy, st.floats(0.0, 1.0))
def test_kkt_and_balance_property(data, frac):
    fleet = _fleet(data)
    d = frac * sum(v.p_max_g2c for v in fleet)
    assume(d > 0)
    s = Scenario(fleet, d)
    sol = solve_centralized(s)
    res = kkt_residuals(s, sol)
    scale = max(1.0, sol.lambda_star)
    assert res["balance"] <= 1e-9 * max(1.0, d)
    assert res["bounds"] <= 1e-12
    assert res["dual"] <= 1e-12
    assert res["stationarity"] <= 1e-9 * scale
    assert res["slackness"] <= 1e-9 * scale * max(1.0, d)


@given(fleet_strategy, st.floats(0.01, 0.98), st.floats(0.001, 0.02))
def test_price_monotone_in_demand(data, frac, step):
    fleet = _fleet(data)
    cap = sum(v.p_max_g2c for v in fleet)
    lo = solve_centralized(Scenario(fleet, frac * cap)).lambda_star
    hi = solve_centralized(Scenario(fleet, (frac + step) * cap)).lambda_star
    assert hi >= lo - 1e-9 * max(1.0, lo)


@given(fleet_strategy, st.floats(0.01, 1.0), st.floats(0.1, 10.0))
def test_cost_scaling_scales_price(data, frac, k):
    c1, c2, pm = data
    fleet = _fleet(data)
    scaled = _fleet(([k * x for x in c1], [k * x for x in c2], pm))
    d = frac * sum(pm)
    a = solve_centralized(Scenario(fleet, d))
    b = solve_centralized(Scenario(scaled, d))
    assert b.lambda_star == pytest.approx(k * a.lambda_star, rel=1e-9, abs=1e-9)
    assert b.p_star == pytest.approx(a.p_star, abs=1e-9 * max(1.0, d))


@given(fleet_strategy, st.floats(0.01, 1.0), st.randoms(use_true_random=False))
def test_permutation_invariance(data, frac, rnd):
    fleet = list(_fleet(data))
    d = frac * sum(v.p_max_g2c for v in fleet)
    a = solve_centralized(Scenario(tuple(fleet), d))
    rnd.shuffle(fleet)
    b = solve_centralized(Scenario(tuple(fleet), d))
    assert b.lambda_star == pytest.approx(a.lambda_star, rel=1e-12, abs=1e-12)
    assert b.p_star == pytest.approx(a.p_star, abs=1e-9)
