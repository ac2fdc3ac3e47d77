import numpy as np
import pytest
from helpers import E1, E2, SQRT, grid_demand, two_agent_economy

from knightwalras.expectation import full_ambiguity, interval_priors, make_prior_set, price
from knightwalras.markets import Economy, budget_value, demand, endowment_supported, excess_demand
from knightwalras.preferences import Agent, BernoulliSpec, PreferenceSpec, maxmin, utility


def test_benchmark_demand(economy6):
    ps = economy6.priors
    for a in economy6.agents:
        d = demand(a, ps, [1.0, 1.0], aggregate=economy6.aggregate_endowment)
        np.testing.assert_allclose(d.plan, [7 / 15, 7 / 15], atol=1e-9)
        assert d.status == "optimal" and not d.no_trade
        assert budget_value([1, 1], ps, a.endowment, d.plan) == pytest.approx(0, abs=1e-12)
        assert d.active_min_priors == [0, 1]


def test_benchmark_demand_against_grid(economy6):
    a = economy6.agents[0]
    upper = 2 * economy6.aggregate_endowment
    val, pt, slack = grid_demand(a, economy6.priors, [1, 1], upper, 2001)
    d = demand(a, economy6.priors, [1, 1], aggregate=economy6.aggregate_endowment)
    assert d.utility_value >= val - 1e-12
    assert d.utility_value - val <= slack + 1e-9


def test_log_singleton_closed_form():
    # EU with log: c_w = W / psi_w with W = p . (psi e)
    ps = make_prior_set([[0.3, 0.7]])
    a = Agent(np.array([1.0, 2.0]), maxmin(BernoulliSpec("log")))
    psi = np.array([0.4, 0.6])
    W = ps.vertices[0] @ (psi * a.endowment)
    d = demand(a, ps, psi, aggregate=np.array([10.0, 10.0]))
    np.testing.assert_allclose(d.plan, W / psi, rtol=1e-10)


def test_full_ambiguity_no_trade():
    ps = full_ambiguity(2)
    for psi in ([1, 1], [0.2, 0.8], [5, 1]):
        d = demand(Agent(E1, maxmin(SQRT)), ps, psi)
        assert d.no_trade
        np.testing.assert_array_equal(d.plan, E1)


def test_endowment_supported_matches_cone_geometry():
    ps = interval_priors([0.5, 0.5], 0.1)
    a = Agent(E1, maxmin(SQRT))
    # supported iff psi1/psi2 in [sqrt 2, 2.25 sqrt 2]
    for r, expect in [(1.3, False), (1.5, True), (3.1, True), (3.25, False)]:
        ok, _ = endowment_supported(a, ps, [r, 1.0])
        assert ok is expect


def test_homogeneity_of_demand(economy6):
    a = economy6.agents[1]
    d1 = demand(a, economy6.priors, [0.3, 0.7], aggregate=economy6.aggregate_endowment)
    d2 = demand(a, economy6.priors, [3.0, 7.0], aggregate=economy6.aggregate_endowment)
    np.testing.assert_allclose(d1.plan, d2.plan, atol=1e-12)


def test_weak_walras_law_random_prices(economy6):
    rng = np.random.default_rng(1)
    for _ in range(10):
        psi = rng.uniform(0.05, 1, 2)
        z, _ = excess_demand(economy6, psi)
        assert price(psi / psi.sum(), economy6.priors, z) <= 1e-7


def test_piecewise_linear_demand_lp():
    ps = interval_priors([0.5, 0.5], 0.1)
    b = BernoulliSpec("piecewise_linear", {"breakpoints": [0.5], "slopes": [2.0, 1.0]})
    a = Agent(np.array([0.2, 0.8]), maxmin(b))
    d = demand(a, ps, [1, 1], aggregate=np.array([1.0, 1.0]))
    val, _, slack = grid_demand(a, ps, [1, 1], [2.0, 2.0], 801)
    assert d.utility_value >= val - 1e-9
    assert d.utility_value - val <= slack + 1e-9


def test_smooth_and_anchored_demand_against_grid():
    ps = interval_priors([0.4, 0.6], 0.1)
    b = BernoulliSpec("power", {"gamma": 2.0})
    prefs = [
        PreferenceSpec("smooth", b, second_order_weights=(0.5, 0.5)),
        PreferenceSpec("anchored", b, anchor=np.array([1.0, 1.0])),
    ]
    for pref in prefs:
        a = Agent(np.array([0.5, 1.5]), pref)
        d = demand(a, ps, [0.5, 0.5], aggregate=np.array([2.0, 2.0]))
        val, _, slack = grid_demand(a, ps, [0.5, 0.5], [4.0, 4.0], 2001)
        assert d.utility_value >= val - 1e-9
        assert d.utility_value - val <= slack + 1e-9
        assert utility(a, ps, d.plan) == pytest.approx(d.utility_value)


def test_economy_validation():
    with pytest.raises(ValueError):
        Economy((), interval_priors([0.5, 0.5], 0.1))
    with pytest.raises(ValueError):
        Economy((Agent(np.ones(3), maxmin(SQRT)),), interval_priors([0.5, 0.5], 0.1))
    with pytest.raises(ValueError):
        two_agent_economy(clearing="barter")
    e = two_agent_economy().with_endowments([E2, E1])
    np.testing.assert_array_equal(e.endowments[0], E2)
