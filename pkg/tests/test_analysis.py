import numpy as np
import pytest
from helpers import E1, E2, SQRT, two_agent_economy

from knightwalras.analysis import (
    ad_kw_equivalence,
    constant_share_sampler,
    dirichlet_sampler,
    genericity_experiment,
    kw_correspondence_sweep,
    uncertainty_neutral_improvement,
)
from knightwalras.equilibrium import solve_kw
from knightwalras.expectation import interval_priors, is_mean_ambiguity_free, make_prior_set
from knightwalras.markets import Economy
from knightwalras.preferences import Agent, maxmin, utility


def test_equivalence_singleton_true():
    eco = two_agent_economy().with_priors(make_prior_set([[0.5, 0.5]]))
    v = ad_kw_equivalence(eco, [0.5, 0.5])
    assert v.verdict and v.consistent


def test_equivalence_benchmark_false(economy6):
    v = ad_kw_equivalence(economy6, [0.5, 0.5])
    assert not v.verdict and v.consistent
    # full insurance at constant psi: xi_1 = psi*(1/6, -1/6), vertex expectations +-eps/3 * psi
    assert v.spreads[0] == pytest.approx(2 * 0.1 * (1 / 3) * 0.5, abs=1e-12)
    assert v.separating_pairs[0] == (0, 1)
    assert not v.knightian_report.passed


def test_equivalence_constant_endowments_true():
    eco = Economy((Agent(np.array([0.4, 0.4]), maxmin(SQRT)), Agent(np.array([0.6, 0.6]), maxmin(SQRT))),
                  interval_priors([0.5, 0.5], 0.1))
    v = ad_kw_equivalence(eco)
    assert v.verdict and v.consistent and v.knightian_report.passed
    for xi in v.net_trade_values:
        np.testing.assert_allclose(xi, 0, atol=1e-12)


def test_equivalence_prior_outside_set(economy6):
    with pytest.raises(ValueError):
        ad_kw_equivalence(economy6, [0.9, 0.1])


def test_no_improvement_at_equilibrium(economy6):
    eq = solve_kw(economy6)
    res = uncertainty_neutral_improvement(economy6, eq.psi, eq.allocation)
    assert not res.improvable and res.tolerance == 1e-6


def test_improvement_singleton_endowments():
    eco = two_agent_economy().with_priors(make_prior_set([[0.5, 0.5]]))
    res = uncertainty_neutral_improvement(eco, [1, 1], eco.endowments)
    assert res.improvable
    d = res.allocation
    assert np.all(np.sum(d, axis=0) <= eco.aggregate_endowment + 1e-9)
    for a, di in zip(eco.agents, d):
        assert utility(a, eco.priors, di) > utility(a, eco.priors, a.endowment) + 1e-6


def test_no_improvement_benchmark_endowments_with_grid_oracle(economy6):
    res = uncertainty_neutral_improvement(economy6, [1, 1], economy6.endowments)
    assert not res.improvable
    # constant transfers k1 + k2 <= 0 are the only subspace-compatible trades
    base = [utility(a, economy6.priors, a.endowment) for a in economy6.agents]
    best = -np.inf
    for k1 in np.linspace(-0.3, 0.3, 601):
        k2 = -k1
        d1, d2 = E1 + k1, E2 + k2
        if np.all(d1 >= 0) and np.all(d2 >= 0):
            best = max(best, min(utility(economy6.agents[0], economy6.priors, d1) - base[0],
                                 utility(economy6.agents[1], economy6.priors, d2) - base[1]))
    assert best <= 1e-12


def test_improvement_respects_subspace():
    ps = interval_priors([0.3, 0.3, 0.4], 0.05)
    b = SQRT
    eco = Economy((Agent(np.array([0.3, 0.9, 0.5]), maxmin(b)), Agent(np.array([0.9, 0.3, 0.6]), maxmin(b))), ps)
    psi = np.array([0.3, 0.3, 0.4])
    res = uncertainty_neutral_improvement(eco, psi, eco.endowments)
    if res.improvable:
        for a, d in zip(eco.agents, res.allocation):
            assert is_mean_ambiguity_free(ps, psi * (d - a.endowment), 1e-9)
        assert np.all(np.sum(res.allocation, axis=0) <= eco.aggregate_endowment + 1e-9)


def test_sweep_constant_family_identical():
    eco = two_agent_economy()
    recs = kw_correspondence_sweep(eco, lambda e: make_prior_set([[0.5, 0.5]]), [0, 0.05, 0.1])
    assert [r.epsilon for r in recs] == [0, 0.05, 0.1]
    for r in recs[1:]:
        assert r.trade_volume == recs[0].trade_volume
        assert r.dist_to_eps0_allocation == 0


def test_sweep_constant_endowments_no_trade():
    eco = Economy((Agent(np.array([0.4, 0.4]), maxmin(SQRT)), Agent(np.array([0.6, 0.6]), maxmin(SQRT))),
                  interval_priors([0.5, 0.5], 0.1))
    recs = kw_correspondence_sweep(eco, lambda e: interval_priors([0.5, 0.5], e), [0, 0.01, 0.1])
    for r in recs:
        assert r.trade_volume <= 1e-9
        assert r.no_trade_certificate == "supportable"


def test_sweep_validation(economy6):
    fam = lambda e: interval_priors([0.5, 0.5], e)  # noqa: E731
    with pytest.raises(ValueError):
        kw_correspondence_sweep(economy6, fam, [])
    with pytest.raises(ValueError):
        kw_correspondence_sweep(economy6, fam, [0.1])


def test_genericity_small():
    eco = two_agent_economy()
    assert genericity_experiment(eco, dirichlet_sampler(), 10, seed=1).fraction == 0
    assert genericity_experiment(eco, constant_share_sampler(), 10, seed=1).fraction == 1
    single = eco.with_priors(make_prior_set([[0.5, 0.5]]))
    assert genericity_experiment(single, dirichlet_sampler(), 10, seed=1).fraction == 1


def test_genericity_resamples_nonpositive():
    calls = []

    def sampler(rng, template):
        calls.append(1)
        if len(calls) == 1:
            return np.array([[0.0, 1.0], [1.0, 0.0]])
        return template.endowments

    res = genericity_experiment(two_agent_economy(), sampler, 1)
    assert len(calls) == 2 and res.n == 1


def test_genericity_rejects_aggregate_uncertainty():
    eco = Economy((Agent(np.array([1.0, 2.0]), maxmin(SQRT)),), interval_priors([0.5, 0.5], 0.1))
    with pytest.raises(ValueError):
        genericity_experiment(eco, dirichlet_sampler(), 5)
