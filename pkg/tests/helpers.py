"""Economies and independent oracles shared by the test modules."""

import numpy as np

from knightwalras.expectation import canonical_price, interval_priors, make_prior_set
from knightwalras.markets import Economy
from knightwalras.optimize import ConcaveProgram, grid_oracle
from knightwalras.preferences import Agent, BernoulliSpec, maxmin, piece_gradients, piece_values

SQRT = BernoulliSpec("sqrt")
E1 = np.array([1 / 3, 2 / 3])
E2 = np.array([2 / 3, 1 / 3])


def two_agent_economy(eps=0.1, clearing="disposal"):
    agents = (Agent(E1, maxmin(SQRT)), Agent(E2, maxmin(SQRT)))
    return Economy(agents, interval_priors([0.5, 0.5], eps), clearing)


def random_crra_economy(seed, singleton=True, clearing="disposal"):
    """2-4 states, 2-3 CRRA agents; multi-prior economies use a small interval family."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    k = int(rng.integers(2, 4))
    p = rng.dirichlet(np.full(n, 3.0))
    agents = tuple(
        Agent(rng.uniform(0.2, 2.0, n), maxmin(BernoulliSpec("power", {"gamma": float(rng.uniform(0.5, 3.0))})))
        for _ in range(k)
    )
    if singleton:
        priors = make_prior_set([p])
    else:
        priors = interval_priors(p, float(0.5 * p.min() * rng.uniform(0.1, 0.9)))
    return Economy(agents, priors, clearing), p


def grid_demand(agent, priors, psi, upper, resolution):
    """Brute-force demand on a uniform grid of ``[0, upper]`` with budget rows built from scratch.

    Returns (value, point, lipschitz * step) where the Lipschitz bound is the
    largest l1-norm of a piece gradient at the grid's lower-left neighbour of
    the best point.
    """
    psi = canonical_price(psi)
    e = agent.endowment
    rows = np.array([q * psi for q in priors.vertices])
    prog = ConcaveProgram(
        lambda c: piece_values(agent, priors, c, floor=1e-12),
        lambda c: piece_gradients(agent, priors, c, floor=1e-12),
        np.zeros(len(e)), np.asarray(upper, float), A_ub=rows, b_ub=rows @ e,
    )
    res = grid_oracle(prog, resolution)
    step = np.asarray(upper, float) / (resolution - 1)
    below = np.maximum(res.point - step, 1e-12)
    lip = float(np.max(np.sum(np.abs(piece_gradients(agent, priors, below)), axis=1)))
    return res.value, res.point, lip * float(np.max(step))
