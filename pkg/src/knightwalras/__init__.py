"""Knight-Walras equilibria of finite-state exchange economies with sublinear pricing."""

from .analysis import (
    ad_kw_equivalence,
    genericity_experiment,
    kw_correspondence_sweep,
    uncertainty_neutral_improvement,
)
from .equilibrium import (
    Equilibrium,
    SolverConfig,
    no_trade_certificate,
    solve_ad,
    solve_kw,
    verify_equilibrium,
)
from .expectation import (
    PriorSet,
    full_ambiguity,
    interval_priors,
    make_prior_set,
    mean_ambiguity_free_basis,
    price,
    sublinear_expectation,
)
from .markets import Economy, demand, excess_demand
from .preferences import Agent, BernoulliSpec, PreferenceSpec, maxmin, utility

__version__ = "0.1.0"

__all__ = [
    "Agent", "BernoulliSpec", "Economy", "Equilibrium", "PreferenceSpec", "PriorSet", "SolverConfig",
    "ad_kw_equivalence", "demand", "excess_demand", "full_ambiguity", "genericity_experiment",
    "interval_priors", "kw_correspondence_sweep", "make_prior_set", "maxmin", "mean_ambiguity_free_basis",
    "no_trade_certificate", "price", "solve_ad", "solve_kw", "sublinear_expectation",
    "uncertainty_neutral_improvement", "utility", "verify_equilibrium",
]
