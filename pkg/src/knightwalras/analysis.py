"""Equivalence, efficiency, correspondence sweeps and the genericity experiment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .equilibrium import (
    Equilibrium,
    SolverConfig,
    VerificationReport,
    no_trade_certificate,
    solve_ad,
    solve_kw,
    verify_equilibrium,
)
from .expectation import (
    PriorSet,
    canonical_price,
    complement_rows,
    expectation_spread,
    vertex_expectations,
)
from .markets import Economy
from .optimize import ConcaveProgram, SolveConfig, lp_feasibility, maximize_concave
from .preferences import DEFAULT_FLOOR, piece_gradients, piece_values, utility

MEAN_AF_TOL = 1e-9
IMPROVEMENT_TOL = 1e-6


@dataclass
class EquivalenceVerdict:
    net_trade_values: list
    mean_af_flags: list
    verdict: bool
    separating_pairs: list
    spreads: list
    ad_equilibrium: Equilibrium
    knightian_report: VerificationReport
    consistent: bool


def _in_prior_set(priors: PriorSet, p) -> bool:
    V = priors.vertices
    A_eq = np.vstack([V.T, np.ones((1, V.shape[0]))])
    b_eq = np.concatenate([p, [1.0]])
    return lp_feasibility(A_eq=A_eq, b_eq=b_eq, nonneg=True, n=V.shape[0]).feasible


def ad_kw_equivalence(economy: Economy, prior=None, config: SolverConfig | None = None,
                      tol: float = MEAN_AF_TOL) -> EquivalenceVerdict:
    """Does the Arrow-Debreu equilibrium under ``prior`` survive Knightian pricing?

    The verdict is true iff every net-trade value ``psi ⊙ (c_i - e_i)`` of the
    linear economy's equilibrium has the same expectation under all priors.
    The AD pair is also verified directly against the Knightian budgets;
    ``consistent`` records whether that check agrees with the verdict.
    ``prior`` defaults to the vertex centroid.
    """
    priors = economy.priors
    p = priors.vertices.mean(axis=0) if prior is None else np.asarray(prior, dtype=float)
    if not _in_prior_set(priors, p):
        raise ValueError("prior is not in the economy's prior set")
    ad = solve_ad(economy, p, config)
    if not ad.converged:
        raise RuntimeError("Arrow-Debreu solver did not converge")
    xis = [ad.psi * (c - a.endowment) for c, a in zip(ad.allocation, economy.agents)]
    flags, pairs, spreads = [], [], []
    for xi in xis:
        vals = vertex_expectations(priors, xi)
        s = expectation_spread(priors, xi)
        flags.append(bool(s <= tol))
        spreads.append(float(s))
        pairs.append(None if s <= tol else (int(np.argmin(vals)), int(np.argmax(vals))))
    verdict = all(flags)
    report = verify_equilibrium(economy, ad.psi, ad.allocation)
    return EquivalenceVerdict(
        net_trade_values=xis,
        mean_af_flags=flags,
        verdict=verdict,
        separating_pairs=pairs,
        spreads=spreads,
        ad_equilibrium=ad,
        knightian_report=report,
        consistent=verdict == report.passed,
    )


# ---------------------------------------------------------------------------
# uncertainty-neutral efficiency


@dataclass
class ImprovementResult:
    allocation: list | None
    improvement: float
    tolerance: float
    status: str
    certificate_gap: float
    exact: bool

    @property
    def improvable(self) -> bool:
        return self.allocation is not None


def uncertainty_neutral_improvement(economy: Economy, psi, allocation, config: SolveConfig | None = None,
                                    tol: float = IMPROVEMENT_TOL) -> ImprovementResult:
    """Search for a reallocation with mean-ambiguity-free net trades that helps everyone.

    Maximizes ``t`` subject to ``U_i(d_i) >= U_i(c_i) + t``, aggregate
    feasibility under the economy's clearing convention and
    ``psi ⊙ (d_i - e_i)`` in the mean-ambiguity-free subspace. An allocation
    is returned iff the optimal ``t`` exceeds ``tol``. ``exact`` is False
    when the answer "none" rests on the engine's stationarity tolerance.
    """
    priors = economy.priors
    psi = canonical_price(psi)
    agents = economy.agents
    I, n = economy.n_agents, economy.n_states
    alloc = [np.asarray(c, dtype=float) for c in allocation]
    base = np.array([utility(a, priors, c) for a, c in zip(agents, alloc)])
    ebar = economy.aggregate_endowment
    floors = [DEFAULT_FLOOR if a.preference.bernoulli.singular_at_zero else 0.0 for a in agents]
    pl = [a.preference.bernoulli.family == "piecewise_linear" for a in agents]

    def split(x):
        return [x[..., i * n:(i + 1) * n] for i in range(I)]

    def pieces(x):
        x = np.asarray(x, dtype=float)
        parts = [piece_values(a, priors, d, floor=f or None) - b
                 for a, d, f, b in zip(agents, split(x), floors, base)]
        return np.concatenate(parts, axis=-1)

    def grads(x):
        rows = []
        for i, (a, d, f) in enumerate(zip(agents, split(np.asarray(x, dtype=float)), floors)):
            g = piece_gradients(a, priors, d, floor=f or None)
            blk = np.zeros((g.shape[0], I * n))
            blk[:, i * n:(i + 1) * n] = g
            rows.append(blk)
        return np.vstack(rows)

    lower = np.concatenate([np.full(n, f) for f in floors])
    upper = np.tile(ebar, I)
    agg = np.tile(np.eye(n), I)
    R = complement_rows(priors)
    eq_rows, eq_rhs = [], []
    for i, a in enumerate(agents):
        blk = np.zeros((R.shape[0], I * n))
        blk[:, i * n:(i + 1) * n] = R * psi
        eq_rows.append(blk)
        eq_rhs.append(R @ (psi * a.endowment))
    A_eq = np.vstack(eq_rows) if R.shape[0] else np.zeros((0, I * n))
    b_eq = np.concatenate(eq_rhs) if R.shape[0] else np.zeros(0)
    kw = {"A_eq": A_eq, "b_eq": b_eq}
    if economy.clearing == "equality":
        kw["A_eq"] = np.vstack([A_eq, agg])
        kw["b_eq"] = np.concatenate([b_eq, ebar])
    else:
        kw["A_ub"], kw["b_ub"] = agg, ebar
    x0 = np.clip(np.concatenate(alloc), lower, upper)
    prog = ConcaveProgram(pieces, grads, lower, upper, x0=x0, **kw)
    res = maximize_concave(prog, config)
    t = float(res.value)
    exact = not any(pl) and res.optimal
    if t > tol:
        d = split(res.point)
        return ImprovementResult([np.array(di) for di in d], t, tol, res.status, res.certificate_gap, exact)
    return ImprovementResult(None, t, tol, res.status, res.certificate_gap, exact)


# ---------------------------------------------------------------------------
# correspondence sweep


@dataclass
class SweepRecord:
    epsilon: float
    priors: PriorSet
    equilibrium: Equilibrium | None
    converged: bool
    residual: float
    trade_volume: float
    disposal_l1: float
    dist_to_eps0_allocation: float
    no_trade_certificate: str
    convention: str
    error: str | None = None


def kw_correspondence_sweep(template: Economy, family: Callable[[float], PriorSet], grid: Sequence[float],
                            config: SolverConfig | None = None) -> list[SweepRecord]:
    """Solve the economy along ``eps -> family(eps)`` and measure how equilibria move.

    Distances are sup-norms over agents and states against the ``eps = 0``
    allocation; records are ordered by ``eps``.
    """
    grid = sorted(float(e) for e in grid)
    if not grid:
        raise ValueError("sweep grid is empty")
    if grid[0] != 0.0:
        raise ValueError("sweep grid must include epsilon = 0")
    if any(e < 0 for e in grid):
        raise ValueError("epsilon must be nonnegative")
    if not family(0.0).is_singleton:
        raise ValueError("family(0) must be a singleton prior set")
    config = config or SolverConfig()
    records = []
    ref = None
    for eps in grid:
        priors = family(eps)
        try:
            eco = template.with_priors(priors)
            eq = solve_kw(eco, config)
        except (ValueError, ArithmeticError) as exc:
            records.append(SweepRecord(eps, priors, None, False, float("nan"), float("nan"), float("nan"),
                                       float("nan"), "error", template.clearing, str(exc)))
            continue
        alloc = np.array(eq.allocation)
        if ref is None:
            ref = alloc
        trade = float(np.sum(np.abs(alloc - eco.endowments)))
        cert = no_trade_certificate(eco)
        records.append(SweepRecord(
            epsilon=eps,
            priors=priors,
            equilibrium=eq,
            converged=eq.converged,
            residual=eq.residual,
            trade_volume=trade,
            disposal_l1=float(np.sum(eq.disposal)),
            dist_to_eps0_allocation=float(np.max(np.abs(alloc - ref))),
            no_trade_certificate=cert.status,
            convention=eco.clearing,
        ))
    return records


# ---------------------------------------------------------------------------
# genericity


def dirichlet_sampler(concentration: float = 1.0):
    """Split each state's aggregate endowment across agents with Dirichlet shares."""
    def draw(rng, template: Economy):
        ebar = template.aggregate_endowment
        shares = rng.dirichlet(np.full(template.n_agents, concentration), size=template.n_states).T
        return shares * ebar
    return draw


def constant_share_sampler(concentration: float = 1.0):
    """Give each agent a state-independent share; constant plans when the aggregate is."""
    def draw(rng, template: Economy):
        s = rng.dirichlet(np.full(template.n_agents, concentration))
        return np.outer(s, template.aggregate_endowment)
    return draw


SAMPLERS = {"dirichlet": dirichlet_sampler, "constant": constant_share_sampler}


@dataclass
class GenericityResult:
    fraction: float
    n: int
    records: list = field(default_factory=list)


def genericity_experiment(template: Economy, sampler, n: int, seed: int = 0, prior=None,
                          max_resample: int = 1000) -> GenericityResult:
    """Fraction of random endowment profiles whose AD equilibrium survives Knightian pricing.

    Draws keep the aggregate endowment fixed; a draw with a nonpositive entry
    is rejected and redrawn. Each record holds the endowments, verdict and
    the largest expectation spread of a net-trade value.
    """
    ebar = template.aggregate_endowment
    if np.ptp(ebar) > 1e-12 * max(1.0, float(np.max(ebar))):
        raise ValueError("template has aggregate uncertainty")
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    records = []
    hits = 0
    for k in range(n):
        for _ in range(max_resample):
            E = np.asarray(sampler(rng, template), dtype=float)
            if E.shape == template.endowments.shape and np.all(E > 0):
                break
        else:
            raise RuntimeError("sampler kept producing nonpositive endowments")
        eco = template.with_endowments(E)
        v = ad_kw_equivalence(eco, prior)
        hits += v.verdict
        records.append({"draw": k, "endowments": E, "verdict": v.verdict, "max_spread": max(v.spreads)})
    return GenericityResult(hits / n, n, records)
