"""Budget sets, individual demand and aggregate excess demand under sublinear prices."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize

from .expectation import PriorSet, as_plan, canonical_price, price
from .optimize import (
    ConcaveProgram,
    LPForm,
    SolveConfig,
    lp_feasibility,
    maximize_concave,
)
from .preferences import (
    DEFAULT_FLOOR,
    Agent,
    PreferenceError,
    effective_vertices,
    minimizing_vertices,
    piece_gradients,
    piece_values,
    superdifferential,
)

CONVENTIONS = ("disposal", "equality")
DEFAULT_TRUNCATION = 2.0


@dataclass(frozen=True)
class Economy:
    agents: tuple
    priors: PriorSet
    clearing: str = "disposal"

    def __post_init__(self):
        agents = tuple(self.agents)
        if not agents:
            raise ValueError("an economy needs at least one agent")
        if self.clearing not in CONVENTIONS:
            raise ValueError(f"clearing must be one of {CONVENTIONS}")
        n = self.priors.n_states
        for i, a in enumerate(agents):
            if a.n_states != n:
                raise ValueError(f"agent {i} has {a.n_states} states, prior set has {n}")
            pref = a.preference
            verts = effective_vertices(pref, self.priors)
            if pref.kind == "smooth" and len(pref.second_order_weights) != verts.shape[0]:
                raise PreferenceError(f"agent {i}: second-order weights do not match the vertices")
            if pref.kind == "anchored" and pref.anchor.shape[0] != n:
                raise PreferenceError(f"agent {i}: anchor has the wrong number of states")
        object.__setattr__(self, "agents", agents)

    @property
    def n_states(self) -> int:
        return self.priors.n_states

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @cached_property
    def aggregate_endowment(self) -> np.ndarray:
        e = np.sum([a.endowment for a in self.agents], axis=0)
        e.setflags(write=False)
        return e

    @property
    def endowments(self) -> np.ndarray:
        return np.array([a.endowment for a in self.agents])

    def with_priors(self, priors: PriorSet) -> "Economy":
        return Economy(self.agents, priors, self.clearing)

    def with_clearing(self, clearing: str) -> "Economy":
        return Economy(self.agents, self.priors, clearing)

    def with_endowments(self, endowments) -> "Economy":
        agents = tuple(Agent(np.asarray(e, float), a.preference) for e, a in zip(endowments, self.agents))
        return Economy(agents, self.priors, self.clearing)


@dataclass
class DemandResult:
    plan: np.ndarray
    utility_value: float
    active_budget_priors: list
    active_min_priors: list
    kkt: object
    net_trade_value: np.ndarray
    status: str = "optimal"
    no_trade: bool = False
    truncation_active: bool = False
    certificate_gap: float = 0.0
    extra: dict = field(default_factory=dict)


def budget_value(psi, priors: PriorSet, e, c) -> float:
    """``E[psi (c - e)]``; ``c`` is in the budget set when this is <= 0."""
    e = as_plan(e, priors.n_states, "endowment")
    c = as_plan(c, priors.n_states, "consumption")
    return price(psi, priors, c - e)


def budget_normals(psi, priors: PriorSet) -> np.ndarray:
    return priors.vertices * np.asarray(psi, dtype=float)


def endowment_supported(agent: Agent, priors: PriorSet, psi, tol: float = 1e-9):
    """Is the endowment optimal in its own budget set at ``psi``?

    Every budget constraint is active at the endowment, so optimality means
    some superdifferential generator mix lies in the cone of the normals
    ``q ⊙ psi``. Returns ``(supported, weights)`` where ``weights`` is the
    cone combination (a supporting prior up to scale) when supported.
    """
    try:
        G = superdifferential(agent, priors, agent.endowment, tol)
    except PreferenceError:
        return False, None
    N = budget_normals(psi, priors)
    J, K = G.shape[0], N.shape[0]
    n = priors.n_states
    # variables (lambda, mu) >= 0:  G^T lambda - N^T mu = 0,  sum lambda = 1
    A_eq = np.vstack([np.hstack([G.T, -N.T]), np.hstack([np.ones(J), np.zeros(K)])])
    b_eq = np.concatenate([np.zeros(n), [1.0]])
    scale = max(1.0, float(np.max(np.abs(A_eq))))
    res = lp_feasibility(A_eq=A_eq / scale, b_eq=b_eq / scale, nonneg=True, n=J + K)
    if not res.feasible:
        return False, None
    return True, res.witness[J:]


def _lp_form(agent: Agent, priors: PriorSet, A_ub, b_ub, lower, upper) -> LPForm:
    """Exact LP for maxmin/anchored agents with piecewise-linear ``u``."""
    pref = agent.preference
    icpt, slopes = pref.bernoulli._affine_pieces()
    verts = effective_vertices(pref, priors)
    n, K, m = priors.n_states, verts.shape[0], slopes.shape[0]
    const = np.zeros(K)
    if pref.kind == "anchored":
        const = verts @ pref.bernoulli.value(pref.anchor)
    # y = (c, v, t)
    nv = 2 * n + 1
    rows, rhs = [], []
    for k in range(K):  # t - P_k . v <= -const_k
        r = np.zeros(nv)
        r[n:2 * n] = -verts[k]
        r[-1] = 1.0
        rows.append(r)
        rhs.append(-const[k])
    for w in range(n):  # v_w - s_j c_w <= icpt_j
        for j in range(m):
            r = np.zeros(nv)
            r[n + w] = 1.0
            r[w] = -slopes[j]
            rows.append(r)
            rhs.append(icpt[j])
    for a, b in zip(A_ub, b_ub):
        r = np.zeros(nv)
        r[:n] = a
        rows.append(r)
        rhs.append(b)
    c_obj = np.zeros(nv)
    c_obj[-1] = 1.0
    bounds = list(zip(lower, upper)) + [(None, None)] * (n + 1)
    return LPForm(c_obj, np.array(rows), np.array(rhs), None, None, bounds, n)


def _minimal_norm_selection(agent, priors, e, A_ub, b_ub, lower, upper, target, plan):
    """Among plans with utility >= target, the one closest to the endowment."""
    n = priors.n_states

    def pieces(c):
        return piece_values(agent, priors, c, floor=DEFAULT_FLOOR)

    cons = [{"type": "ineq", "fun": lambda c: b_ub - A_ub @ c, "jac": lambda c: -A_ub}]
    if agent.preference.bernoulli.family != "piecewise_linear":
        cons.append({"type": "ineq", "fun": lambda c: pieces(c) - target,
                     "jac": lambda c: piece_gradients(agent, priors, c, floor=DEFAULT_FLOOR)})
        x0 = plan
        fun = lambda c: float(np.sum((c - e) ** 2))
        jac = lambda c: 2 * (c - e)
        res = minimize(fun, x0, jac=jac, constraints=cons, bounds=list(zip(lower, upper)),
                       method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
        c = np.clip(res.x, lower, upper)
    else:
        icpt, slopes = agent.preference.bernoulli._affine_pieces()
        verts = effective_vertices(agent.preference, priors)
        const = np.zeros(verts.shape[0])
        if agent.preference.kind == "anchored":
            const = verts @ agent.preference.bernoulli.value(agent.preference.anchor)
        # variables (c, v)
        cons = [
            {"type": "ineq", "fun": lambda y: b_ub - A_ub @ y[:n]},
            {"type": "ineq", "fun": lambda y: verts @ y[n:] - const - target},
            {"type": "ineq", "fun": lambda y: (icpt[None, :] + slopes[None, :] * y[:n, None] - y[n:, None]).ravel()},
        ]
        y0 = np.concatenate([plan, agent.preference.bernoulli.value(plan)])
        res = minimize(lambda y: float(np.sum((y[:n] - e) ** 2)), y0,
                       jac=lambda y: np.concatenate([2 * (y[:n] - e), np.zeros(n)]),
                       constraints=cons, bounds=list(zip(lower, upper)) + [(None, None)] * n,
                       method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
        c = np.clip(res.x[:n], lower, upper)
    if np.any(A_ub @ c - b_ub > 1e-9) or np.min(pieces(c)) < target - 1e-9:
        return plan
    return c


def _truncation_probe(agent, priors, psi, e, plan, upper, value, n_dirs=64):
    """Look for an improving direction leaving the truncation box.

    Only runs when the plan touches the upper truncation bound. By concavity
    a strictly better untruncated budget point makes short steps towards it
    improve, so we test short steps along random budget-feasible directions.
    """
    at_upper = plan >= upper - 1e-9
    if not np.any(at_upper):
        return False
    rng = np.random.default_rng(0)
    N = budget_normals(psi, priors)
    for _ in range(n_dirs):
        d = rng.standard_normal(plan.shape[0])
        d[at_upper] = np.abs(d[at_upper])
        x = plan + d
        slack = np.max(N @ (x - e))
        if slack > 0:
            # pull the other coordinates down to restore the budget
            down = ~at_upper
            if not np.any(down):
                continue
            x[down] -= slack / max(1e-12, float(np.min(np.sum(N[:, down], axis=1))))
        if np.any(x < 0) or np.max(N @ (x - e)) > 1e-12:
            continue
        step = plan + 1e-4 * (x - plan)
        if np.min(piece_values(agent, priors, step, floor=DEFAULT_FLOOR)) > value + 1e-12:
            return True
    return False


def demand(agent: Agent, priors: PriorSet, psi, truncation: float = DEFAULT_TRUNCATION,
           aggregate=None, config: SolveConfig | None = None) -> DemandResult:
    """Utility-maximizing plan in the truncated sublinear budget set.

    The truncation box is ``[0, truncation * aggregate]`` (the agent's own
    endowment when ``aggregate`` is omitted). Set-valued demand is resolved by
    the optimum with the smallest Euclidean net trade.
    """
    n = priors.n_states
    e = agent.endowment
    if e.shape[0] != n:
        raise ValueError("agent and prior set have different state counts")
    psi = canonical_price(as_plan(psi, n, "state price"))
    agg = e if aggregate is None else as_plan(aggregate, n, "aggregate endowment")
    lower = np.zeros(n)
    if agent.preference.bernoulli.singular_at_zero:
        lower = np.full(n, DEFAULT_FLOOR)
    upper = truncation * agg
    if np.any(e > upper):
        raise ValueError("endowment lies outside the truncation box")

    N = budget_normals(psi, priors)
    keep = np.any(N != 0, axis=1)
    A_ub, b_ub = N[keep], N[keep] @ e

    supported, _ = endowment_supported(agent, priors, psi)
    if supported:
        plan = e.copy()
        kkt = None
        status, gap = "optimal", 0.0
        extra = {}
    else:
        program = ConcaveProgram(
            lambda c: piece_values(agent, priors, c, floor=DEFAULT_FLOOR),
            lambda c: piece_gradients(agent, priors, c, floor=DEFAULT_FLOOR),
            lower, upper, A_ub=A_ub, b_ub=b_ub, x0=0.5 * (e + np.minimum(e, upper)),
        )
        pref = agent.preference
        if pref.bernoulli.family == "piecewise_linear" and pref.kind in ("maxmin", "anchored"):
            program.lp_form = _lp_form(agent, priors, A_ub, b_ub, lower, upper)
        res = maximize_concave(program, config)
        if res.status == "infeasible":
            raise ValueError("budget set is empty within the truncation box")
        plan, kkt, status, gap = res.point, res.kkt, res.status, res.certificate_gap
        extra = {"iterations": res.iterations, "message": res.message}
        if not pref.strictly_concave or priors.closure:
            target = res.value - 1e-10 * max(1.0, abs(res.value))
            plan = _minimal_norm_selection(agent, priors, e, A_ub, b_ub, lower, upper, target, plan)

    vals = piece_values(agent, priors, plan, floor=DEFAULT_FLOOR)
    value = float(np.min(vals))
    bv = N @ (plan - e)
    scale = max(1.0, float(np.max(np.abs(N @ e))))
    active_budget = [int(k) for k in np.flatnonzero(bv >= bv.max() - 1e-9 * scale)] if bv.max() >= -1e-7 * scale else []
    trunc = _truncation_probe(agent, priors, psi, e, plan, upper, value) if not supported else False
    return DemandResult(
        plan=plan,
        utility_value=value,
        active_budget_priors=active_budget,
        active_min_priors=minimizing_vertices(agent, priors, plan),
        kkt=kkt,
        net_trade_value=psi * (plan - e),
        status=status,
        no_trade=supported,
        truncation_active=trunc,
        certificate_gap=gap,
        extra=extra,
    )


def excess_demand(economy: Economy, psi, truncation: float = DEFAULT_TRUNCATION,
                  config: SolveConfig | None = None):
    """Aggregate excess demand ``sum_i (c_i - e_i)`` and the per-agent demands."""
    per_agent = [
        demand(a, economy.priors, psi, truncation, economy.aggregate_endowment, config)
        for a in economy.agents
    ]
    z = np.sum([d.plan - a.endowment for d, a in zip(per_agent, economy.agents)], axis=0)
    return z, per_agent
