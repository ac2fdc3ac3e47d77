"""Knight-Walras and Arrow-Debreu solvers, equilibrium verification and no-trade certificates."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, linprog, root

from .expectation import (
    PriorSet,
    canonical_price,
    is_mean_ambiguity_free,
    price,
)
from .markets import (
    DEFAULT_TRUNCATION,
    Economy,
    demand,
    endowment_supported,
    excess_demand,
)
from .optimize import HIGHS_OPTIONS, lp_feasibility
from .preferences import PreferenceError, superdifferential, utility

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    damping: float = 0.5
    temperature: float = 1.0
    anneal: float = 0.9
    max_outer: int = 40
    residual_tol: float = 1e-8
    truncation: float = DEFAULT_TRUNCATION
    refine_evals: int = 300
    seed: int = 0
    ad_tol: float = 1e-12
    ad_max_iter: int = 2000

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.temperature <= 0 or self.residual_tol <= 0 or self.ad_tol <= 0:
            raise ValueError("temperature and tolerances must be positive")
        if not 0 < self.anneal <= 1:
            raise ValueError("anneal factor must lie in (0, 1]")


@dataclass
class Equilibrium:
    psi: np.ndarray
    allocation: list
    worst_prior: np.ndarray
    disposal: np.ndarray
    residual: float
    converged: bool
    welfare_weights: np.ndarray | None = None
    convention: str = "disposal"
    diagnostics: dict = field(default_factory=dict)

    @property
    def excess(self) -> np.ndarray:
        return self.diagnostics.get("excess")


def equilibrium_residual(z, convention: str) -> float:
    z = np.asarray(z, dtype=float)
    r = max(0.0, float(np.max(z)))
    if convention == "equality":
        r += float(np.max(np.abs(z)))
    return r


def _softmax(x):
    x = np.asarray(x, dtype=float)
    w = np.exp(x - x.max())
    return w / w.sum()


def _worst_prior(priors: PriorSet, psi, z) -> np.ndarray:
    vals = priors.vertices @ (np.asarray(psi) * z)
    return priors.vertices[int(np.argmax(vals))].copy()


class _Evaluator:
    """Memoized excess demand on the price simplex."""

    def __init__(self, economy: Economy, config: SolverConfig):
        self.economy = economy
        self.config = config
        self.cache = {}
        self.best = None

    def __call__(self, psi):
        psi = canonical_price(psi)
        key = psi.tobytes()
        if key not in self.cache:
            z, dem = excess_demand(self.economy, psi, self.config.truncation)
            r = equilibrium_residual(z, self.economy.clearing)
            self.cache[key] = (psi, z, dem, r)
            if self.best is None or r < self.best[3]:
                self.best = self.cache[key]
        return self.cache[key]

    @property
    def evaluations(self) -> int:
        return len(self.cache)


def _interior_lattice(n: int):
    m = n + 4
    for comp in itertools.product(range(1, m), repeat=n - 1):
        last = m - sum(comp)
        if last >= 1:
            yield np.array(comp + (last,), dtype=float) / m


def _fictitious_play(ev: _Evaluator, psi, config: SolverConfig):
    priors = ev.economy.priors
    temp = config.temperature
    for t in range(config.max_outer):
        psi, z, _, r = ev(psi)
        if r <= config.residual_tol:
            break
        # Knightian player over vertices, Walrasian player over states
        s = priors.vertices @ (psi * z)
        pw = _softmax(s / (temp * max(float(np.max(np.abs(s))), 1e-300)))
        pbar = pw @ priors.vertices
        w = pbar * z
        psi_star = _softmax(w / (temp * max(float(np.max(np.abs(w))), 1e-300)))
        gamma = config.damping / (1.0 + t)
        psi = (1 - gamma) * psi + gamma * psi_star
        temp *= config.anneal
    return temp


def _pattern_refine(ev: _Evaluator, config: SolverConfig, budget: int):
    n = ev.economy.n_states
    h = 1.0 / (n + 4)
    start = ev.evaluations
    while h > 1e-13 and ev.best[3] > config.residual_tol and ev.evaluations - start < budget:
        psi, r0 = ev.best[0], ev.best[3]
        for a in range(n):
            for b in range(n):
                if a == b:
                    continue
                cand = psi.copy()
                step = min(h, cand[b] * 0.5)
                cand[a] += step
                cand[b] -= step
                ev(cand)
                if ev.best[3] <= config.residual_tol or ev.evaluations - start >= budget:
                    return
        if not ev.best[3] < r0:
            h *= 0.5


def _polish(ev: _Evaluator, config: SolverConfig):
    n = ev.economy.n_states
    if n < 2:
        return
    convention = ev.economy.clearing

    def theta_to_psi(theta):
        return _softmax(np.concatenate([theta, [0.0]]))

    def resid(theta):
        _, z, _, _ = ev(theta_to_psi(theta))
        if convention == "equality":
            return z
        return np.maximum(z, 0.0)

    psi0 = ev.best[0]
    theta0 = np.log(psi0[:-1]) - np.log(psi0[-1])
    try:
        least_squares(resid, theta0, method="trf",
                      xtol=1e-15, ftol=1e-15, gtol=1e-15, diff_step=1e-7, max_nfev=60 * n)
    except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover - diagnostic only
        log.debug("polish failed: %s", exc)


def _package(ev: _Evaluator, economy: Economy, config: SolverConfig, extra: dict) -> Equilibrium:
    psi, z, dem, r = ev.best
    alloc = [d.plan.copy() for d in dem]
    diag = {
        "excess": z.copy(),
        "evaluations": ev.evaluations,
        "no_trade": [d.no_trade for d in dem],
        "truncation_active": [d.truncation_active for d in dem],
    }
    diag.update(extra)
    return Equilibrium(
        psi=psi.copy(),
        allocation=alloc,
        worst_prior=_worst_prior(economy.priors, psi, z),
        disposal=np.maximum(-z, 0.0),
        residual=r,
        converged=r <= config.residual_tol,
        convention=economy.clearing,
        diagnostics=diag,
    )


def solve_kw(economy: Economy, config: SolverConfig | None = None) -> Equilibrium:
    """Search for a Knight-Walras equilibrium.

    Phase 1 is damped fictitious play between the consumers (exact demand),
    a Walrasian price player and a Knightian prior player, both with annealed
    softmax responses. Phase 2 scans an interior price lattice, refines
    around the incumbent with a shrinking pattern of mass transfers between
    states and polishes by least squares on the residual. The best candidate
    is returned with its residual; non-convergence is flagged, not raised.
    """
    config = config or SolverConfig()
    n = economy.n_states
    rng = np.random.default_rng(config.seed)
    ev = _Evaluator(economy, config)
    psi0 = 0.5 / n + 0.5 * rng.dirichlet(np.ones(n))
    temp = _fictitious_play(ev, psi0, config)
    phase = "fictitious-play"
    if ev.best[3] > config.residual_tol:
        phase = "refinement"
        _polish(ev, config)
        if ev.best[3] > config.residual_tol:
            for p in _interior_lattice(n):
                ev(p)
                if ev.best[3] <= config.residual_tol:
                    break
        if ev.best[3] > config.residual_tol:
            _polish(ev, config)
        if ev.best[3] > config.residual_tol:
            _pattern_refine(ev, config, config.refine_evals)
            _polish(ev, config)
    eq = _package(ev, economy, config, {"phase": phase, "final_temperature": temp})
    if not eq.converged:
        log.info("solve_kw stopped with residual %.3g after %d evaluations", eq.residual, ev.evaluations)
    return eq


# ---------------------------------------------------------------------------
# Arrow-Debreu via Negishi weights


def _statewise_allocation(bernoullis, alpha, total):
    """Split ``total`` so that ``alpha_i u_i'(c_i)`` is equal across agents.

    Returns the allocation and the common weighted marginal utility.
    """
    alpha = np.asarray(alpha, dtype=float)
    act = alpha > 0

    def supply(lam):
        return sum(float(b.inverse_marginal(lam / a)) for b, a, on in zip(bernoullis, alpha, act) if on)

    lo = hi = 1.0
    while supply(lo) < total:
        lo *= 0.5
    while supply(hi) > total:
        hi *= 2.0
    lo = min(lo, hi * 0.5) if supply(hi * 0.5) >= total else lo
    for _ in range(400):
        mid = np.sqrt(lo * hi)
        if supply(mid) > total:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < 1e-15:
            break
    lam = np.sqrt(lo * hi)
    c = np.array([float(b.inverse_marginal(lam / a)) if on else 0.0
                  for b, a, on in zip(bernoullis, alpha, act)])
    c *= total / c.sum()
    return c, lam


def _negishi_allocation(bernoullis, alpha, ebar):
    n = ebar.shape[0]
    alloc = np.zeros((len(bernoullis), n))
    lam = np.zeros(n)
    for w in range(n):
        alloc[:, w], lam[w] = _statewise_allocation(bernoullis, alpha, ebar[w])
    return alloc, lam


def solve_ad(economy: Economy, prior, config: SolverConfig | None = None) -> Equilibrium:
    """Arrow-Debreu equilibrium of the linear economy with the single ``prior``.

    Every agent is treated as an expected-utility maximizer under ``prior``
    (maxmin, smooth and anchored kinds all reduce to this on a singleton).
    Negishi weights move against the budget surpluses (measured as wealth
    shares, with step control) until every ``|E^P[psi (c_i - e_i)]|`` is below ``config.ad_tol``.
    """
    config = config or SolverConfig()
    p = np.asarray(prior, dtype=float)
    if p.shape != (economy.n_states,) or np.any(p <= 0) or abs(p.sum() - 1) > 1e-9:
        raise ValueError("prior must be a full-support probability vector")
    bern = [a.preference.bernoulli for a in economy.agents]
    if any(not b.strictly_concave for b in bern):
        raise PreferenceError("Negishi solver needs strictly concave differentiable Bernoulli utilities")
    E = economy.endowments
    ebar = economy.aggregate_endowment
    I = len(bern)

    def surplus(alpha):
        alloc, lam = _negishi_allocation(bern, alpha, ebar)
        psi = lam / lam.sum()
        wealth = float(p @ (psi * ebar))
        s = np.array([p @ (psi * (alloc[i] - E[i])) for i in range(I)]) / wealth
        return s, alloc, psi, wealth

    alpha = np.full(I, 1.0 / I)
    if I > 1:
        # surpluses sum to zero, so I - 1 of them pin down the weights
        def F(theta):
            return surplus(_softmax(np.concatenate([theta, [0.0]])))[0][:-1]
        try:
            sol = root(F, np.zeros(I - 1), method="hybr", options={"xtol": 1e-15})
            cand = _softmax(np.concatenate([sol.x, [0.0]]))
            if np.all(np.isfinite(cand)) and np.all(cand > 0):
                s0 = surplus(alpha)[0]
                if np.max(np.abs(surplus(cand)[0])) < np.max(np.abs(s0)):
                    alpha = cand
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:  # pragma: no cover
            log.debug("Negishi root step failed: %s", exc)
    # damped loop: surpluses are wealth shares, so alpha - s is the log-utility fixed point
    kappa = 1.0
    s, alloc, psi, wealth = surplus(alpha)
    err = float(np.max(np.abs(s)))
    it = 0
    while err > config.ad_tol and it < config.ad_max_iter:
        it += 1
        step = kappa * s
        trial = alpha - step
        if np.any(trial <= 0):
            shrink = 0.5 * np.min(alpha[step > 0] / step[step > 0])
            trial = alpha - step * min(1.0, shrink)
        trial = trial / trial.sum()
        s_t, alloc_t, psi_t, wealth_t = surplus(trial)
        err_t = float(np.max(np.abs(s_t)))
        if err_t < err:
            alpha, s, alloc, psi, wealth, err = trial, s_t, alloc_t, psi_t, wealth_t, err_t
            kappa = min(1.0, kappa * 1.5)
        else:
            kappa *= 0.5
            if kappa < 1e-12:
                break
    converged = err <= config.ad_tol
    residual = float(np.max(np.abs(s))) * wealth
    return Equilibrium(
        psi=psi,
        allocation=[alloc[i].copy() for i in range(I)],
        worst_prior=p.copy(),
        disposal=np.zeros(economy.n_states),
        residual=residual,
        converged=converged,
        welfare_weights=alpha.copy(),
        convention="equality",
        diagnostics={"iterations": it, "budget_surplus": s * wealth, "prior": p.copy()},
    )


# ---------------------------------------------------------------------------
# verification


@dataclass
class VerifyConfig:
    budget_tol: float = 1e-7
    optimality_tol: float = 1e-7
    feasibility_tol: float = 1e-7
    mean_af_tol: float = 1e-9
    truncation: float = DEFAULT_TRUNCATION


@dataclass
class VerificationReport:
    budget_slack: list
    budget_slack_supplied: list
    optimality_gap: list
    feasibility_residual: float
    no_arbitrage_gap: float
    net_trade_values: list
    mean_af_flags: list
    verdict: str
    failures: list
    price_scale: float
    tolerances: dict

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def verify_equilibrium(economy: Economy, psi, allocation, config: VerifyConfig | None = None) -> VerificationReport:
    """Check a candidate ``(psi, allocation)`` against the equilibrium conditions.

    All quantities are computed at the simplex-normalized price, so the report
    is invariant to rescaling ``psi``; ``budget_slack_supplied`` repeats the
    slacks at the supplied scale. The no-arbitrage gap is reported but is
    not part of the verdict.
    """
    config = config or VerifyConfig()
    priors = economy.priors
    raw = np.asarray(psi, dtype=float)
    scale = float(raw.sum())
    psi = canonical_price(raw)
    alloc = [np.asarray(c, dtype=float) for c in allocation]
    if len(alloc) != economy.n_agents or any(c.shape != (economy.n_states,) for c in alloc):
        raise ValueError("allocation does not match the economy's dimensions")
    failures = []
    nets = [c - a.endowment for c, a in zip(alloc, economy.agents)]
    slack = [price(psi, priors, x) for x in nets]
    gaps = []
    for i, (a, c) in enumerate(zip(economy.agents, alloc)):
        if np.any(c < -1e-12):
            failures.append(f"agent {i}: negative consumption")
            gaps.append(float("inf"))
            continue
        cc = np.maximum(c, 0.0)
        d = demand(a, priors, psi, config.truncation, economy.aggregate_endowment)
        try:
            uc = utility(a, priors, cc)
        except PreferenceError:
            uc = -np.inf
        gaps.append(float(d.utility_value - uc))
    z = np.sum(nets, axis=0)
    feas = float(np.max(z))
    if economy.clearing == "equality":
        feas = float(np.max(np.abs(z)))
    feas = max(0.0, feas)
    no_arb = abs(price(psi, priors, z) - sum(slack))
    xis = [psi * x for x in nets]
    flags = [is_mean_ambiguity_free(priors, xi, config.mean_af_tol) for xi in xis]
    for i, s in enumerate(slack):
        if s > config.budget_tol:
            failures.append(f"agent {i}: budget slack {s:.3g} exceeds {config.budget_tol:g}")
    for i, g in enumerate(gaps):
        if g > config.optimality_tol:
            failures.append(f"agent {i}: optimality gap {g:.3g} exceeds {config.optimality_tol:g}")
    if feas > config.feasibility_tol:
        failures.append(f"feasibility residual {feas:.3g} exceeds {config.feasibility_tol:g}")
    return VerificationReport(
        budget_slack=slack,
        budget_slack_supplied=[s * scale for s in slack],
        optimality_gap=gaps,
        feasibility_residual=feas,
        no_arbitrage_gap=float(no_arb),
        net_trade_values=xis,
        mean_af_flags=flags,
        verdict="fail" if failures else "pass",
        failures=failures,
        price_scale=scale,
        tolerances={
            "budget": config.budget_tol,
            "optimality": config.optimality_tol,
            "feasibility": config.feasibility_tol,
            "mean_af": config.mean_af_tol,
        },
    )


# ---------------------------------------------------------------------------
# no-trade certificates


@dataclass
class NoTradeCertificate:
    status: str
    psi: np.ndarray | None
    supporting_priors: list | None
    diagnostics: list
    exact: bool = True

    @property
    def supportable(self) -> bool:
        return self.status == "supportable"


def _generators(agent, priors):
    try:
        return superdifferential(agent, priors, agent.endowment)
    except PreferenceError:
        return None


def ratio_interval(generators: np.ndarray, priors: PriorSet, state: int, ref: int | None = None):
    """Range of ``psi[state] / psi[ref]`` at which some generator is supported alone.

    Solved as LPs in reciprocal prices ``phi = 1/psi``: the endowment is
    supported iff ``g ⊙ phi`` lies in the cone of the priors. Returns
    ``(lo, hi)`` with ``hi = inf`` when unbounded, or ``None`` when no price
    supports the agent.
    """
    n = priors.n_states
    ref = n - 1 if ref is None else ref
    Q = priors.vertices
    K = Q.shape[0]
    lo, hi = np.inf, -np.inf
    for g in generators:
        if np.any(g <= 0):
            continue  # no finite price supports a generator with a zero entry
        gs = g / np.max(g)
        # variables (phi, mu); diag(g) phi - Q^T mu = 0, phi_ref = 1
        A_eq = np.vstack([np.hstack([np.diag(gs), -Q.T]), np.eye(1, n + K, ref)])
        b_eq = np.concatenate([np.zeros(n), [1.0]])
        bounds = [(0, None)] * (n + K)
        c = np.zeros(n + K)
        c[state] = 1.0
        rmin = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs", options=HIGHS_OPTIONS)
        if rmin.status == 2:
            continue
        rmax = linprog(-c, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs", options=HIGHS_OPTIONS)
        phi_min = rmin.x[state] if rmin.status == 0 else 0.0
        phi_max = rmax.x[state] if rmax.status == 0 else np.inf
        # psi_state / psi_ref = phi_ref / phi_state = 1 / phi_state
        lo = min(lo, 0.0 if phi_max == np.inf else 1.0 / phi_max)
        hi = max(hi, np.inf if phi_min <= 0 else 1.0 / phi_min)
    if lo == np.inf:
        return None
    return (float(lo), float(hi))


def _joint_reciprocal_lp(gens, priors: PriorSet):
    """Common reciprocal price ``phi >= 1`` with ``g_i ⊙ phi`` in the prior cone for all i."""
    n = priors.n_states
    Q = priors.vertices
    K = Q.shape[0]
    I = len(gens)
    nv = n + I * K
    rows = []
    for i, g in enumerate(gens):
        blk = np.zeros((n, nv))
        blk[:, :n] = np.diag(g / np.max(g))
        blk[:, n + i * K:n + (i + 1) * K] = -Q.T
        rows.append(blk)
    A_eq = np.vstack(rows)
    b_eq = np.zeros(A_eq.shape[0])
    # phi >= 1  ->  -phi <= -1
    A_ub = np.hstack([-np.eye(n), np.zeros((n, I * K))])
    b_ub = -np.ones(n)
    res = lp_feasibility(A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, nonneg=True, n=nv)
    if res.feasible:
        return res.witness[:n], res
    return None, res


def _check_price(economy: Economy, psi):
    priors = economy.priors
    supports = []
    for a in economy.agents:
        ok, mu = endowment_supported(a, priors, psi)
        if not ok:
            return None
        w = mu @ priors.vertices
        supports.append(w / w.sum() if w.sum() > 0 else None)
    return supports


def no_trade_certificate(economy: Economy, psi=None, grid_points: int = 41) -> NoTradeCertificate:
    """Is autarky a Knight-Walras equilibrium (at ``psi``, or at some price)?

    Autarky is optimal for agent i at psi iff a superdifferential generator
    mix at e_i lies in the cone ``{q ⊙ psi}``. Without ``psi`` a common price
    is sought through LPs in reciprocal prices, falling back to a log-ratio
    grid when agents have several generators. ``exact`` is False only when
    an "unsupportable" answer rests on that grid search.
    """
    priors = economy.priors
    n = priors.n_states
    diags = []
    gens = []
    for i, a in enumerate(economy.agents):
        G = _generators(a, priors)
        gens.append(G)
        d = {"agent": i, "generators": None if G is None else G.tolist()}
        if G is not None:
            d["ratio_intervals"] = [ratio_interval(G, priors, w) for w in range(n - 1)]
        if psi is not None:
            ok, _ = endowment_supported(a, priors, psi)
            d["supported_at_psi"] = bool(ok)
        diags.append(d)

    if psi is not None:
        psi = canonical_price(psi)
        sup = _check_price(economy, psi)
        if sup is None:
            return NoTradeCertificate("unsupportable", psi, None, diags)
        return NoTradeCertificate("supportable", psi, sup, diags)

    if any(G is None for G in gens):
        return NoTradeCertificate("unsupportable", None, None, diags, exact=False)

    choices = [range(G.shape[0]) for G in gens]
    n_combo = int(np.prod([G.shape[0] for G in gens]))
    combos = itertools.product(*choices) if n_combo <= 64 else iter([tuple(0 for _ in gens)])
    candidates = [[G.mean(axis=0) for G in gens]]
    candidates += [[G[j] for G, j in zip(gens, combo)] for combo in combos]
    last = None
    for cand in candidates:
        phi, res = _joint_reciprocal_lp(cand, priors)
        last = res
        if phi is None:
            continue
        p = canonical_price(1.0 / phi)
        sup = _check_price(economy, p)
        if sup is not None:
            return NoTradeCertificate("supportable", p, sup, diags)

    single = all(G.shape[0] == 1 for G in gens)
    if single:
        for d in diags:
            d["farkas"] = None if last is None or last.certificate is None else last.certificate["value"]
        return NoTradeCertificate("unsupportable", None, None, diags, exact=True)

    # several generators: grid over log price ratios
    axis = np.linspace(-4.0, 4.0, grid_points)
    for ratios in itertools.product(axis, repeat=n - 1):
        p = canonical_price(np.exp(np.concatenate([ratios, [0.0]])))
        sup = _check_price(economy, p)
        if sup is not None:
            return NoTradeCertificate("supportable", p, sup, diags, exact=True)
    return NoTradeCertificate("unsupportable", None, None, diags, exact=False)
