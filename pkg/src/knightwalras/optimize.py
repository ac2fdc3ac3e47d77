"""Concave maximization over polyhedra, a brute-force grid oracle and LP feasibility.

The objective of a :class:`ConcaveProgram` is the minimum of finitely many
smooth concave pieces. ``maximize_concave`` solves the epigraph form

    max t  s.t.  t <= f_j(x) for all j,  A x <= b,  A_eq x = b_eq,  lo <= x <= hi

and then certifies the answer with explicit KKT multipliers.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog, minimize, nnls

FEAS_TOL = 1e-9
STAT_TOL = 1e-7
MAX_ITER = 100_000
GRID_POINT_CAP = 50_000_000
_GRID_CHUNK = 1_000_000

HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass(frozen=True)
class LPForm:
    """Exact LP representation ``max c_obj . y`` over extended variables ``y``.

    The first ``n`` entries of ``y`` are the program variables and the
    objective value equals the program's objective at the optimum.
    """

    c_obj: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray | None
    b_eq: np.ndarray | None
    bounds: list
    n: int


@dataclass
class ConcaveProgram:
    pieces: Callable[[np.ndarray], np.ndarray]
    piece_grads: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lp_form: LPForm | None = None
    x0: np.ndarray | None = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.lower.shape[0]
        if self.upper.shape != (n,) or np.any(self.lower > self.upper):
            raise ValueError("box must satisfy lower <= upper")
        if self.A_ub is None:
            self.A_ub, self.b_ub = np.zeros((0, n)), np.zeros(0)
        if self.A_eq is None:
            self.A_eq, self.b_eq = np.zeros((0, n)), np.zeros(0)
        self.A_ub = np.atleast_2d(np.asarray(self.A_ub, dtype=float)).reshape(-1, n)
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float)).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @classmethod
    def from_oracle(cls, oracle, lower, upper, **kw) -> "ConcaveProgram":
        """Wrap an oracle ``x -> (value, supergradient)`` as a single piece."""
        def pieces(x):
            x = np.asarray(x, dtype=float)
            if x.ndim == 2:
                return np.array([[oracle(row)[0]] for row in x])
            return np.array([oracle(x)[0]])

        def grads(x):
            return np.atleast_2d(oracle(np.asarray(x, dtype=float))[1])

        return cls(pieces, grads, lower, upper, **kw)

    def objective(self, x) -> float:
        return float(np.min(self.pieces(np.asarray(x, dtype=float))))

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = [0.0]
        v.append(float(np.max(self.lower - x, initial=0.0)))
        v.append(float(np.max(x - self.upper, initial=0.0)))
        if self.A_ub.shape[0]:
            v.append(float(np.max(self.A_ub @ x - self.b_ub)))
        if self.A_eq.shape[0]:
            v.append(float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        return max(v)


@dataclass
class SolveConfig:
    feasibility_tol: float = FEAS_TOL
    stationarity_tol: float = STAT_TOL
    max_iter: int = MAX_ITER
    active_tol: float = 1e-7
    restarts: int = 2


@dataclass
class KKT:
    piece_weights: np.ndarray
    ineq: np.ndarray
    eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class SolveResult:
    point: np.ndarray
    value: float
    status: str
    certificate_gap: float
    kkt: KKT | None = None
    iterations: int = 0
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class LPFeasibility:
    feasible: bool
    witness: np.ndarray | None = None
    certificate: dict | None = None
    max_violation: float = 0.0


def lp_feasibility(A_ub=None, b_ub=None, A_eq=None, b_eq=None, nonneg=True, n=None) -> LPFeasibility:
    """Decide ``{x : A_ub x <= b_ub, A_eq x = b_eq, x_j >= 0 for flagged j}``.

    Feasible systems come with a witness. Infeasible ones come with a Farkas
    certificate ``(y >= 0, w)`` such that ``A_ub^T y + A_eq^T w`` is ``>= 0`` on
    sign-constrained coordinates and ``0`` on free ones while
    ``b_ub.y + b_eq.w < 0``.
    """
    mats = [m for m in (A_ub, A_eq) if m is not None and np.size(m)]
    if n is None:
        n = np.atleast_2d(mats[0]).shape[1]
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, float)).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, float).reshape(-1)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float)).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float).reshape(-1)
    sign = np.broadcast_to(np.asarray(nonneg, dtype=bool), (n,))
    bounds = [(0, None) if s else (None, None) for s in sign]

    res = linprog(
        np.zeros(n),
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A_eq if A_eq.shape[0] else None,
        b_eq=b_eq if A_eq.shape[0] else None,
        bounds=bounds,
        method="highs",
        options=HIGHS_OPTIONS,
    )
    if res.status == 0:
        x = res.x
        viol = 0.0
        if A_ub.shape[0]:
            viol = max(viol, float(np.max(A_ub @ x - b_ub)))
        if A_eq.shape[0]:
            viol = max(viol, float(np.max(np.abs(A_eq @ x - b_eq))))
        viol = max(viol, float(np.max(-x[sign], initial=0.0)))
        return LPFeasibility(True, x, None, viol)

    # Farkas alternative, normalised so the certificate is bounded
    m1, m2 = A_ub.shape[0], A_eq.shape[0]
    nv = m1 + 2 * m2
    M = np.hstack([A_ub.T, A_eq.T, -A_eq.T])  # n x nv
    rhs = np.concatenate([b_ub, b_eq, -b_eq])
    rows_ub = [-M[sign]] if sign.any() else []
    A_ub_d = np.vstack(rows_ub + [np.ones((1, nv))])
    b_ub_d = np.concatenate([np.zeros(int(sign.sum())), [1.0]])
    A_eq_d = M[~sign] if (~sign).any() else None
    b_eq_d = np.zeros(int((~sign).sum())) if (~sign).any() else None
    dual = linprog(rhs, A_ub=A_ub_d, b_ub=b_ub_d, A_eq=A_eq_d, b_eq=b_eq_d,
                   bounds=[(0, None)] * nv, method="highs", options=HIGHS_OPTIONS)
    cert = None
    if dual.status == 0 and dual.fun < 0:
        y = dual.x[:m1]
        w = dual.x[m1:m1 + m2] - dual.x[m1 + m2:]
        cert = {"y": y, "w": w, "value": float(dual.fun)}
    return LPFeasibility(False, None, cert, float("inf"))


def _max_slack_point(program: ConcaveProgram):
    """Phase one: a feasible point maximizing the smallest inequality slack."""
    n = program.n
    A, b = program.A_ub, program.b_ub
    # variables (x, s); maximize s, s <= 1
    width = program.upper - program.lower
    rows = [np.hstack([A, np.ones((A.shape[0], 1))])] if A.shape[0] else []
    rows.append(np.hstack([-np.eye(n), np.ones((n, 1)) * (width > 0)[:, None]]))
    rows.append(np.hstack([np.eye(n), np.ones((n, 1)) * (width > 0)[:, None]]))
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(([b] if A.shape[0] else []) + [-program.lower, program.upper])
    A_eq = np.hstack([program.A_eq, np.zeros((program.A_eq.shape[0], 1))]) if program.A_eq.shape[0] else None
    b_eq = program.b_eq if program.A_eq.shape[0] else None
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * n + [(None, 1.0)], method="highs",
                  options=HIGHS_OPTIONS)
    if res.status != 0 or res.x[-1] < -FEAS_TOL:
        return None, -np.inf
    return res.x[:n], float(res.x[-1])


def _restore_feasibility(program: ConcaveProgram, x, interior, slack):
    """Pull ``x`` towards a strictly feasible point until every inequality holds."""
    x = np.clip(x, program.lower, program.upper)
    if program.A_ub.shape[0] == 0 or slack <= 0:
        return x
    g = program.A_ub @ x - program.b_ub
    if np.all(g <= 0):
        return x
    gi = program.A_ub @ interior - program.b_ub
    # constraint j along x + s (interior - x): g_j + s (gi_j - g_j) <= 0
    viol = g > 0
    s = np.max(g[viol] / (g[viol] - gi[viol]))
    return np.clip(x + min(1.0, s * (1 + 1e-12) + 1e-15) * (interior - x), program.lower, program.upper)


def kkt_certificate(program: ConcaveProgram, x, active_tol: float = 1e-7):
    """Fit multipliers at ``x`` and return ``(KKT, stationarity residual)``.

    Stationarity asks for a convex combination of active piece gradients equal
    to a nonnegative combination of active constraint normals (plus a free
    combination of equality normals). The residual is the sup-norm mismatch,
    relative to the size of the gradients.
    """
    x = np.asarray(x, dtype=float)
    n = program.n
    vals = program.pieces(x)
    grads = program.piece_grads(x)
    scale = max(1.0, float(np.max(np.abs(vals))))
    act_p = np.flatnonzero(vals <= vals.min() + active_tol * scale)
    G = grads[act_p]

    cols = []
    kinds = []
    if program.A_ub.shape[0]:
        gap = program.b_ub - program.A_ub @ x
        rs = np.maximum(1.0, np.abs(program.b_ub))
        for j in np.flatnonzero(gap <= active_tol * rs):
            cols.append(-program.A_ub[j])
            kinds.append(("ineq", j))
    for j in np.flatnonzero(x - program.lower <= active_tol * np.maximum(1.0, np.abs(program.lower))):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(e)  # -(-e_j)
        kinds.append(("lower", j))
    for j in np.flatnonzero(program.upper - x <= active_tol * np.maximum(1.0, np.abs(program.upper))):
        e = np.zeros(n)
        e[j] = -1.0
        cols.append(e)
        kinds.append(("upper", j))
    for j in range(program.A_eq.shape[0]):
        cols.append(-program.A_eq[j])
        kinds.append(("eq+", j))
        cols.append(program.A_eq[j])
        kinds.append(("eq-", j))

    gscale = max(1.0, float(np.max(np.abs(G))))
    # unknowns: lambda (len act_p) >= 0, mu >= 0; G^T lambda + C mu = 0, sum lambda = 1
    C = np.array(cols).T if cols else np.zeros((n, 0))
    weight = 1e3
    M = np.vstack([np.hstack([G.T, C]) / gscale,
                   np.hstack([np.full((1, G.shape[0]), weight), np.zeros((1, C.shape[1]))])])
    rhs = np.concatenate([np.zeros(n), [weight]])
    sol, _ = nnls(M, rhs, maxiter=50 * M.shape[1] + 100)
    lam = sol[:G.shape[0]]
    if lam.sum() > 0:
        sol = sol / lam.sum()
        lam = sol[:G.shape[0]]
    mu = sol[G.shape[0]:]

    kkt = KKT(np.zeros(vals.shape[0]), np.zeros(program.A_ub.shape[0]),
              np.zeros(program.A_eq.shape[0]), np.zeros(n), np.zeros(n))
    kkt.piece_weights[act_p] = lam
    for (kind, j), m in zip(kinds, mu):
        if kind == "ineq":
            kkt.ineq[j] += m
        elif kind == "lower":
            kkt.lower[j] += m
        elif kind == "upper":
            kkt.upper[j] += m
        elif kind == "eq+":
            kkt.eq[j] += m
        else:
            kkt.eq[j] -= m
    return kkt, stationarity_residual(program, x, kkt)


def stationarity_residual(program: ConcaveProgram, x, kkt: KKT) -> float:
    """Re-evaluate ``|sum w_j grad f_j - A^T mu - A_eq^T nu + lower - upper|``."""
    grads = program.piece_grads(np.asarray(x, dtype=float))
    lhs = kkt.piece_weights @ grads
    rhs = program.A_ub.T @ kkt.ineq + program.A_eq.T @ kkt.eq - kkt.lower + kkt.upper
    gscale = max(1.0, float(np.max(np.abs(grads))))
    return float(np.max(np.abs(lhs - rhs))) / gscale


def _kkt_polish(program: ConcaveProgram, x, kkt: KKT, config: SolveConfig):
    """Newton refinement of the KKT system on the support of the multipliers.

    SLSQP stalls around sqrt(machine eps) in the point when the optimum sits
    in the relative interior of a face; solving the square system
    ``stationarity, sum(lambda) = 1, f_j = t, a_i x = b_i`` restores full
    precision. Returns ``None`` when the polished point is not acceptable.
    """
    from scipy.optimize import root

    n = program.n
    thr = 1e-12
    P = np.flatnonzero(kkt.piece_weights > thr)
    I = np.flatnonzero(kkt.ineq > thr)
    Lo = np.flatnonzero(kkt.lower > thr)
    Up = np.flatnonzero(kkt.upper > thr)
    E = np.arange(program.A_eq.shape[0])
    if P.size == 0:
        return None
    normals = [program.A_ub[i] for i in I]
    offsets = [program.b_ub[i] for i in I]
    for j in Lo:
        a = np.zeros(n)
        a[j] = -1.0
        normals.append(a)
        offsets.append(-program.lower[j])
    for j in Up:
        a = np.zeros(n)
        a[j] = 1.0
        normals.append(a)
        offsets.append(program.upper[j])
    A = np.array(normals).reshape(-1, n)
    b = np.array(offsets)
    Ae, be = program.A_eq, program.b_eq
    na, npc = A.shape[0], P.size

    def F(y):
        xx = y[:n]
        t = y[n]
        lam = y[n + 1:n + 1 + npc]
        mu = y[n + 1 + npc:n + 1 + npc + na]
        nu = y[n + 1 + npc + na:]
        g = program.piece_grads(xx)[P]
        f = program.pieces(xx)[P]
        stat = lam @ g - A.T @ mu - Ae.T @ nu
        return np.concatenate([stat, [lam.sum() - 1.0], f - t, A @ xx - b, Ae @ xx - be])

    mu0 = np.concatenate([kkt.ineq[I], kkt.lower[Lo], kkt.upper[Up]])
    y0 = np.concatenate([x, [program.objective(x)], kkt.piece_weights[P], mu0, kkt.eq[E]])
    if F(y0).shape[0] != y0.shape[0]:
        return None
    try:
        with np.errstate(all="ignore"):
            sol = root(F, y0, method="hybr", tol=1e-15)
    except (ValueError, np.linalg.LinAlgError):
        return None
    y = sol.x
    if not np.all(np.isfinite(y)):
        return None
    xn = y[:n]
    if np.max(np.abs(xn - x)) > 1e-4 * max(1.0, float(np.max(np.abs(x)))):
        return None
    lam = y[n + 1:n + 1 + npc]
    mu = y[n + 1 + npc:n + 1 + npc + na]
    if np.any(lam < -1e-12) or np.any(mu < -1e-12):
        return None
    if program.max_violation(xn) > config.feasibility_tol:
        return None
    return xn


def _solve_lp_form(program: ConcaveProgram, config: SolveConfig) -> SolveResult:
    f = program.lp_form
    res = linprog(-f.c_obj, A_ub=f.A_ub, b_ub=f.b_ub, A_eq=f.A_eq, b_eq=f.b_eq,
                  bounds=f.bounds, method="highs", options=HIGHS_OPTIONS)
    if res.status == 2:
        return SolveResult(np.full(program.n, np.nan), -np.inf, "infeasible", np.inf, message=res.message)
    if res.status != 0:
        return SolveResult(np.full(program.n, np.nan), -np.inf, "max-iterations", np.inf, message=res.message)
    x = np.clip(res.x[:f.n], program.lower, program.upper)
    return SolveResult(x, program.objective(x), "optimal", 0.0, None, int(res.nit),
                       "exact LP", {"lp_value": float(-res.fun)})


def maximize_concave(program: ConcaveProgram, config: SolveConfig | None = None) -> SolveResult:
    config = config or SolveConfig()
    if program.lp_form is not None:
        return _solve_lp_form(program, config)

    interior, slack = _max_slack_point(program)
    if interior is None:
        return SolveResult(np.full(program.n, np.nan), -np.inf, "infeasible", np.inf,
                           message="phase one found no feasible point")
    n = program.n
    x0 = interior if program.x0 is None else np.asarray(program.x0, dtype=float)
    if program.max_violation(x0) > config.feasibility_tol:
        x0 = interior

    def obj(z):
        return -z[n]

    def obj_jac(z):
        g = np.zeros(n + 1)
        g[n] = -1.0
        return g

    cons = [{
        "type": "ineq",
        "fun": lambda z: program.pieces(z[:n]) - z[n],
        "jac": lambda z: np.hstack([program.piece_grads(z[:n]),
                                    -np.ones((program.piece_grads(z[:n]).shape[0], 1))]),
    }]
    if program.A_ub.shape[0]:
        A = np.hstack([program.A_ub, np.zeros((program.A_ub.shape[0], 1))])
        cons.append({"type": "ineq", "fun": lambda z: program.b_ub - A @ z, "jac": lambda z: -A})
    if program.A_eq.shape[0]:
        Ae = np.hstack([program.A_eq, np.zeros((program.A_eq.shape[0], 1))])
        cons.append({"type": "eq", "fun": lambda z: Ae @ z - program.b_eq, "jac": lambda z: Ae})
    bounds = list(zip(program.lower, program.upper)) + [(None, None)]

    best = None
    x = x0
    total_it = 0
    for attempt in range(config.restarts + 1):
        z0 = np.concatenate([x, [np.min(program.pieces(x))]])
        with warnings.catch_warnings():
            # SLSQP clips trial points to the box itself; the notice is noise here
            warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
            res = minimize(obj, z0, jac=obj_jac, constraints=cons, bounds=bounds, method="SLSQP",
                           options={"ftol": 1e-15, "maxiter": min(config.max_iter, 2000)})
        total_it += int(res.nit)
        x = _restore_feasibility(program, res.x[:n], interior, slack)
        if program.max_violation(x) > config.feasibility_tol:
            x = interior
        value = program.objective(x)
        kkt, gap = kkt_certificate(program, x, config.active_tol)
        if gap > 1e-13:
            xp = _kkt_polish(program, x, kkt, config)
            if xp is not None:
                xp = np.clip(xp, program.lower, program.upper)
                vp = program.objective(xp)
                kp, gp = kkt_certificate(program, xp, config.active_tol)
                if vp >= value - 1e-13 * max(1.0, abs(value)) and gp <= max(gap, config.stationarity_tol):
                    x, value, kkt, gap = xp, vp, kp, gp
        cand = SolveResult(x, value, "optimal" if gap <= config.stationarity_tol else "max-iterations",
                           gap, kkt, total_it, str(res.message))
        if best is None or cand.value > best.value + 1e-13 or (
                abs(cand.value - best.value) <= 1e-13 and cand.certificate_gap < best.certificate_gap):
            best = cand
        if best.optimal:
            break
        # restart from a blend with the interior point
        x = 0.5 * (x + interior)
    best.iterations = total_it
    return best


def grid_oracle(program: ConcaveProgram, resolution: int, lipschitz: float | None = None,
                point_cap: int = GRID_POINT_CAP) -> SolveResult:
    """Exhaustive search on a uniform grid of the box.

    ``lipschitz`` is a bound on the objective's Lipschitz constant with
    respect to the sup-norm near the optimum; when given, ``certificate_gap``
    reports ``lipschitz * step``, the oracle's guaranteed accuracy for
    programs whose feasible set is a down-set near the optimum.
    """
    n = program.n
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    total = resolution ** n
    if total > point_cap:
        raise MemoryError(f"grid of {total} points exceeds the cap of {point_cap}")
    if program.A_eq.shape[0]:
        raise ValueError("grid oracle does not support equality constraints")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(program.lower, program.upper)]
    step = float(max((hi - lo) / (resolution - 1) for lo, hi in zip(program.lower, program.upper)))

    best_val, best_x = -np.inf, None
    # iterate over the leading axes, vectorize the last ones
    tail = 1
    while tail < n and resolution ** (tail + 1) <= _GRID_CHUNK:
        tail += 1
    tail = min(tail, n)
    tail_pts = np.array(np.meshgrid(*axes[n - tail:], indexing="ij")).reshape(tail, -1).T
    for head in itertools.product(*axes[:n - tail]):
        pts = np.hstack([np.broadcast_to(np.array(head), (tail_pts.shape[0], n - tail)), tail_pts])
        if program.A_ub.shape[0]:
            ok = np.all(pts @ program.A_ub.T <= program.b_ub + 1e-12, axis=1)
            pts = pts[ok]
        if pts.shape[0] == 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.min(program.pieces(pts), axis=1)
        vals = np.where(np.isnan(vals), -np.inf, vals)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_x = float(vals[k]), pts[k].copy()
    if best_x is None:
        return SolveResult(np.full(n, np.nan), -np.inf, "infeasible", np.inf,
                           message="no feasible grid point")
    gap = lipschitz * step if lipschitz is not None else float("nan")
    return SolveResult(best_x, best_val, "optimal", gap, None, total, "grid", {"step": step})
