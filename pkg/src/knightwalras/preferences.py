"""Bernoulli utilities and the maxmin, smooth and anchored preference kinds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expectation import PriorSet, as_plan

DEFAULT_FLOOR = 1e-9

FAMILIES = ("power", "exponential", "sqrt", "log", "piecewise_linear")
KINDS = ("maxmin", "smooth", "anchored")


class PreferenceError(ValueError):
    pass


@dataclass(frozen=True)
class BernoulliSpec:
    """One-dimensional utility ``u`` applied statewise.

    ``power`` is CRRA with ``u(c) = c**(1-gamma)/(1-gamma)`` (log at
    ``gamma == 1``); ``exponential`` is CARA ``(1 - exp(-a c))/a``;
    ``piecewise_linear`` takes ``breakpoints`` b_1 < ... < b_m and
    ``slopes`` s_0 > ... > s_m > 0 with ``u(0) = 0``.
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise PreferenceError(f"unknown Bernoulli family {self.family!r}")
        p = dict(self.params)
        if self.family == "power":
            if p.get("gamma", 0) <= 0:
                raise PreferenceError("power family needs gamma > 0")
        elif self.family == "exponential":
            if p.get("a", 0) <= 0:
                raise PreferenceError("exponential family needs a > 0")
        elif self.family == "piecewise_linear":
            b = np.asarray(p.get("breakpoints", []), dtype=float)
            s = np.asarray(p.get("slopes", []), dtype=float)
            if s.shape[0] != b.shape[0] + 1 or s.shape[0] < 1:
                raise PreferenceError("piecewise_linear needs len(slopes) == len(breakpoints) + 1")
            if np.any(s <= 0) or np.any(np.diff(s) >= 0):
                raise PreferenceError("slopes must be positive and strictly decreasing")
            if b.size and (b[0] <= 0 or np.any(np.diff(b) <= 0)):
                raise PreferenceError("breakpoints must be positive and increasing")
        object.__setattr__(self, "params", p)

    @property
    def strictly_concave(self) -> bool:
        return self.family != "piecewise_linear"

    @property
    def singular_at_zero(self) -> bool:
        """True when ``u(0)`` is not finite (log, CRRA with gamma >= 1)."""
        return self.family == "log" or (
            self.family == "power" and self.params["gamma"] >= 1
        )

    @property
    def infinite_slope_at_zero(self) -> bool:
        return self.family in ("sqrt", "log", "power")

    def _affine_pieces(self):
        b = np.asarray(self.params["breakpoints"], dtype=float)
        s = np.asarray(self.params["slopes"], dtype=float)
        icpt = np.zeros_like(s)
        for j in range(1, s.shape[0]):
            icpt[j] = icpt[j - 1] + (s[j - 1] - s[j]) * b[j - 1]
        return icpt, s

    def value(self, c):
        c = np.asarray(c, dtype=float)
        f = self.family
        if f == "sqrt":
            return np.sqrt(c)
        if f == "log":
            return np.log(c)
        if f == "power":
            g = self.params["gamma"]
            if g == 1:
                return np.log(c)
            return c ** (1.0 - g) / (1.0 - g)
        if f == "exponential":
            a = self.params["a"]
            return -np.expm1(-a * c) / a
        icpt, s = self._affine_pieces()
        return np.min(icpt + s * c[..., None], axis=-1)

    def derivative(self, c):
        """Marginal utility; for piecewise-linear the right derivative."""
        c = np.asarray(c, dtype=float)
        f = self.family
        with np.errstate(divide="ignore"):
            if f == "sqrt":
                return 0.5 / np.sqrt(c)
            if f == "log":
                return 1.0 / c
            if f == "power":
                return c ** (-self.params["gamma"])
        if f == "exponential":
            a = self.params["a"]
            return np.exp(-a * c)
        b = np.asarray(self.params["breakpoints"], dtype=float)
        s = np.asarray(self.params["slopes"], dtype=float)
        return s[np.searchsorted(b, c, side="right")]

    def inverse_marginal(self, m):
        """Consumption at which ``u'(c) = m``, clipped at zero."""
        m = np.asarray(m, dtype=float)
        f = self.family
        if f == "sqrt":
            return 0.25 / m**2
        if f == "log":
            return 1.0 / m
        if f == "power":
            return m ** (-1.0 / self.params["gamma"])
        if f == "exponential":
            a = self.params["a"]
            return np.maximum(0.0, -np.log(m) / a)
        raise PreferenceError("piecewise-linear utility has no inverse marginal")


@dataclass(frozen=True)
class AmbiguityIndex:
    """Scalar transform for the smooth model; default ``-exp(-theta x)/theta``."""

    name: str = "exponential"
    theta: float = 1.0

    def __post_init__(self):
        if self.name not in ("exponential", "identity"):
            raise PreferenceError(f"unknown ambiguity index {self.name!r}")
        if self.name == "exponential" and self.theta <= 0:
            raise PreferenceError("ambiguity index needs theta > 0")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.name == "identity":
            return x
        with np.errstate(over="ignore"):
            return -np.exp(-self.theta * x) / self.theta

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.name == "identity":
            return np.ones_like(x)
        return np.exp(-self.theta * x)


@dataclass(frozen=True)
class PreferenceSpec:
    kind: str
    bernoulli: BernoulliSpec
    prior_selection: tuple | None = None
    ambiguity_index: AmbiguityIndex | None = None
    second_order_weights: tuple | None = None
    anchor: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreferenceError(f"unknown preference kind {self.kind!r}")
        if self.prior_selection is not None:
            sel = tuple(int(i) for i in self.prior_selection)
            if not sel or len(set(sel)) != len(sel) or min(sel) < 0:
                raise PreferenceError("prior selection must be a nonempty set of vertex indices")
            object.__setattr__(self, "prior_selection", sel)
        if self.kind == "smooth":
            if self.second_order_weights is None:
                raise PreferenceError("smooth preferences need second-order weights")
            w = tuple(float(x) for x in self.second_order_weights)
            if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
                raise PreferenceError("second-order weights must be nonnegative and sum to 1")
            object.__setattr__(self, "second_order_weights", w)
            if self.ambiguity_index is None:
                object.__setattr__(self, "ambiguity_index", AmbiguityIndex())
        if self.kind == "anchored":
            if self.anchor is None:
                raise PreferenceError("anchored preferences need an anchor plan")
            a = as_plan(self.anchor, name="anchor")
            if np.any(a <= 0):
                raise PreferenceError("anchor must be strictly positive")
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, "anchor", a)

    @property
    def strictly_concave(self) -> bool:
        # holds for full-support priors only; callers check the prior set
        return self.bernoulli.strictly_concave


def maxmin(bernoulli: BernoulliSpec, selection=None) -> PreferenceSpec:
    return PreferenceSpec("maxmin", bernoulli, prior_selection=selection)


@dataclass(frozen=True)
class Agent:
    endowment: np.ndarray
    preference: PreferenceSpec

    def __post_init__(self):
        e = as_plan(self.endowment, name="endowment")
        if np.any(e <= 0):
            raise PreferenceError("endowment must be strictly positive in every state")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "endowment", e)

    @property
    def n_states(self) -> int:
        return self.endowment.shape[0]


def effective_vertices(pref: PreferenceSpec, priors: PriorSet) -> np.ndarray:
    """Vertices the agent evaluates with (the Gajdos selection when present)."""
    if pref.prior_selection is None:
        return priors.vertices
    if max(pref.prior_selection) >= priors.n_vertices:
        raise PreferenceError("prior selection refers to a missing vertex")
    return priors.vertices[list(pref.prior_selection)]


def _validate(agent: Agent, priors: PriorSet):
    if agent.n_states != priors.n_states:
        raise ValueError("agent and prior set have different state counts")
    pref = agent.preference
    if pref.kind == "smooth" and len(pref.second_order_weights) != effective_vertices(pref, priors).shape[0]:
        raise PreferenceError("second-order weights must match the number of vertices")
    if pref.kind == "anchored" and pref.anchor.shape[0] != priors.n_states:
        raise PreferenceError("anchor has the wrong number of states")


def piece_values(agent: Agent, priors: PriorSet, c, floor: float | None = None) -> np.ndarray:
    """Smooth concave pieces whose minimum is the utility.

    Works on a single plan (returns shape ``(J,)``) or a batch of plans
    stacked along the first axis (returns ``(m, J)``). ``floor`` clamps
    consumption from below before evaluating ``u``.
    """
    pref = agent.preference
    c = np.asarray(c, dtype=float)
    if floor is not None:
        c = np.maximum(c, floor)
    uc = pref.bernoulli.value(c)
    verts = effective_vertices(pref, priors)
    ev = uc @ verts.T
    if pref.kind == "maxmin":
        return ev
    if pref.kind == "anchored":
        return ev - verts @ pref.bernoulli.value(pref.anchor)
    w = np.asarray(pref.second_order_weights)
    return (pref.ambiguity_index.value(ev) @ w)[..., None]


def piece_gradients(agent: Agent, priors: PriorSet, c, floor: float | None = None) -> np.ndarray:
    pref = agent.preference
    c = np.asarray(c, dtype=float)
    if floor is not None:
        c = np.maximum(c, floor)
    du = pref.bernoulli.derivative(c)
    verts = effective_vertices(pref, priors)
    if pref.kind in ("maxmin", "anchored"):
        return verts * du
    ev = verts @ pref.bernoulli.value(c)
    w = np.asarray(pref.second_order_weights) * pref.ambiguity_index.derivative(ev)
    return ((w @ verts) * du)[None, :]


def utility(agent: Agent, priors: PriorSet, c) -> float:
    _validate(agent, priors)
    c = as_plan(c, priors.n_states, "consumption")
    if np.any(c < 0):
        raise PreferenceError("consumption must be nonnegative")
    if agent.preference.bernoulli.singular_at_zero and np.any(c == 0):
        raise PreferenceError("utility is not finite at zero consumption")
    return float(np.min(piece_values(agent, priors, c)))


def superdifferential(agent: Agent, priors: PriorSet, c, tol: float = 1e-9) -> np.ndarray:
    """Generators of the superdifferential at an interior plan, one per row.

    Maxmin and anchored kinds return ``P ⊙ u'(c)`` for every (selected)
    vertex whose piece is within ``tol`` of the minimum; the smooth kind
    returns its single gradient.
    """
    _validate(agent, priors)
    c = as_plan(c, priors.n_states, "consumption")
    if np.any(c <= 0):
        raise PreferenceError("superdifferential needs a strictly positive plan")
    if agent.preference.bernoulli.family == "piecewise_linear":
        b = np.asarray(agent.preference.bernoulli.params["breakpoints"])
        if np.any(np.isin(c, b)):
            raise PreferenceError("piecewise-linear utility is not differentiable at a breakpoint")
    vals = piece_values(agent, priors, c)
    grads = piece_gradients(agent, priors, c)
    active = vals <= vals.min() + tol
    return grads[active]


def minimizing_vertices(agent: Agent, priors: PriorSet, c, tol: float = 1e-9) -> list[int]:
    """Indices (into the economy's vertex list) of utility-minimizing priors."""
    pref = agent.preference
    if pref.kind == "smooth":
        return []
    vals = piece_values(agent, priors, c, floor=DEFAULT_FLOOR)
    idx = np.flatnonzero(vals <= vals.min() + tol)
    if pref.prior_selection is None:
        return [int(i) for i in idx]
    return [pref.prior_selection[i] for i in idx]
