"""Contingent plans, prior polytopes and the sublinear expectation.

A prior set is stored by its vertex list. The sublinear expectation of a
plan is the largest linear expectation over the polytope, which is
attained at a vertex, so every evaluation here is an exact enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np

DEFAULT_TOL = 1e-9
PIVOT_TOL = 1e-10


class PriorSetError(ValueError):
    pass


def as_plan(x, n: int | None = None, name: str = "plan") -> np.ndarray:
    """Coerce ``x`` into a finite 1-d float array, optionally of length ``n``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} has {arr.shape[0]} states, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class PriorSet:
    """Finite vertex description of a convex compact set of priors.

    ``closure`` marks the full simplex (Dirac vertices). It waives the
    full-support requirement, which the simplex cannot meet.
    """

    vertices: np.ndarray
    tolerance: float = DEFAULT_TOL
    closure: bool = False

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise PriorSetError("prior set needs at least one vertex of positive length")
        if not np.all(np.isfinite(v)):
            raise PriorSetError("prior vertices must be finite")
        if np.any(np.abs(v.sum(axis=1) - 1.0) > self.tolerance):
            bad = int(np.argmax(np.abs(v.sum(axis=1) - 1.0)))
            raise PriorSetError(f"vertex {bad} sums to {v[bad].sum():.12g}, not 1")
        if self.closure:
            if np.any(v < -self.tolerance):
                raise PriorSetError("prior vertices must be nonnegative")
        elif np.any(v <= 0.0):
            bad = int(np.argmax(np.any(v <= 0.0, axis=1)))
            raise PriorSetError(
                f"vertex {bad} has a nonpositive entry; priors need full support"
            )
        for i in range(v.shape[0]):
            for j in range(i):
                if np.array_equal(v[i], v[j]):
                    raise PriorSetError(f"duplicate vertices {j} and {i}")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def n_states(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def is_singleton(self) -> bool:
        return self.n_vertices == 1

    def __len__(self):
        return self.n_vertices

    def __eq__(self, other):
        if not isinstance(other, PriorSet):
            return NotImplemented
        return (
            self.closure == other.closure
            and self.vertices.shape == other.vertices.shape
            and bool(np.array_equal(self.vertices, other.vertices))
        )

    def __hash__(self):
        return hash((self.closure, self.vertices.tobytes()))

    def subset(self, indices) -> "PriorSet":
        idx = list(indices)
        if not idx:
            raise PriorSetError("empty prior selection")
        return PriorSet(self.vertices[idx], self.tolerance, self.closure)


def make_prior_set(vertices, tolerance: float = DEFAULT_TOL) -> PriorSet:
    """Validate a vertex list and drop exact duplicates (first occurrence kept)."""
    rows = [np.asarray(v, dtype=float) for v in vertices]
    if not rows:
        raise PriorSetError("prior set needs at least one vertex")
    n = rows[0].shape
    if any(r.shape != n or r.ndim != 1 for r in rows):
        raise PriorSetError("prior vertices have mismatched lengths")
    unique: list[np.ndarray] = []
    for r in rows:
        if not any(np.array_equal(r, u) for u in unique):
            unique.append(r)
    return PriorSet(np.vstack(unique), tolerance)


def interval_priors(center, epsilon: float, tolerance: float = DEFAULT_TOL) -> PriorSet:
    """Priors within ``epsilon`` of ``center`` along pairwise mass transfers.

    With two states this is exactly ``{p : p_1 in [c_1 - eps, c_1 + eps]}``.
    With more states the vertices are ``center + eps * (delta_a - delta_b)``
    for all ordered pairs ``a != b``, a polytope with ``center`` in its
    relative interior. ``epsilon == 0`` gives the singleton ``{center}``.
    """
    c = as_plan(center, name="center")
    if epsilon < 0:
        raise PriorSetError("epsilon must be nonnegative")
    if epsilon == 0:
        return make_prior_set([c], tolerance)
    n = c.shape[0]
    if n < 2:
        raise PriorSetError("interval family needs at least two states")
    verts = []
    for a in range(n):
        for b in range(n):
            if a != b:
                v = c.copy()
                v[a] += epsilon
                v[b] -= epsilon
                verts.append(v)
    if n == 2:
        # (c1+e, c2-e) and (c1-e, c2+e); keep the low-p1 vertex first
        verts = verts[::-1]
    return make_prior_set(verts, tolerance)


def full_ambiguity(n: int) -> PriorSet:
    """The whole simplex, represented by its Dirac vertices."""
    return PriorSet(np.eye(n), DEFAULT_TOL, closure=True)


def _check_dim(priors: PriorSet, x) -> np.ndarray:
    return as_plan(x, priors.n_states)


def sublinear_expectation(priors: PriorSet, x) -> tuple[float, np.ndarray]:
    """Return ``max_P E^P x`` and the maximizing vertex (lowest index on ties)."""
    x = _check_dim(priors, x)
    vals = priors.vertices @ x
    k = int(np.argmax(vals))
    return float(vals[k]), priors.vertices[k].copy()


def vertex_expectations(priors: PriorSet, x) -> np.ndarray:
    return priors.vertices @ _check_dim(priors, x)


@dataclass(frozen=True)
class StatePrice:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = as_plan(self.values, name="state price")
        if np.any(v < 0):
            raise ValueError("state prices must be nonnegative")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def canonical(self) -> "StatePrice":
        return StatePrice(canonical_price(self.values), True)


def canonical_price(psi) -> np.ndarray:
    """Scale a nonnegative, nonzero price onto the simplex."""
    p = np.asarray(psi, dtype=float)
    if np.any(p < 0):
        raise ValueError("state prices must be nonnegative")
    s = p.sum()
    if s <= 0:
        raise ValueError("state price is identically zero")
    return p / s


def price(psi, priors: PriorSet, x) -> float:
    """Coherent forward price ``E[psi * x]``."""
    p = np.asarray(psi, dtype=float)
    x = _check_dim(priors, x)
    if p.shape != x.shape:
        raise ValueError("price and plan dimensions differ")
    return sublinear_expectation(priors, p * x)[0]


def expectation_spread(priors: PriorSet, xi) -> float:
    vals = vertex_expectations(priors, xi)
    return float(vals.max() - vals.min())


def is_mean_ambiguity_free(priors: PriorSet, xi, tol: float = DEFAULT_TOL) -> bool:
    return expectation_spread(priors, xi) <= tol


@dataclass(frozen=True)
class SubspaceBasis:
    """Basis of the plans whose expectation is the same under every prior."""

    basis_vectors: np.ndarray
    dimension: int = field(init=False)

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.basis_vectors, dtype=float))
        b.setflags(write=False)
        object.__setattr__(self, "basis_vectors", b)
        object.__setattr__(self, "dimension", b.shape[0])

    def contains(self, x, tol: float = 1e-9) -> bool:
        """Least-squares membership test."""
        x = np.asarray(x, dtype=float)
        coef, *_ = np.linalg.lstsq(self.basis_vectors.T, x, rcond=None)
        return bool(np.max(np.abs(self.basis_vectors.T @ coef - x)) <= tol)


def rref(a: np.ndarray, pivot_tol: float = PIVOT_TOL) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form with partial pivoting; returns (R, pivot columns)."""
    r = np.array(a, dtype=float)
    rows, cols = r.shape
    pivots: list[int] = []
    row = 0
    for col in range(cols):
        if row >= rows:
            break
        p = row + int(np.argmax(np.abs(r[row:, col])))
        if abs(r[p, col]) <= pivot_tol:
            r[row:, col] = 0.0
            continue
        r[[row, p]] = r[[p, row]]
        r[row] /= r[row, col]
        for i in range(rows):
            if i != row:
                r[i] -= r[i, col] * r[row]
        pivots.append(col)
        row += 1
    return r[:row], pivots


def _integer_friendly(v: np.ndarray, max_den: int = 1000) -> np.ndarray:
    fracs = [Fraction(float(x)).limit_denominator(max_den) for x in v]
    if any(abs(float(f) - x) > 1e-12 for f, x in zip(fracs, v)):
        return v
    scale = 1
    for f in fracs:
        scale = lcm(scale, f.denominator)
    return np.array([float(f * scale) for f in fracs])


def null_space(a: np.ndarray, pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    """Kernel basis from the free columns of the reduced echelon form."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[1]
    r, pivots = rref(a, pivot_tol)
    free = [j for j in range(n) if j not in pivots]
    basis = []
    for f in free:
        v = np.zeros(n)
        v[f] = 1.0
        for i, pc in enumerate(pivots):
            v[pc] = -r[i, f]
        v[np.abs(v) < pivot_tol] = 0.0
        basis.append(_integer_friendly(v))
    return np.array(basis).reshape(len(basis), n)


def difference_matrix(priors: PriorSet) -> np.ndarray:
    """Rows ``P_k - P_1``; a plan is mean-ambiguity-free iff it is orthogonal to all of them."""
    v = priors.vertices
    return v[1:] - v[0]


def mean_ambiguity_free_basis(priors: PriorSet) -> SubspaceBasis:
    n = priors.n_states
    if priors.is_singleton:
        return SubspaceBasis(np.eye(n))
    return SubspaceBasis(null_space(difference_matrix(priors)))


def complement_rows(priors: PriorSet, pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    """Independent rows spanning the orthogonal complement of the subspace."""
    if priors.is_singleton:
        return np.zeros((0, priors.n_states))
    r, _ = rref(difference_matrix(priors), pivot_tol)
    return r
