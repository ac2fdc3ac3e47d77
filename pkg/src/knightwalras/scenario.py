"""JSON scenario files: strict parsing into an Economy and canonical serialization."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields

import jsonschema
import numpy as np

from .equilibrium import SolverConfig
from .expectation import PriorSet, PriorSetError, full_ambiguity, interval_priors, make_prior_set
from .markets import CONVENTIONS, Economy
from .preferences import FAMILIES, KINDS, Agent, AmbiguityIndex, BernoulliSpec, PreferenceError, PreferenceSpec

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["states", "priors", "agents"],
    "properties": {
        "states": {"type": "integer", "minimum": 1},
        "priors": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "vertices": {"type": "array", "items": _VEC, "minItems": 1},
                "interval": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["center", "epsilon"],
                    "properties": {"center": _VEC, "epsilon": {"type": "number", "minimum": 0}},
                },
                "full_ambiguity": {"const": True},
            },
        },
        "agents": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["endowment", "preference"],
                "properties": {
                    "endowment": _VEC,
                    "preference": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["bernoulli"],
                        "properties": {
                            "kind": {"enum": list(KINDS)},
                            "bernoulli": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["family"],
                                "properties": {
                                    "family": {"enum": list(FAMILIES)},
                                    "params": {"type": "object"},
                                },
                            },
                            "selection": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                            "weights": _VEC,
                            "ambiguity_index": {
                                "type": "object",
                                "additionalProperties": False,
                                "properties": {
                                    "name": {"enum": ["exponential", "identity"]},
                                    "theta": _NUM,
                                },
                            },
                            "anchor": _VEC,
                        },
                    },
                },
            },
        },
        "clearing": {"enum": list(CONVENTIONS)},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "damping": _NUM,
                "temperature": _NUM,
                "anneal": _NUM,
                "max_outer": {"type": "integer", "minimum": 1},
                "residual_tol": _NUM,
                "truncation": _NUM,
                "refine_evals": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sweep_grid": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "family": {"enum": ["interval", "constant"]},
                "sampler": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "n"],
                    "properties": {
                        "kind": {"enum": ["dirichlet", "constant"]},
                        "n": {"type": "integer", "minimum": 1},
                        "concentration": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "prior": _VEC,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}


class ScenarioError(ValueError):
    """Input error carrying the JSON field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


@dataclass
class Scenario:
    raw: dict
    economy: Economy
    solver: SolverConfig
    experiment: dict = field(default_factory=dict)

    @property
    def interval(self) -> dict | None:
        return self.raw["priors"].get("interval")

    def canonical(self) -> str:
        return dumps(self.raw)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _priors(spec: dict, n: int) -> PriorSet:
    if "vertices" in spec:
        verts = spec["vertices"]
        for k, v in enumerate(verts):
            if len(v) != n:
                raise ScenarioError(f"priors.vertices[{k}]", f"has {len(v)} entries, expected {n}")
            s = math.fsum(v)
            if abs(s - 1.0) > 1e-9:
                raise ScenarioError(f"priors.vertices[{k}]", f"sums to {s:.12g}, not 1")
            if any(x <= 0 for x in v):
                raise ScenarioError(f"priors.vertices[{k}]", "priors need full support (all entries > 0)")
        return make_prior_set(verts)
    if "interval" in spec:
        c = spec["interval"]["center"]
        if len(c) != n:
            raise ScenarioError("priors.interval.center", f"has {len(c)} entries, expected {n}")
        if abs(math.fsum(c) - 1.0) > 1e-9:
            raise ScenarioError("priors.interval.center", "does not sum to 1")
        try:
            p = interval_priors(c, spec["interval"]["epsilon"])
        except PriorSetError as exc:
            raise ScenarioError("priors.interval", str(exc)) from None
        return p
    return full_ambiguity(n)


def _agent(spec: dict, n: int, k: int) -> Agent:
    base = f"agents[{k}]"
    if len(spec["endowment"]) != n:
        raise ScenarioError(f"{base}.endowment", f"has {len(spec['endowment'])} entries, expected {n}")
    p = spec["preference"]
    try:
        bern = BernoulliSpec(p["bernoulli"]["family"], dict(p["bernoulli"].get("params", {})))
    except PreferenceError as exc:
        raise ScenarioError(f"{base}.preference.bernoulli", str(exc)) from None
    idx = None
    if "ambiguity_index" in p:
        try:
            idx = AmbiguityIndex(**p["ambiguity_index"])
        except PreferenceError as exc:
            raise ScenarioError(f"{base}.preference.ambiguity_index", str(exc)) from None
    try:
        pref = PreferenceSpec(
            p.get("kind", "maxmin"),
            bern,
            prior_selection=tuple(p["selection"]) if "selection" in p else None,
            ambiguity_index=idx,
            second_order_weights=tuple(p["weights"]) if "weights" in p else None,
            anchor=np.array(p["anchor"], dtype=float) if "anchor" in p else None,
        )
    except (PreferenceError, ValueError) as exc:
        raise ScenarioError(f"{base}.preference", str(exc)) from None
    try:
        return Agent(np.array(spec["endowment"], dtype=float), pref)
    except (PreferenceError, ValueError) as exc:
        raise ScenarioError(f"{base}.endowment", str(exc)) from None


def parse(raw: dict) -> Scenario:
    """Validate a decoded scenario and build the economy; errors name the field."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ScenarioError(_path(exc.absolute_path), exc.message) from None
    n = raw["states"]
    priors = _priors(raw["priors"], n)
    agents = tuple(_agent(a, n, k) for k, a in enumerate(raw["agents"]))
    try:
        economy = Economy(agents, priors, raw.get("clearing", "disposal"))
    except (PreferenceError, ValueError) as exc:
        raise ScenarioError("agents", str(exc)) from None
    try:
        solver = SolverConfig(**raw.get("solver", {}))
    except ValueError as exc:
        raise ScenarioError("solver", str(exc)) from None
    exp = dict(raw.get("experiment", {}))
    if "prior" in exp and len(exp["prior"]) != n:
        raise ScenarioError("experiment.prior", f"has {len(exp['prior'])} entries, expected {n}")
    return Scenario(raw, economy, solver, exp)


def load(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError("", f"cannot read scenario: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse(raw)


def solver_fields() -> list[str]:
    return [f.name for f in fields(SolverConfig)]


# ---------------------------------------------------------------------------
# canonical JSON


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    # float repr is the shortest string that reads back to the same double
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
