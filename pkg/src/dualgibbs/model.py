"""Discrete pairwise Markov random fields with strictly positive factors.

A model is a set of discrete variables (each with a vector of unary
log-potentials) plus pairwise factors given as positive tables, so that

    p(x)  propto  exp(sum_v unary_v[x_v]) * prod_f table_f[x_u, x_v].

Factors carry stable integer handles that survive add/remove edits, which
keeps auxiliary per-factor state (dual variables, sampler slots) addressable
while the graph changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Variable",
    "Factor",
    "Model",
    "Evidence",
    "energy",
    "build_grid_ising",
    "build_random_graph",
    "build_full_ising",
    "clamp",
    "save_model",
    "load_model",
    "model_to_text",
    "model_from_text",
    "ModelFormatError",
]

Evidence = dict  # variable id -> clamped state


class ModelFormatError(ValueError):
    """Raised when parsing a serialized model fails; message carries the line number."""


@dataclass
class Variable:
    id: int
    cardinality: int
    unary: np.ndarray  # log-potentials, shape (cardinality,)

    def __post_init__(self):
        self.unary = np.asarray(self.unary, dtype=np.float64)
        if self.cardinality < 2:
            raise ValueError(f"variable {self.id}: cardinality must be >= 2")
        if self.unary.shape != (self.cardinality,):
            raise ValueError(f"variable {self.id}: unary length != cardinality")
        if not np.all(np.isfinite(self.unary)):
            raise ValueError(f"variable {self.id}: unary entries must be finite")


@dataclass
class Factor:
    id: int
    u: int
    v: int
    table: np.ndarray  # shape (card(u), card(v)), entries > 0

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)


@dataclass
class Model:
    """Pairwise MRF with id-addressable factors and per-variable adjacency.

    ``adjacency[v]`` lists ids of factors incident to variable ``v``; it is
    kept consistent through :meth:`add_factor` / :meth:`remove_factor` at a
    cost proportional to the endpoint degrees only.  Parallel factors on the
    same variable pair are allowed.  ``log_offset`` is a constant added to
    every energy; :func:`clamp` uses it to track the mass absorbed from
    clamped variables.  Models are treated as immutable while a sampler
    sweep is running; edits require exclusive access.
    """

    variables: list[Variable] = field(default_factory=list)
    factors: dict[int, Factor] = field(default_factory=dict)
    adjacency: list[list[int]] = field(default_factory=list)
    log_offset: float = 0.0
    source_ids: list[int] | None = None  # original variable ids after clamp()

    _next_factor_id: int = 0
    edit_touch_count: int = 0  # adjacency entries touched by edits, for cost audits

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    def cardinalities(self) -> np.ndarray:
        return np.array([v.cardinality for v in self.variables], dtype=np.int64)

    def add_variable(self, cardinality: int = 2, unary=None) -> int:
        vid = len(self.variables)
        if unary is None:
            unary = np.zeros(cardinality)
        self.variables.append(Variable(vid, cardinality, unary))
        self.adjacency.append([])
        return vid

    def add_factor(self, scope: tuple[int, int], table) -> int:
        """Attach a strictly positive table on the ordered pair ``scope``.

        Returns a fresh stable handle; ids are never reused within a model's
        lifetime even after removals.
        """
        u, v = scope
        if u == v:
            raise ValueError("factor scope must be two distinct variables")
        for w in (u, v):
            if not (0 <= w < self.n_vars):
                raise ValueError(f"unknown variable {w}")
        table = np.asarray(table, dtype=np.float64)
        expected = (self.variables[u].cardinality, self.variables[v].cardinality)
        if table.shape != expected:
            raise ValueError(f"table shape {table.shape} != {expected}")
        if not np.all(table > 0):
            raise ValueError("factor table entries must be strictly positive")
        fid = self._next_factor_id
        self._next_factor_id += 1
        self.factors[fid] = Factor(fid, u, v, table)
        self.adjacency[u].append(fid)
        self.adjacency[v].append(fid)
        self.edit_touch_count += 2
        return fid

    def remove_factor(self, fid: int) -> None:
        if fid not in self.factors:
            raise KeyError(f"unknown factor id {fid}")
        f = self.factors.pop(fid)
        for w in (f.u, f.v):
            lst = self.adjacency[w]
            self.edit_touch_count += len(lst)
            lst.remove(fid)

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def copy(self) -> "Model":
        m = Model(
            variables=[Variable(v.id, v.cardinality, v.unary.copy()) for v in self.variables],
            factors={fid: Factor(f.id, f.u, f.v, f.table.copy()) for fid, f in self.factors.items()},
            adjacency=[list(a) for a in self.adjacency],
            log_offset=self.log_offset,
            source_ids=None if self.source_ids is None else list(self.source_ids),
        )
        m._next_factor_id = self._next_factor_id
        return m

    def validate_state(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=np.int64)
        if state.shape != (self.n_vars,):
            raise ValueError(f"state length {state.shape} != ({self.n_vars},)")
        for v, val in enumerate(state):
            if not (0 <= val < self.variables[v].cardinality):
                raise ValueError(f"state[{v}] = {val} out of range")
        return state


def energy(model: Model, state) -> float:
    """Log of the unnormalized probability of ``state``.

    ``exp(energy)`` is the unnormalized mass, including the model's constant
    ``log_offset`` (zero except for clamped models).
    """
    x = model.validate_state(state)
    e = model.log_offset
    for v, var in enumerate(model.variables):
        e += var.unary[x[v]]
    for f in model.factors.values():
        e += math.log(f.table[x[f.u], x[f.v]])
    return float(e)


def _ising_table(beta: float) -> np.ndarray:
    off = math.exp(-beta)
    return np.array([[1.0, off], [off, 1.0]])


def build_grid_ising(height: int, width: int, beta: float, unaries=None) -> Model:
    """Binary Ising grid with 4-neighborhood and edge tables [[1, e^-b], [e^-b, 1]].

    ``unaries`` may be an array of shape (height*width,) holding the
    log-potential of state 1 for each variable (state 0 fixed at 0).
    """
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be >= 1")
    m = Model()
    n = height * width
    if unaries is None:
        unaries = np.zeros(n)
    else:
        unaries = np.asarray(unaries, dtype=np.float64).reshape(n)
    for i in range(n):
        m.add_variable(2, np.array([0.0, unaries[i]]))
    table = _ising_table(beta)
    for r in range(height):
        for c in range(width):
            v = r * width + c
            if c + 1 < width:
                m.add_factor((v, v + 1), table)
            if r + 1 < height:
                m.add_factor((v, v + width), table)
    return m


def build_random_graph(n_vars: int, k: int, seed: int) -> Model:
    """Binary model with k*n_vars factors on uniformly sampled distinct pairs.

    Unary state-1 log-potentials and all four log-table entries per factor
    are drawn i.i.d. from Normal(0, 1); tables are exponentiated so every
    entry is positive.  Deterministic in ``seed``.
    """
    n_factors = k * n_vars
    if n_factors > n_vars * (n_vars - 1) // 2:
        raise ValueError(f"cannot place {n_factors} factors on distinct pairs of {n_vars} variables")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    m = Model()
    for i in range(n_vars):
        m.add_variable(2, np.array([0.0, rng.standard_normal()]))
    seen: set[tuple[int, int]] = set()
    while len(seen) < n_factors:
        u = int(rng.integers(0, n_vars))
        v = int(rng.integers(0, n_vars))
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair in seen:
            continue
        seen.add(pair)
        m.add_factor(pair, np.exp(rng.standard_normal((2, 2))))
    return m


def build_full_ising(n_vars: int, beta: float) -> Model:
    """Fully connected binary Ising model, all n(n-1)/2 edges, zero unaries."""
    if n_vars < 2:
        raise ValueError("need at least 2 variables")
    m = Model()
    for _ in range(n_vars):
        m.add_variable(2)
    table = _ising_table(beta)
    for u in range(n_vars):
        for v in range(u + 1, n_vars):
            m.add_factor((u, v), table)
    return m


def clamp(model: Model, evidence: Evidence) -> Model:
    """Reduce the model by fixing the evidence variables.

    Factors with one clamped endpoint become unary adjustments on the free
    endpoint; fully clamped factors (and the unaries of clamped variables)
    are folded into ``log_offset``.  Free variables keep their relative
    order; the returned model's ``source_ids`` maps new ids to originals.
    """
    for v, s in evidence.items():
        if not (0 <= v < model.n_vars):
            raise ValueError(f"cannot clamp nonexistent variable {v}")
        if not (0 <= s < model.variables[v].cardinality):
            raise ValueError(f"evidence state {s} out of range for variable {v}")
    if not evidence:
        out = model.copy()
        out.source_ids = list(range(model.n_vars))
        return out

    free = [v for v in range(model.n_vars) if v not in evidence]
    new_id = {old: i for i, old in enumerate(free)}
    out = Model(log_offset=model.log_offset, source_ids=free)
    for old in free:
        var = model.variables[old]
        out.add_variable(var.cardinality, var.unary.copy())
    for old, s in evidence.items():
        out.log_offset += float(model.variables[old].unary[s])

    for f in model.factors.values():
        cu, cv = f.u in evidence, f.v in evidence
        if cu and cv:
            out.log_offset += math.log(f.table[evidence[f.u], evidence[f.v]])
        elif cu:
            w = new_id[f.v]
            out.variables[w].unary = out.variables[w].unary + np.log(f.table[evidence[f.u], :])
        elif cv:
            w = new_id[f.u]
            out.variables[w].unary = out.variables[w].unary + np.log(f.table[:, evidence[f.v]])
        else:
            out.add_factor((new_id[f.u], new_id[f.v]), f.table.copy())
    return out


# ---------------------------------------------------------------------------
# Text serialization.  Line-oriented:
#
#   vars N
#   offset X              (optional, omitted when zero)
#   unary v a0 a1 ...     (one line per variable, ascending v)
#   factor id u v t00 t01 ... (row-major table entries)
#
# Floats are written with repr(), which round-trips bit-exactly.
# Lines starting with '#' and blank lines are ignored.
# ---------------------------------------------------------------------------


def model_to_text(model: Model) -> str:
    lines = [f"vars {model.n_vars}"]
    if model.log_offset != 0.0:
        lines.append(f"offset {model.log_offset!r}")
    for var in model.variables:
        vals = " ".join(repr(float(a)) for a in var.unary)
        lines.append(f"unary {var.id} {vals}")
    for fid in sorted(model.factors):
        f = model.factors[fid]
        vals = " ".join(repr(float(t)) for t in f.table.ravel())
        lines.append(f"factor {fid} {f.u} {f.v} {vals}")
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> Model:
    model: Model | None = None
    seen_unary: set[int] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "vars":
                if model is not None:
                    raise ValueError("duplicate 'vars' header")
                n = int(parts[1])
                model = Model()
                for _ in range(n):
                    model.add_variable(2)  # placeholder, replaced by unary lines
            elif parts[0] == "offset":
                _require_header(model)
                model.log_offset = float(parts[1])
            elif parts[0] == "unary":
                _require_header(model)
                v = int(parts[1])
                vals = np.array([float(p) for p in parts[2:]])
                if len(vals) < 2:
                    raise ValueError("unary needs at least 2 entries")
                model.variables[v] = Variable(v, len(vals), vals)
                seen_unary.add(v)
            elif parts[0] == "factor":
                _require_header(model)
                fid, u, v = int(parts[1]), int(parts[2]), int(parts[3])
                cu = model.variables[u].cardinality
                cv = model.variables[v].cardinality
                vals = np.array([float(p) for p in parts[4:]])
                if vals.size != cu * cv:
                    raise ValueError(f"expected {cu * cv} table entries, got {vals.size}")
                table = vals.reshape(cu, cv)
                if not np.all(table > 0):
                    raise ValueError(f"factor {fid}: non-positive table entry")
                model.factors[fid] = Factor(fid, u, v, table)
                model.adjacency[u].append(fid)
                model.adjacency[v].append(fid)
                model._next_factor_id = max(model._next_factor_id, fid + 1)
            else:
                raise ValueError(f"unknown directive {parts[0]!r}")
        except ModelFormatError:
            raise
        except (ValueError, IndexError) as exc:
            raise ModelFormatError(f"line {lineno}: {exc}") from exc
    if model is None:
        raise ModelFormatError("missing 'vars' header")
    missing = set(range(model.n_vars)) - seen_unary
    if missing:
        raise ModelFormatError(f"missing unary line for variables {sorted(missing)}")
    return model


def _require_header(model):
    if model is None:
        raise ValueError("directive before 'vars' header")


def save_model(model: Model, path) -> None:
    with open(path, "w") as fh:
        fh.write(model_to_text(model))


def load_model(path) -> Model:
    with open(path) as fh:
        return model_from_text(fh.read())
