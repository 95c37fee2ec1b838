"""Dual (auxiliary-variable) representations of pairwise factors.

Every factor table is rewritten as a finite mixture whose components are
rank-1 tables (outer products) or equality bonds (scaled identity tables).
Attaching one mixture-indicator variable per factor turns the model into a
bipartite primal/dual system in which both conditionals factorize, which is
what makes the two-block sampler in :mod:`dualgibbs.sampling` parallel.

For strictly positive 2x2 tables the mixture comes from a positive
factorization P = B C^T: the two column pairs of (B, C) are the components,
and the whole thing is summarized by five log-ratios (alpha1, alpha2, q,
beta1, beta2).  Equal-diagonal Ising/Potts tables additionally admit the
bond decomposition (independence term + equality term) underlying
Swendsen-Wang updates, and Higdon's partial variant with a third component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Model

__all__ = [
    "symmetric_factor",
    "factorize_positive",
    "dual_params",
    "DualFactor",
    "MixtureComponent",
    "RankOneMixture",
    "sw_decompose",
    "higdon_decompose",
    "entrywise_mixture",
    "sw_form_coupling",
    "DualModel",
    "dualize_model",
    "build_dual_model",
]

# Entries this far below the max are treated as zero: the log-ratio formulas
# would produce +-inf.
RELATIVE_ENTRY_FLOOR = 1e-12


def _check_2x2_positive(P: np.ndarray, name: str) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2, got {P.shape}")
    if not np.all(P > 0):
        raise ValueError(f"{name} entries must be strictly positive")
    return P


def symmetric_factor(P) -> np.ndarray:
    """Factor a symmetric positive 2x2 table with det >= 0 as P = B B^T.

    Uses the closed forms cos(phi) = (sqrt(1+a) + sqrt(1-a))/2 and
    sin(phi) = (sqrt(1+a) - sqrt(1-a))/2 for a = p12 / sqrt(p11 p22); a is
    clamped to [0, 1] to absorb roundoff near det = 0, where the result is
    rank-1 with equal columns (still positive, never NaN).
    """
    P = _check_2x2_positive(P, "P")
    scale = float(np.max(P))
    if abs(P[0, 1] - P[1, 0]) > 1e-9 * scale:
        raise ValueError("P must be symmetric")
    a = float(P[0, 1] / math.sqrt(P[0, 0] * P[1, 1]))
    if a > 1.0 + 1e-9:
        raise ValueError("P must have nonnegative determinant")
    a = min(max(a, 0.0), 1.0)
    cos = 0.5 * (math.sqrt(1.0 + a) + math.sqrt(1.0 - a))
    sin = 0.5 * (math.sqrt(1.0 + a) - math.sqrt(1.0 - a))
    s0 = math.sqrt(P[0, 0])
    s1 = math.sqrt(P[1, 1])
    return np.array([[s0 * cos, s0 * sin], [s1 * sin, s1 * cos]])


def factorize_positive(P) -> tuple[np.ndarray, np.ndarray]:
    """Write a strictly positive 2x2 table as P = B C^T with positive B, C.

    Pipeline: an optional row swap makes the determinant nonnegative, the
    row scaling diag(1/p12, 1/p21) makes the table symmetric, the symmetric
    case is solved in closed form, and the scalings are undone on the left
    factor.  A zero determinant is not an error; it yields a rank-1 B.
    """
    P = _check_2x2_positive(P, "P")
    if float(np.min(P)) < RELATIVE_ENTRY_FLOOR * float(np.max(P)):
        raise ValueError("table entry effectively zero relative to max; not dualizable on the generic path")
    swapped = float(np.linalg.det(P)) < 0.0
    P2 = P[::-1, :] if swapped else P
    d0, d1 = float(P2[0, 1]), float(P2[1, 0])
    M = np.array([[P2[0, 0] / d0, 1.0], [1.0, P2[1, 1] / d1]])
    Bt = symmetric_factor(M)
    B = Bt * np.array([[d0], [d1]])
    if swapped:
        B = B[::-1, :]
    return B, Bt.copy()


@dataclass(frozen=True)
class DualFactor:
    """Five-parameter dual of a positive 2x2 table P = B C^T.

    With theta in {0, 1}, the mixture

        sum_theta  e^(alpha1 x1) e^(alpha2 x2) e^(q theta) e^(theta (beta1 x1 + beta2 x2))

    equals ``P[x1, x2] * exp(-log_scale)`` for all four states; equivalently
    component theta is the outer product of column theta of B and C.
    """

    alpha1: float
    alpha2: float
    q: float
    beta1: float
    beta2: float
    log_scale: float = 0.0

    @property
    def dual_cardinality(self) -> int:
        return 2

    def mixture_table(self) -> np.ndarray:
        """Sum over theta of the mixture, as a 2x2 array (no rescaling)."""
        x1 = np.array([[0.0], [1.0]])
        x2 = np.array([[0.0, 1.0]])
        h = np.exp(self.alpha1 * x1 + self.alpha2 * x2)
        return h * (1.0 + np.exp(self.q + self.beta1 * x1 + self.beta2 * x2))

    def reconstruct(self) -> np.ndarray:
        """The original table, i.e. mixture times exp(log_scale)."""
        return self.mixture_table() * math.exp(self.log_scale)

    def component_log_table(self) -> np.ndarray:
        """log of each component's table, shape (2, 2, 2); excludes the h/alpha part."""
        x1 = np.array([[0.0], [1.0]])
        x2 = np.array([[0.0, 1.0]])
        out = np.zeros((2, 2, 2))
        out[1] = self.q + self.beta1 * x1 + self.beta2 * x2
        return out


def dual_params(B, C) -> DualFactor:
    """Dual parameters of the factorization P = B C^T (both strictly positive)."""
    B = _check_2x2_positive(B, "B")
    C = _check_2x2_positive(C, "C")
    return DualFactor(
        alpha1=math.log(B[1, 0] / B[0, 0]),
        alpha2=math.log(C[1, 0] / C[0, 0]),
        q=math.log(B[0, 1] * C[0, 1] / (B[0, 0] * C[0, 0])),
        beta1=math.log(B[1, 1] * B[0, 0] / (B[0, 1] * B[1, 0])),
        beta2=math.log(C[1, 1] * C[0, 0] / (C[0, 1] * C[1, 0])),
        log_scale=math.log(B[0, 0] * C[0, 0]),
    )


@dataclass(frozen=True)
class MixtureComponent:
    """One mixture term: weight * (left x right), or weight * identity if bond."""

    weight: float
    left: np.ndarray | None = None   # nonnegative, len card(u); None for bonds
    right: np.ndarray | None = None  # nonnegative, len card(v); None for bonds
    bond: bool = False

    def value(self, a: int, b: int) -> float:
        if self.bond:
            return self.weight if a == b else 0.0
        return self.weight * float(self.left[a] * self.right[b])


@dataclass
class RankOneMixture:
    """A factor table written as a sum of rank-1 and equality-bond components."""

    components: list[MixtureComponent]
    shape: tuple[int, int]

    def __post_init__(self):
        for k, c in enumerate(self.components):
            if not c.weight > 0:
                raise ValueError(f"component {k}: weight must be > 0")
            if c.bond:
                if self.shape[0] != self.shape[1]:
                    raise ValueError("bond components need equal cardinalities")
                continue
            left = np.asarray(c.left, dtype=np.float64)
            right = np.asarray(c.right, dtype=np.float64)
            if left.shape != (self.shape[0],) or right.shape != (self.shape[1],):
                raise ValueError(f"component {k}: vector lengths do not match shape {self.shape}")
            if np.any(left < 0) or np.any(right < 0):
                raise ValueError(f"component {k}: vectors must be nonnegative")
            if not np.any(left > 0) or not np.any(right > 0):
                raise ValueError(f"component {k}: vectors must have a nonzero entry")
            object.__setattr__(c, "left", left)
            object.__setattr__(c, "right", right)

    @property
    def dual_cardinality(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def log_scale(self) -> float:
        return 0.0  # mixtures reconstruct the table exactly

    def table(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for c in self.components:
            if c.bond:
                out += c.weight * np.eye(self.shape[0])
            else:
                out += c.weight * np.outer(c.left, c.right)
        return out

    def component_log_table(self) -> np.ndarray:
        """log of each component's table, shape (K, cu, cv); -inf where zero."""
        out = np.empty((len(self.components), *self.shape))
        with np.errstate(divide="ignore"):
            for k, c in enumerate(self.components):
                if c.bond:
                    tab = c.weight * np.eye(self.shape[0])
                else:
                    tab = c.weight * np.outer(c.left, c.right)
                out[k] = np.log(tab)
        return out


def sw_decompose(w: float, n_states: int = 2, representation: str = "bond") -> RankOneMixture:
    """Decompose the coupling table exp(-w * [x != y]) into bond mixtures.

    representation="bond" gives two components: an all-ones independence
    term with weight e^-w and an equality bond with weight 1 - e^-w (the
    Swendsen-Wang split).  representation="rank1" expands the bond into one
    indicator component per shared state, so every component is rank-1 and
    the dual variable has 1 + n_states values.
    """
    if not w > 0:
        raise ValueError("coupling w must be > 0")
    if n_states < 2:
        raise ValueError("n_states must be >= 2")
    g0 = math.exp(-w)
    g1 = 1.0 - g0
    ones_l = np.ones(n_states)
    free = MixtureComponent(g0, ones_l, ones_l.copy())
    if representation == "bond":
        comps = [free, MixtureComponent(g1, bond=True)]
    elif representation == "rank1":
        comps = [free]
        for k in range(n_states):
            e = np.zeros(n_states)
            e[k] = 1.0
            comps.append(MixtureComponent(g1, e, e.copy()))
    else:
        raise ValueError(f"unknown representation {representation!r}")
    return RankOneMixture(comps, (n_states, n_states))


def higdon_decompose(w: float, alpha: float | None = None) -> RankOneMixture:
    """Partial bond decomposition of the binary table exp(-w * [x != y]).

    Splits the table into [[1-alpha, e^-w], [e^-w, 1-alpha]] plus an
    equality bond of weight alpha, then factorizes the first term into two
    rank-1 components so every cluster can be updated independently.  The
    dual variable has three states.  Feasibility needs 0 < alpha and
    e^-w <= 1 - alpha; alpha defaults to half the bond mass (1 - e^-w)/2.
    """
    if not w > 0:
        raise ValueError("coupling w must be > 0")
    ew = math.exp(-w)
    if alpha is None:
        alpha = 0.5 * (1.0 - ew)
    if not (0.0 < alpha) or ew > (1.0 - alpha) * (1.0 + 1e-12):
        raise ValueError(f"alpha={alpha} infeasible: need 0 < alpha <= 1 - e^-w = {1.0 - ew}")
    first = np.array([[1.0 - alpha, ew], [ew, 1.0 - alpha]])
    B, C = factorize_positive(first)
    comps = [
        MixtureComponent(1.0, B[:, 0].copy(), C[:, 0].copy()),
        MixtureComponent(1.0, B[:, 1].copy(), C[:, 1].copy()),
        MixtureComponent(float(alpha), bond=True),
    ]
    return RankOneMixture(comps, (2, 2))


def entrywise_mixture(table) -> RankOneMixture:
    """Trivial mixture with one indicator component per table entry."""
    table = np.asarray(table, dtype=np.float64)
    cu, cv = table.shape
    comps = []
    for a in range(cu):
        for b in range(cv):
            if table[a, b] <= 0:
                raise ValueError("entrywise mixture requires positive entries")
            ea = np.zeros(cu)
            ea[a] = 1.0
            eb = np.zeros(cv)
            eb[b] = 1.0
            comps.append(MixtureComponent(float(table[a, b]), ea, eb))
    return RankOneMixture(comps, (cu, cv))


def sw_form_coupling(table: np.ndarray) -> tuple[float, float] | None:
    """If ``table`` = d * exp(-w [x != y]) with w >= 0, return (w, d); else None."""
    table = np.asarray(table, dtype=np.float64)
    if table.shape[0] != table.shape[1]:
        return None
    d = float(table[0, 0])
    diag = np.diag(table)
    off = table[~np.eye(table.shape[0], dtype=bool)]
    if d <= 0 or off.size == 0:
        return None
    o = float(off[0])
    tol = 1e-12 * max(d, o)
    if np.any(np.abs(diag - d) > tol) or np.any(np.abs(off - o) > tol):
        return None
    if o > d + tol or o <= 0:
        return None
    return math.log(d / o), d


def _scaled(mix: RankOneMixture, c: float) -> RankOneMixture:
    comps = [
        MixtureComponent(m.weight * c, None if m.bond else m.left.copy(),
                         None if m.bond else m.right.copy(), m.bond)
        for m in mix.components
    ]
    return RankOneMixture(comps, mix.shape)


class DualModel:
    """A model plus one dual (mixture-indicator) variable per factor.

    The joint distribution is

        p(x, theta)  propto  h(x) * prod_i [ g_i(theta_i) * comp_i(theta_i)(x_u, x_v) ]

    where h collects the variable unaries and the alpha terms absorbed from
    the pairwise duals, so that conditioning on theta leaves a pure
    per-variable product over x.  ``log_const`` is the log of the single
    constant relating the theta-marginalized mixture back to the primal
    unnormalized mass.  Dual state vectors are aligned with
    :meth:`factor_order` (insertion order of the base model's factors).
    """

    def __init__(self, base: Model):
        self.base = base
        self.duals: dict[int, DualFactor | RankOneMixture] = {}
        self.unary_eff: list[np.ndarray] = [v.unary.copy() for v in base.variables]
        self._packed = None

    # -- construction ------------------------------------------------------

    def set_dual(self, fid: int, dual: DualFactor | RankOneMixture) -> None:
        """Attach (or replace) the dual representation of one factor."""
        f = self.base.factors[fid]
        shape = f.table.shape
        if isinstance(dual, DualFactor):
            if shape != (2, 2):
                raise ValueError("pair duals require a 2x2 factor")
            recon = dual.reconstruct()
        else:
            if dual.shape != shape:
                raise ValueError(f"mixture shape {dual.shape} != factor shape {shape}")
            recon = dual.table()
        err = np.max(np.abs(recon - f.table)) / np.max(f.table)
        if err > 1e-8:
            raise ValueError(f"dual of factor {fid} does not reconstruct its table (rel err {err:.2e})")
        if fid in self.duals:
            self._unabsorb(fid)
        self.duals[fid] = dual
        self._absorb(fid)
        self._packed = None

    def _absorb(self, fid: int) -> None:
        d = self.duals[fid]
        if isinstance(d, DualFactor):
            f = self.base.factors[fid]
            self.unary_eff[f.u] = self.unary_eff[f.u] + np.array([0.0, d.alpha1])
            self.unary_eff[f.v] = self.unary_eff[f.v] + np.array([0.0, d.alpha2])

    def _unabsorb(self, fid: int) -> None:
        d = self.duals[fid]
        if isinstance(d, DualFactor):
            f = self.base.factors[fid]
            self.unary_eff[f.u] = self.unary_eff[f.u] - np.array([0.0, d.alpha1])
            self.unary_eff[f.v] = self.unary_eff[f.v] - np.array([0.0, d.alpha2])

    def add_factor(self, scope, table, method: str = "factorize") -> int:
        """Add a factor to the base model and dualize only it (local cost)."""
        fid = self.base.add_factor(scope, table)
        try:
            self.set_dual(fid, _dualize_table(self.base.factors[fid].table, method))
        except ValueError as exc:
            self.base.remove_factor(fid)
            raise ValueError(f"factor {fid}: {exc}") from exc
        return fid

    def remove_factor(self, fid: int) -> None:
        self._unabsorb(fid)
        del self.duals[fid]
        self.base.remove_factor(fid)
        self._packed = None

    # -- queries -----------------------------------------------------------

    def factor_order(self) -> list[int]:
        return list(self.base.factors.keys())

    def dual_cardinalities(self) -> np.ndarray:
        return np.array([self.duals[fid].dual_cardinality for fid in self.factor_order()], dtype=np.int64)

    @property
    def log_const(self) -> float:
        return self.base.log_offset + sum(d.log_scale for d in self.duals.values())

    def component_log_table(self, fid: int) -> np.ndarray:
        """Per-dual-state log table of g_i(theta) * comp_i(theta)(x_u, x_v)."""
        return self.duals[fid].component_log_table()

    def h_log(self, states: np.ndarray) -> np.ndarray:
        """log h for each row of ``states``: effective unaries, no factor terms."""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        lp = np.zeros(states.shape[0])
        for v in range(self.base.n_vars):
            lp += self.unary_eff[v][states[:, v]]
        return lp

    def has_bonds(self) -> bool:
        return any(
            isinstance(d, RankOneMixture) and any(c.bond for c in d.components)
            for d in self.duals.values()
        )

    def packed(self):
        if self._packed is None:
            from ._packed import pack_dual
            self._packed = pack_dual(self)
        return self._packed


def _dualize_table(table: np.ndarray, method: str):
    if method == "sw":
        form = sw_form_coupling(table)
        if form is None:
            raise ValueError("factor is not of equal-diagonal Ising/Potts form")
        w, d = form
        if w <= 0:
            raise ValueError("bond decomposition needs strictly attractive coupling (w > 0)")
        return _scaled(sw_decompose(w, table.shape[0], representation="bond"), d)
    if method != "factorize":
        raise ValueError(f"unknown dualization method {method!r}")
    if table.shape == (2, 2):
        return dual_params(*factorize_positive(table))
    form = sw_form_coupling(table)
    if form is not None and form[0] > 0:
        w, d = form
        return _scaled(sw_decompose(w, table.shape[0], representation="rank1"), d)
    return entrywise_mixture(table)


def dualize_model(model: Model, method: str = "factorize") -> DualModel:
    """Construct the dual model with one auxiliary variable per factor.

    method="factorize" puts every 2x2 factor through the positive
    factorization pipeline, equal-diagonal multi-state (Potts) factors
    through the rank-1 bond expansion, and anything else through the
    entrywise mixture.  method="sw" uses the two-component bond
    decomposition for every factor and requires all of them to be of
    Ising/Potts form with attractive coupling.
    """
    dm = DualModel(model)
    for fid in model.factors:
        try:
            dm.set_dual(fid, _dualize_table(model.factors[fid].table, method))
        except ValueError as exc:
            raise ValueError(f"factor {fid}: {exc}") from exc
    return dm


def build_dual_model(model: Model, duals: dict[int, DualFactor | RankOneMixture]) -> DualModel:
    """Dual model from explicitly supplied per-factor representations."""
    if set(duals) != set(model.factors):
        raise ValueError("duals must cover exactly the model's factor ids")
    dm = DualModel(model)
    for fid, d in duals.items():
        dm.set_dual(fid, d)
    return dm


# ---------------------------------------------------------------------------
# serialization: the base-model text format plus a `dual` section
#
#   dual <fid> pair <alpha1> <alpha2> <q> <beta1> <beta2> <log_scale>
#   dual <fid> mix <n_components>
#   comp <weight> bond
#   comp <weight> rank1 <left entries> <right entries>
# ---------------------------------------------------------------------------


def dual_model_to_text(dm: DualModel) -> str:
    from .model import model_to_text

    lines = [model_to_text(dm.base).rstrip("\n")]
    for fid in sorted(dm.duals):
        d = dm.duals[fid]
        if isinstance(d, DualFactor):
            vals = " ".join(repr(float(p)) for p in (d.alpha1, d.alpha2, d.q, d.beta1, d.beta2, d.log_scale))
            lines.append(f"dual {fid} pair {vals}")
        else:
            lines.append(f"dual {fid} mix {len(d.components)}")
            for c in d.components:
                if c.bond:
                    lines.append(f"comp {c.weight!r} bond")
                else:
                    vec = " ".join(repr(float(x)) for x in list(c.left) + list(c.right))
                    lines.append(f"comp {c.weight!r} rank1 {vec}")
    return "\n".join(lines) + "\n"


def dual_model_from_text(text: str) -> DualModel:
    from .model import ModelFormatError, model_from_text

    model_lines = []
    dual_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith(("dual ", "comp ")):
            dual_lines.append((lineno, stripped))
        else:
            model_lines.append(raw)
    model = model_from_text("\n".join(model_lines))
    dm = DualModel(model)
    i = 0
    while i < len(dual_lines):
        lineno, line = dual_lines[i]
        parts = line.split()
        try:
            if parts[0] != "dual":
                raise ValueError("component line outside a mixture block")
            fid = int(parts[1])
            if parts[2] == "pair":
                a1, a2, q, b1, b2, ls = (float(p) for p in parts[3:9])
                dm.set_dual(fid, DualFactor(a1, a2, q, b1, b2, ls))
                i += 1
            elif parts[2] == "mix":
                k = int(parts[3])
                cu, cv = model.factors[fid].table.shape
                comps = []
                for j in range(k):
                    lineno_c, cline = dual_lines[i + 1 + j]
                    cparts = cline.split()
                    if cparts[0] != "comp":
                        raise ValueError(f"expected comp line, got {cparts[0]!r}")
                    w = float(cparts[1])
                    if cparts[2] == "bond":
                        comps.append(MixtureComponent(w, bond=True))
                    elif cparts[2] == "rank1":
                        vals = np.array([float(p) for p in cparts[3:]])
                        if vals.size != cu + cv:
                            raise ValueError(f"expected {cu + cv} vector entries, got {vals.size}")
                        comps.append(MixtureComponent(w, vals[:cu], vals[cu:]))
                    else:
                        raise ValueError(f"unknown component kind {cparts[2]!r}")
                dm.set_dual(fid, RankOneMixture(comps, (cu, cv)))
                i += 1 + k
            else:
                raise ValueError(f"unknown dual kind {parts[2]!r}")
        except ModelFormatError:
            raise
        except (ValueError, IndexError, KeyError) as exc:
            raise ModelFormatError(f"line {lineno}: {exc}") from exc
    missing = set(model.factors) - set(dm.duals)
    if missing:
        raise ModelFormatError(f"missing dual section for factors {sorted(missing)}")
    return dm


def save_dual_model(dm: DualModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(dual_model_to_text(dm))


def load_dual_model(path) -> DualModel:
    with open(path) as fh:
        return dual_model_from_text(fh.read())
