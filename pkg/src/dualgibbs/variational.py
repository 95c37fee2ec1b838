"""Parallel MAP (EM) and mean-field inference on the dual model.

Both algorithms alternate a fully parallel x-side update with an
expectation over the dual variables, exchanged through one message
scalar per variable:

    MAP:        x   <- argmax_v (unary + xi),   xi <- E[r(theta) | x]
    mean-field: eta <- sigmoid(unary + xi),     xi <- E[r(theta) | eta]

Each half is an exact coordinate update, so the EM energy is monotone
non-decreasing and the joint KL objective monotone non-increasing.  The
tree-blocked variants replace the per-variable x update with exact
max-product / sum-product over a retained forest of factors.

These routines require binary variables whose factors all carry the
five-parameter pair dual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .duality import DualFactor, DualModel
from .model import Model, energy
from .oracle import enumerate_states, exact_dual_joint, state_logps
from .sampling import BlockPartition

__all__ = [
    "MapState",
    "MeanFieldState",
    "em_map_step",
    "mean_field_step",
    "joint_kl_objective",
    "tree_blocked_map_step",
    "tree_blocked_mf_step",
    "run_em_map",
    "run_mean_field",
    "MapResult",
    "MeanFieldResult",
    "cavi_mean_field",
]


@dataclass
class MapState:
    x: np.ndarray    # (n,) int
    xi: np.ndarray   # (n,) float, aggregated dual messages on state 1


@dataclass
class MeanFieldState:
    eta: np.ndarray  # (n,) float in [0, 1], E[x_v]
    xi: np.ndarray   # (n,) float

    def __post_init__(self):
        if np.any(self.eta < 0) or np.any(self.eta > 1):
            raise ValueError("eta entries must lie in [0, 1]")


@dataclass
class MapResult:
    state: MapState
    objectives: list[float]   # log unnormalized mass per iterate
    iterations: int
    converged: bool


@dataclass
class MeanFieldResult:
    state: MeanFieldState
    objectives: list[float]   # joint KL per iterate when recorded, else empty
    iterations: int
    converged: bool
    final_delta: float


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _pair_arrays(dm: DualModel):
    """Flat (ulogit, fu, fv, q, b1, b2, alpha1, alpha2) arrays; pair duals only."""
    for fid, d in dm.duals.items():
        if not isinstance(d, DualFactor):
            raise TypeError(f"factor {fid} does not carry a pair dual; "
                            "MAP/mean-field updates need binary factorized duals")
    pd = dm.packed()
    if np.any(pd.pm.card != 2):
        raise TypeError("MAP/mean-field updates require all-binary variables")
    sel = pd.comp_ptr[:-1] + 1
    ulogit = pd.unary_eff[:, 1] - pd.unary_eff[:, 0]
    return (pd, ulogit, pd.pm.fu, pd.pm.fv, pd.comp_logg[sel],
            pd.comp_logl[sel, 1], pd.comp_logr[sel, 1],
            pd.alpha_u[:, 1], pd.alpha_v[:, 1])


def _xi_from_p1(n, fu, fv, p1, b1, b2, mask=None) -> np.ndarray:
    if mask is not None:
        p1 = p1 * mask
    return (np.bincount(fu, weights=p1 * b1, minlength=n)
            + np.bincount(fv, weights=p1 * b2, minlength=n))


def em_map_step(dual_model: DualModel, state: MapState) -> MapState:
    """One EM step for MAP: parallel per-variable argmax, then dual expectation.

    Argmax ties break toward state 0.  The expectation is
    P(theta_i = 1 | x) = sigmoid(q + b1 x_u + b2 x_v) scattered through
    (b1, b2) onto the factor's endpoints.
    """
    pd, ulogit, fu, fv, q, b1, b2, _, _ = _pair_arrays(dual_model)
    x = (ulogit + state.xi > 0).astype(np.int64)
    p1 = _sigmoid(q + b1 * x[fu] + b2 * x[fv])
    xi = _xi_from_p1(len(x), fu, fv, p1, b1, b2)
    return MapState(x, xi)


def mean_field_step(dual_model: DualModel, state: MeanFieldState,
                    damping: float = 0.0) -> MeanFieldState:
    """One mean-field sweep: eta <- sigmoid(unary + xi) for all variables in
    parallel, then xi <- E[r(theta) | eta].  ``damping`` blends the new eta
    with the old one (0 = undamped)."""
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must be in [0, 1)")
    pd, ulogit, fu, fv, q, b1, b2, _, _ = _pair_arrays(dual_model)
    eta = _sigmoid(ulogit + state.xi)
    if damping > 0.0:
        eta = (1.0 - damping) * eta + damping * state.eta
    p1 = _sigmoid(q + b1 * eta[fu] + b2 * eta[fv])
    xi = _xi_from_p1(len(eta), fu, fv, p1, b1, b2)
    return MeanFieldState(eta, xi)


def joint_kl_objective(dual_model: DualModel, state: MeanFieldState,
                       cap: int = 1 << 20) -> float:
    """KL( p(x|xi) p(theta|eta), p(x, theta) ), exactly, by enumeration.

    This is the Lyapunov function of :func:`mean_field_step`; it upper
    bounds the primal objective KL(p(x|xi), p(x)).
    """
    pd, ulogit, fu, fv, q, b1, b2, _, _ = _pair_arrays(dual_model)
    summ = exact_dual_joint(dual_model, cap)
    px1 = _sigmoid(ulogit + state.xi)
    pt1 = _sigmoid(q + b1 * state.eta[fu] + b2 * state.eta[fv])
    qx = _product_probs(summ.x_states, px1)
    qt = _product_probs(summ.theta_states, pt1)
    log_p = summ.log_joint - summ.log_Z
    ent_x = float(np.sum(np.where(qx > 0, qx * np.log(qx), 0.0)))
    ent_t = float(np.sum(np.where(qt > 0, qt * np.log(qt), 0.0)))
    cross = float(qx @ log_p @ qt)
    return ent_x + ent_t - cross


def primal_kl(model: Model, marginals_p1: np.ndarray, cap: int = 1 << 22) -> float:
    """KL of the factorized distribution with P(x_v=1) = marginals_p1 from p(x)."""
    states = enumerate_states(model.cardinalities(), cap)
    lp = state_logps(model, states)
    from scipy.special import logsumexp
    log_z = logsumexp(lp)
    qx = _product_probs(states, np.asarray(marginals_p1))
    mask = qx > 0
    return float(np.sum(qx[mask] * (np.log(qx[mask]) - (lp[mask] - log_z))))


def _product_probs(states: np.ndarray, p1: np.ndarray) -> np.ndarray:
    probs = np.where(states == 1, p1[None, :], 1.0 - p1[None, :])
    return probs.prod(axis=1)


# ---------------------------------------------------------------------------
# tree-blocked variants
# ---------------------------------------------------------------------------


def _forest_structure(model: Model, retained_ids):
    """BFS orders of the forest induced by the retained factors."""
    n = model.n_vars
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for fid in retained_ids:
        f = model.factors[fid]
        adj[f.u].append((fid, f.v))
        adj[f.v].append((fid, f.u))
    order: list[int] = []
    pvar = np.full(n, -2, dtype=np.int64)
    pfac = np.full(n, -1, dtype=np.int64)
    for root in range(n):
        if pvar[root] != -2:
            continue
        pvar[root] = -1
        queue = [root]
        while queue:
            v = queue.pop(0)
            order.append(v)
            for fid, w in adj[v]:
                if pvar[w] == -2:
                    pvar[w] = v
                    pfac[w] = fid
                    queue.append(w)
    return order, pvar, pfac


def _oriented_log_table(model: Model, fid: int, child: int) -> np.ndarray:
    """Pairwise log table with the child's state as the first axis."""
    f = model.factors[fid]
    t = np.log(f.table)
    return t if f.u == child else t.T


def _tree_effective_logits(dual_model: DualModel, xi: np.ndarray,
                           partition: BlockPartition) -> np.ndarray:
    """Per-variable (n, 2) logits: dual-model unaries plus the dualized
    factors' messages, minus the alpha terms of retained factors."""
    pd, ulogit, fu, fv, q, b1, b2, a1, a2 = _pair_arrays(dual_model)
    n = dual_model.base.n_vars
    logit = ulogit + xi
    pos = {fid: i for i, fid in enumerate(pd.pm.factor_ids)}
    for fid in partition.retained:
        i = pos[fid]
        logit[fu[i]] -= a1[i]
        logit[fv[i]] -= a2[i]
    out = np.zeros((n, 2))
    out[:, 1] = logit
    return out


def _dualized_xi(dual_model: DualModel, values: np.ndarray,
                 partition: BlockPartition) -> np.ndarray:
    """xi <- E[r(theta)|values] restricted to the dualized factors."""
    pd, _, fu, fv, q, b1, b2, _, _ = _pair_arrays(dual_model)
    rset = set(partition.retained)
    mask = np.array([0.0 if fid in rset else 1.0 for fid in pd.pm.factor_ids])
    p1 = _sigmoid(q + b1 * values[fu] + b2 * values[fv])
    return _xi_from_p1(len(values), fu, fv, p1, b1, b2, mask=mask)


def tree_blocked_map_step(dual_model: DualModel, state: MapState,
                          partition: BlockPartition) -> MapState:
    """EM step that maximizes over all x at once by max-product on the forest."""
    model = dual_model.base
    eff = _tree_effective_logits(dual_model, state.xi, partition)
    order, pvar, pfac = _forest_structure(model, partition.retained)
    agg = eff.copy()
    for v in reversed(order):
        p = pvar[v]
        if p < 0:
            continue
        t = _oriented_log_table(model, int(pfac[v]), v)
        agg[p] += np.max(agg[v][:, None] + t, axis=0)
    x = np.zeros(model.n_vars, dtype=np.int64)
    for v in order:
        p = pvar[v]
        if p < 0:
            x[v] = int(np.argmax(agg[v]))
        else:
            t = _oriented_log_table(model, int(pfac[v]), v)
            x[v] = int(np.argmax(agg[v] + t[:, x[p]]))
    xi = _dualized_xi(dual_model, x.astype(np.float64), partition)
    return MapState(x, xi)


def tree_blocked_mf_step(dual_model: DualModel, state: MeanFieldState,
                         partition: BlockPartition) -> MeanFieldState:
    """Mean-field step whose eta update is exact sum-product on the forest."""
    from scipy.special import logsumexp

    model = dual_model.base
    eff = _tree_effective_logits(dual_model, state.xi, partition)
    order, pvar, pfac = _forest_structure(model, partition.retained)
    up = np.zeros((model.n_vars, 2))   # message each variable sends its parent
    agg = eff.copy()
    for v in reversed(order):
        p = pvar[v]
        if p < 0:
            continue
        t = _oriented_log_table(model, int(pfac[v]), v)
        up[v] = logsumexp(agg[v][:, None] + t, axis=0)
        agg[p] += up[v]
    down = np.zeros((model.n_vars, 2))
    for v in order:
        p = pvar[v]
        if p < 0:
            continue
        t = _oriented_log_table(model, int(pfac[v]), v)
        parent_belief = agg[p] + down[p] - up[v]
        down[v] = logsumexp(parent_belief[:, None] + t.T, axis=0)
    belief = agg + down
    belief -= belief.max(axis=1, keepdims=True)
    probs = np.exp(belief)
    eta = probs[:, 1] / probs.sum(axis=1)
    xi = _dualized_xi(dual_model, eta, partition)
    return MeanFieldState(eta, xi)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _initial_map_state(dual_model: DualModel) -> MapState:
    pd, ulogit, fu, fv, q, b1, b2, _, _ = _pair_arrays(dual_model)
    x = (ulogit > 0).astype(np.int64)
    p1 = _sigmoid(q + b1 * x[fu] + b2 * x[fv])
    return MapState(x, _xi_from_p1(len(x), fu, fv, p1, b1, b2))


def run_em_map(dual_model: DualModel, init: MapState | None = None,
               partition: BlockPartition | None = None,
               max_iters: int = 10000) -> MapResult:
    """Iterate EM-MAP until the assignment stops changing."""
    state = init if init is not None else _initial_map_state(dual_model)
    objectives = [energy(dual_model.base, state.x)]
    for it in range(1, max_iters + 1):
        if partition is None:
            new = em_map_step(dual_model, state)
        else:
            new = tree_blocked_map_step(dual_model, state, partition)
        objectives.append(energy(dual_model.base, new.x))
        done = np.array_equal(new.x, state.x) and np.allclose(new.xi, state.xi, atol=1e-12)
        state = new
        if done:
            return MapResult(state, objectives, it, True)
    return MapResult(state, objectives, max_iters, False)


def run_mean_field(dual_model: DualModel, init: MeanFieldState | None = None,
                   partition: BlockPartition | None = None, damping: float = 0.0,
                   tol: float = 1e-8, max_iters: int = 10000,
                   record_objective: bool = False, fine_tune: bool = False) -> MeanFieldResult:
    """Iterate mean-field until the eta update moves less than ``tol`` in
    max-norm.  ``record_objective`` stores the exact joint KL per iterate
    (enumerable models only); ``fine_tune`` follows up with coordinate-ascent
    mean-field on the primal distribution from the reached fixed point."""
    n = dual_model.base.n_vars
    state = init if init is not None else MeanFieldState(np.full(n, 0.5), np.zeros(n))
    objectives: list[float] = []
    if record_objective:
        objectives.append(joint_kl_objective(dual_model, state))
    delta = math.inf
    converged = False
    iterations = 0
    for it in range(1, max_iters + 1):
        if partition is None:
            new = mean_field_step(dual_model, state, damping=damping)
        else:
            new = tree_blocked_mf_step(dual_model, state, partition)
        delta = float(max(np.max(np.abs(new.eta - state.eta), initial=0.0),
                          np.max(np.abs(new.xi - state.xi), initial=0.0)))
        state = new
        iterations = it
        if record_objective:
            objectives.append(joint_kl_objective(dual_model, state))
        if delta < tol:
            converged = True
            break
    if fine_tune:
        qs, _ = cavi_mean_field(dual_model.base,
                                init=[np.array([1.0 - e, e]) for e in state.eta],
                                return_kl=False)
        eta = np.array([qv[1] for qv in qs])
        pd, _, fu, fv, q, b1, b2, _, _ = _pair_arrays(dual_model)
        p1 = _sigmoid(q + b1 * eta[fu] + b2 * eta[fv])
        state = MeanFieldState(eta, _xi_from_p1(n, fu, fv, p1, b1, b2))
    return MeanFieldResult(state, objectives, iterations, converged, delta)


def cavi_mean_field(model: Model, init=None, max_iters: int = 2000,
                    tol: float = 1e-10, return_kl: bool = False):
    """Coordinate-ascent mean-field directly on p(x), for general cardinalities.

    Returns (per-variable probability vectors, KL from p) where the KL is
    computed exactly on enumerable models when requested (else nan).
    """
    n = model.n_vars
    if init is None:
        qs = [np.full(v.cardinality, 1.0 / v.cardinality) for v in model.variables]
    else:
        qs = [np.asarray(qv, dtype=np.float64).copy() for qv in init]
    log_tabs = {fid: np.log(f.table) for fid, f in model.factors.items()}
    for _ in range(max_iters):
        delta = 0.0
        for v in range(n):
            logq = model.variables[v].unary.copy()
            for fid in model.adjacency[v]:
                f = model.factors[fid]
                t = log_tabs[fid]
                if f.u == v:
                    logq += t @ qs[f.v]
                else:
                    logq += qs[f.u] @ t
            logq -= logq.max()
            new = np.exp(logq)
            new /= new.sum()
            delta = max(delta, float(np.max(np.abs(new - qs[v]))))
            qs[v] = new
        if delta < tol:
            break
    if not return_kl:
        return qs, float("nan")
    states = enumerate_states(model.cardinalities())
    lp = state_logps(model, states)
    from scipy.special import logsumexp
    log_z = float(logsumexp(lp))
    qx = np.ones(states.shape[0])
    for v in range(n):
        qx *= qs[v][states[:, v]]
    mask = qx > 0
    kl = float(np.sum(qx[mask] * (np.log(qx[mask]) - (lp[mask] - log_z))))
    return qs, kl
