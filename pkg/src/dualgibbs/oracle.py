"""Brute-force exact inference on small models.

Everything here enumerates the full state space (optionally the joint
primal/dual space) in the log domain, and is meant as the ground truth for
probabilistic tests.  Size caps are hard preconditions: exceeding them
raises instead of silently grinding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import Model

__all__ = [
    "ExactSummary",
    "DualJointSummary",
    "enumerate_states",
    "state_logps",
    "exact_logZ",
    "exact_summary",
    "exact_map",
    "exact_dual_joint",
    "SizeCapError",
]

DEFAULT_STATE_CAP = 1 << 22


class SizeCapError(ValueError):
    """Joint state space too large to enumerate."""


@dataclass
class ExactSummary:
    log_Z: float
    marginals: list[np.ndarray]          # per-variable probability vectors
    pairwise: dict[int, np.ndarray]      # factor id -> joint table over its scope
    states: np.ndarray | None = None     # enumerated states, shape (S, n)
    joint: np.ndarray | None = None      # normalized joint, shape (S,)


@dataclass
class DualJointSummary:
    log_Z: float                 # of the joint, in primal units (factorization constants included)
    p_x: np.ndarray              # marginal over enumerated x states
    p_theta: np.ndarray          # marginal over enumerated dual states
    log_joint: np.ndarray        # unnormalized log p(x, theta), shape (S_x, S_theta)
    x_states: np.ndarray
    theta_states: np.ndarray
    mutual_information: float
    expected_kl_x_given_theta: float


def _check_cap(size: int, cap: int) -> None:
    if size > cap:
        raise SizeCapError(f"state space of size {size} exceeds cap {cap}")


def enumerate_states(cards: np.ndarray, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """All joint states in lexicographic order (variable 0 most significant)."""
    cards = np.asarray(cards, dtype=np.int64)
    total = int(np.prod(cards)) if cards.size else 1
    _check_cap(total, cap)
    if cards.size == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.meshgrid(*[np.arange(c) for c in cards], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def state_logps(model: Model, states: np.ndarray) -> np.ndarray:
    """Unnormalized log-mass of each row of ``states``, vectorized."""
    lp = np.full(states.shape[0], model.log_offset, dtype=np.float64)
    for v, var in enumerate(model.variables):
        lp += var.unary[states[:, v]]
    for f in model.factors.values():
        lp += np.log(f.table[states[:, f.u], states[:, f.v]])
    return lp


def exact_logZ(model: Model, cap: int = DEFAULT_STATE_CAP) -> float:
    states = enumerate_states(model.cardinalities(), cap)
    return float(logsumexp(state_logps(model, states)))


def exact_summary(model: Model, cap: int = DEFAULT_STATE_CAP, keep_joint: bool = False) -> ExactSummary:
    states = enumerate_states(model.cardinalities(), cap)
    lp = state_logps(model, states)
    log_Z = float(logsumexp(lp))
    p = np.exp(lp - log_Z)
    marginals = []
    for v, var in enumerate(model.variables):
        marg = np.zeros(var.cardinality)
        np.add.at(marg, states[:, v], p)
        marginals.append(marg)
    pairwise = {}
    for fid, f in model.factors.items():
        cu = model.variables[f.u].cardinality
        cv = model.variables[f.v].cardinality
        tab = np.zeros((cu, cv))
        np.add.at(tab, (states[:, f.u], states[:, f.v]), p)
        pairwise[fid] = tab
    return ExactSummary(
        log_Z=log_Z,
        marginals=marginals,
        pairwise=pairwise,
        states=states if keep_joint else None,
        joint=p if keep_joint else None,
    )


def exact_map(model: Model, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """Highest-energy state; ties resolve to the lexicographically smallest."""
    states = enumerate_states(model.cardinalities(), cap)
    lp = state_logps(model, states)
    return states[int(np.argmax(lp))].copy()


def exact_dual_joint(dual_model, cap: int = DEFAULT_STATE_CAP) -> DualJointSummary:
    """Enumerate the augmented joint p(x, theta) of a dual model.

    The returned ``log_joint`` includes the per-factor reconstruction
    constants, so summing out theta reproduces the primal unnormalized
    mass exactly and ``log_Z`` matches :func:`exact_logZ` of the base model.
    """
    base = dual_model.base
    x_states = enumerate_states(base.cardinalities(), cap)
    dual_cards = dual_model.dual_cardinalities()
    theta_states = enumerate_states(dual_cards, cap)
    _check_cap(x_states.shape[0] * max(theta_states.shape[0], 1), cap)

    n_x = x_states.shape[0]
    n_t = theta_states.shape[0]
    lp = np.zeros((n_x, n_t), dtype=np.float64)
    lp += (dual_model.h_log(x_states) + dual_model.log_const)[:, None]
    with np.errstate(divide="ignore"):
        for pos, fid in enumerate(dual_model.factor_order()):
            f = base.factors[fid]
            # component value at (x_u, x_v) for each dual state of this factor
            vals = dual_model.component_log_table(fid)  # (dual_card, cu, cv)
            contrib = vals[theta_states[:, pos][None, :], x_states[:, f.u][:, None], x_states[:, f.v][:, None]]
            lp += contrib
    log_Z = float(logsumexp(lp))
    p = np.exp(lp - log_Z)
    p_x = p.sum(axis=1)
    p_t = p.sum(axis=0)

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log(p) - np.log(p_x)[:, None] - np.log(p_t)[None, :]
    mi = float(np.sum(np.where(p > 0, p * ratio, 0.0)))

    # E_theta KL(p(x|theta) || p(x)) accumulated column by column
    e_kl = 0.0
    for j in range(n_t):
        if p_t[j] <= 0:
            continue
        cond = p[:, j] / p_t[j]
        mask = cond > 0
        e_kl += p_t[j] * float(np.sum(cond[mask] * (np.log(cond[mask]) - np.log(p_x[mask]))))

    return DualJointSummary(
        log_Z=log_Z,
        p_x=p_x,
        p_theta=p_t,
        log_joint=lp,
        x_states=x_states,
        theta_states=theta_states,
        mutual_information=mi,
        expected_kl_x_given_theta=e_kl,
    )
