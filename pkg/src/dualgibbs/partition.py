"""Transforms of the augmented model and the log-partition estimator.

For a dual pair the quantity V(x, theta) = G(x) H(theta) e^{-<s(x),r(theta)>}
is an unbiased estimator of the partition function under the joint
distribution; the running mean of log V is a lower-bound estimate of log Z
whose gap is exactly the mutual information between x and theta.  All
transforms are computed in the log domain (Z itself overflows doubles
beyond a few dozen variables).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .duality import DualModel
from .oracle import exact_dual_joint
from .sampling import run_blocked, run_pd, run_sw

__all__ = [
    "LogZEstimate",
    "MutualInformationCheck",
    "big_G",
    "big_H",
    "log_V",
    "estimate_logZ_lower",
    "enumerated_log_v_mean",
    "mutual_information_check",
]


@dataclass
class LogZEstimate:
    mean_logV: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be >= 0")


@dataclass
class MutualInformationCheck:
    mutual_information: float        # I(x, theta), exact
    expected_kl: float               # E_theta KL(p(x|theta), p(x)), exact
    min_primal_kl: float             # best found min_xi KL(p(x|xi), p(x))


def _buffers(pd):
    n = pd.pm.n
    parent = np.empty(n, dtype=np.int64)
    csize = np.empty(n, dtype=np.int64)
    minid = np.empty(n, dtype=np.int64)
    logits = np.empty((n, pd.pm.Kmax))
    return parent, csize, minid, logits


def big_G(dual_model: DualModel, x) -> float:
    """log G(x): factor-wise log-sum over dual states of g * component value."""
    pd = dual_model.packed()
    x = dual_model.base.validate_state(x)
    return float(K._big_g(x, pd.pm.fu, pd.pm.fv, pd.comp_ptr, pd.comp_logg,
                          pd.comp_bond, pd.comp_logl, pd.comp_logr))


def big_H(dual_model: DualModel, theta) -> float:
    """log H(theta): sum over x of h(x) e^{<s(x), r(theta)>}.

    Without bond components this factorizes over variables; active bonds
    merge variables into clusters (union-find) that share one state sum.
    On zero-unary binary models this is C(theta) * log 2 with C the number
    of clusters.
    """
    pd = dual_model.packed()
    theta = np.asarray(theta, dtype=np.int64)
    if theta.shape != (pd.pm.F,):
        raise ValueError(f"dual state length {theta.shape} != ({pd.pm.F},)")
    if np.any(theta < 0) or np.any(theta >= pd.dual_card):
        raise ValueError("dual state out of range")
    parent, csize, minid, logits = _buffers(pd)
    return float(K._big_h(theta, pd.pm.card, pd.unary_eff, pd.pm.fu, pd.pm.fv,
                          pd.comp_ptr, pd.comp_bond, pd.comp_logl, pd.comp_logr,
                          parent, csize, minid, logits))


def log_V(dual_model: DualModel, x, theta) -> float:
    """log V(x, theta) = log G(x) + log H(theta) - <s(x), r(theta)>.

    The per-factor reconstruction constants are folded in, so under the
    joint distribution E[exp(log V)] equals the primal partition function.
    """
    pd = dual_model.packed()
    x = dual_model.base.validate_state(x)
    theta = np.asarray(theta, dtype=np.int64)
    parent, csize, minid, logits = _buffers(pd)
    return float(K._log_v(x, theta, pd.pm.card, pd.unary_eff, pd.pm.fu, pd.pm.fv,
                          pd.comp_ptr, pd.comp_logg, pd.comp_bond, pd.comp_logl,
                          pd.comp_logr, pd.log_const, parent, csize, minid, logits))


def batch_means_stderr(values: np.ndarray) -> float:
    """Standard error via batch means with batch size ~ sqrt(T)."""
    t = len(values)
    if t < 4:
        return 0.0
    bs = max(int(math.sqrt(t)), 1)
    nb = t // bs
    means = values[: nb * bs].reshape(nb, bs).mean(axis=1)
    if nb < 2:
        return 0.0
    return float(np.std(means, ddof=1) / math.sqrt(nb))


_SAMPLERS = {"pd": run_pd, "blocked": run_blocked, "sw": run_sw}


def estimate_logZ_lower(dual_model: DualModel, sampler: str = "pd", n_sweeps: int = 10000,
                        seed: int = 0, burn_in: int | None = None) -> LogZEstimate:
    """Lower-bound estimate of the primal log-partition function.

    Runs the requested joint sampler and averages log V over post-burn-in
    sweeps.  The estimate is biased low by the mutual information between
    x and theta; the reported uncertainty is a batch-means standard error.
    """
    if sampler not in _SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}; choose from {sorted(_SAMPLERS)}")
    run = _SAMPLERS[sampler](dual_model, n_sweeps, seed, burn_in=burn_in,
                             collect_counts=False, record_log_v=True)
    vals = run.log_v[run.burn_in:]
    return LogZEstimate(float(np.mean(vals)), batch_means_stderr(vals), len(vals))


def enumerated_log_v_mean(dual_model: DualModel, cap: int = 1 << 22) -> float:
    """Exact E[log V] under the joint distribution, by enumeration."""
    summ = exact_dual_joint(dual_model, cap)
    pd = dual_model.packed()
    parent, csize, minid, logits = _buffers(pd)
    total = 0.0
    p = np.exp(summ.log_joint - summ.log_Z)
    for i, x in enumerate(summ.x_states):
        for j, th in enumerate(summ.theta_states):
            if p[i, j] <= 0.0:
                continue
            lv = K._log_v(x, th, pd.pm.card, pd.unary_eff, pd.pm.fu, pd.pm.fv,
                          pd.comp_ptr, pd.comp_logg, pd.comp_bond, pd.comp_logl,
                          pd.comp_logr, pd.log_const, parent, csize, minid, logits)
            total += p[i, j] * lv
    return total


def mutual_information_check(dual_model: DualModel, restarts: int = 10, seed: int = 0,
                             cap: int = 1 << 22) -> MutualInformationCheck:
    """Exact I(x, theta) and E_theta KL(p(x|theta), p(x)), plus a best-effort
    coordinate-descent minimization of KL(p(x|xi), p(x)) over the factorized
    family; the first two agree identically and upper-bound the third."""
    from .variational import cavi_mean_field

    summ = exact_dual_joint(dual_model, cap)
    best = math.inf
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    for r in range(restarts):
        init = None
        if r > 0:
            init = [rng.dirichlet(np.ones(v.cardinality)) for v in dual_model.base.variables]
        _, kl = cavi_mean_field(dual_model.base, init=init, return_kl=True)
        best = min(best, kl)
    return MutualInformationCheck(summ.mutual_information, summ.expected_kl_x_given_theta, best)
