"""Flat array views of models and dual models for the compiled kernels.

Variables are padded to the maximum cardinality; every kernel loop is
bounded by the true per-variable cardinality so padding is never read.
Factor positions follow the insertion order of the model's factor dict,
which is also the alignment of dual state vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PackedModel", "PackedDual", "pack_model", "pack_dual"]


@dataclass
class PackedModel:
    n: int
    F: int
    Kmax: int
    card: np.ndarray        # (n,) int64
    unary: np.ndarray       # (n, Kmax) float64
    fu: np.ndarray          # (F,) int64
    fv: np.ndarray          # (F,) int64
    log_table: np.ndarray   # (F, Kmax, Kmax) float64
    adj_ptr: np.ndarray     # (n+1,) int64
    adj_fac: np.ndarray     # (2F,) int64, kernel-local factor positions
    adj_side: np.ndarray    # (2F,) int8, 0 if the variable is the row (u) side
    log_offset: float
    factor_ids: list        # position -> model factor id


@dataclass
class PackedDual:
    pm: PackedModel
    unary_eff: np.ndarray   # (n, Kmax) float64, unaries with absorbed alpha terms
    comp_ptr: np.ndarray    # (F+1,) int64
    comp_logg: np.ndarray   # (C,) float64
    comp_bond: np.ndarray   # (C,) uint8
    comp_logl: np.ndarray   # (C, Kmax) float64
    comp_logr: np.ndarray   # (C, Kmax) float64
    alpha_u: np.ndarray     # (F, Kmax) float64, per-factor h-part on the u endpoint
    alpha_v: np.ndarray     # (F, Kmax) float64, same for the v endpoint
    dual_card: np.ndarray   # (F,) int64
    log_const: float
    has_bond: bool


def pack_model(model) -> PackedModel:
    n = model.n_vars
    card = model.cardinalities()
    Kmax = int(card.max()) if n else 2
    unary = np.full((n, Kmax), -np.inf)
    for v, var in enumerate(model.variables):
        unary[v, : var.cardinality] = var.unary
    factor_ids = list(model.factors.keys())
    F = len(factor_ids)
    fu = np.zeros(F, dtype=np.int64)
    fv = np.zeros(F, dtype=np.int64)
    log_table = np.full((F, Kmax, Kmax), -np.inf)
    pos = {fid: i for i, fid in enumerate(factor_ids)}
    for i, fid in enumerate(factor_ids):
        f = model.factors[fid]
        fu[i], fv[i] = f.u, f.v
        cu, cv = f.table.shape
        log_table[i, :cu, :cv] = np.log(f.table)
    adj_ptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(F):
        adj_ptr[fu[i] + 1] += 1
        adj_ptr[fv[i] + 1] += 1
    adj_ptr = np.cumsum(adj_ptr)
    adj_fac = np.zeros(2 * F, dtype=np.int64)
    adj_side = np.zeros(2 * F, dtype=np.int8)
    fill = adj_ptr[:-1].copy()
    for v in range(n):
        for fid in model.adjacency[v]:
            i = pos[fid]
            adj_fac[fill[v]] = i
            adj_side[fill[v]] = 0 if model.factors[fid].u == v else 1
            fill[v] += 1
    return PackedModel(
        n=n, F=F, Kmax=Kmax, card=card, unary=unary, fu=fu, fv=fv,
        log_table=log_table, adj_ptr=adj_ptr, adj_fac=adj_fac,
        adj_side=adj_side, log_offset=float(model.log_offset),
        factor_ids=factor_ids,
    )


def pack_dual(dual_model) -> PackedDual:
    from .duality import DualFactor

    pm = pack_model(dual_model.base)
    n, F, Kmax = pm.n, pm.F, pm.Kmax
    unary_eff = np.full((n, Kmax), -np.inf)
    for v in range(n):
        u = dual_model.unary_eff[v]
        unary_eff[v, : len(u)] = u

    dual_card = np.zeros(F, dtype=np.int64)
    for i, fid in enumerate(pm.factor_ids):
        dual_card[i] = dual_model.duals[fid].dual_cardinality
    comp_ptr = np.zeros(F + 1, dtype=np.int64)
    comp_ptr[1:] = np.cumsum(dual_card)
    C = int(comp_ptr[-1])
    comp_logg = np.zeros(C)
    comp_bond = np.zeros(C, dtype=np.uint8)
    comp_logl = np.zeros((C, Kmax))
    comp_logr = np.zeros((C, Kmax))
    alpha_u = np.zeros((F, Kmax))
    alpha_v = np.zeros((F, Kmax))
    has_bond = False
    with np.errstate(divide="ignore"):
        for i, fid in enumerate(pm.factor_ids):
            d = dual_model.duals[fid]
            base = comp_ptr[i]
            if isinstance(d, DualFactor):
                comp_logg[base] = 0.0
                comp_logg[base + 1] = d.q
                comp_logl[base + 1, 1] = d.beta1
                comp_logr[base + 1, 1] = d.beta2
                alpha_u[i, 1] = d.alpha1
                alpha_v[i, 1] = d.alpha2
            else:
                for k, c in enumerate(d.components):
                    comp_logg[base + k] = np.log(c.weight)
                    if c.bond:
                        comp_bond[base + k] = 1
                        has_bond = True
                    else:
                        comp_logl[base + k, : len(c.left)] = np.log(c.left)
                        comp_logr[base + k, : len(c.right)] = np.log(c.right)
    return PackedDual(
        pm=pm, unary_eff=unary_eff, comp_ptr=comp_ptr, comp_logg=comp_logg,
        comp_bond=comp_bond, comp_logl=comp_logl, comp_logr=comp_logr,
        alpha_u=alpha_u, alpha_v=alpha_v, dual_card=dual_card,
        log_const=float(dual_model.log_const), has_bond=has_bond,
    )
