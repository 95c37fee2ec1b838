"""Compiled inner loops shared by the samplers and the transform evaluators.

All kernels are deterministic functions of their inputs; randomness enters
only through precomputed uniform arrays indexed by (sweep, entity).  Status
codes: 0 ok, 1 a conditional had empty support (violated mixture
invariants), 2 a bond component reached the tree sampler.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(**_JIT)
def _union(parent, csize, minid, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return False
    if csize[ra] < csize[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    csize[ra] += csize[rb]
    if minid[rb] < minid[ra]:
        minid[ra] = minid[rb]
    return True


@njit(**_JIT)
def _sample_cat(logits, K, u):
    """Inverse-CDF draw from unnormalized log weights; -1 if no support."""
    m = -np.inf
    for k in range(K):
        if logits[k] > m:
            m = logits[k]
    if m == -np.inf:
        return -1
    total = 0.0
    for k in range(K):
        total += np.exp(logits[k] - m)
    t = u * total
    acc = 0.0
    for k in range(K):
        acc += np.exp(logits[k] - m)
        if t < acc:
            return k
    return K - 1


@njit(**_JIT)
def _energy(x, unary, fu, fv, log_table, log_offset):
    e = log_offset
    for v in range(x.shape[0]):
        e += unary[v, x[v]]
    for f in range(fu.shape[0]):
        e += log_table[f, x[fu[f]], x[fv[f]]]
    return e


@njit(**_JIT)
def _comp_log_value(c, xu, xv, comp_logg, comp_bond, comp_logl, comp_logr):
    if comp_bond[c] == 1:
        return comp_logg[c] if xu == xv else -np.inf
    return comp_logg[c] + comp_logl[c, xu] + comp_logr[c, xv]


@njit(**_JIT)
def _pd_x_half(x, card, unary_eff, fu, fv, theta,
               comp_ptr, comp_bond, comp_logl, comp_logr,
               ux, parent, csize, minid, logits):
    """Sample all x given theta: per-variable softmax, merged over bond clusters.

    Cluster draws consume the uniform of the cluster's minimum variable id,
    so the result is independent of traversal and worker order.
    """
    n = x.shape[0]
    F = fu.shape[0]
    for v in range(n):
        parent[v] = v
        csize[v] = 1
        minid[v] = v
        for k in range(card[v]):
            logits[v, k] = unary_eff[v, k]
    for f in range(F):
        c = comp_ptr[f] + theta[f]
        if comp_bond[c] == 1:
            _union(parent, csize, minid, fu[f], fv[f])
        else:
            uu = fu[f]
            for k in range(card[uu]):
                logits[uu, k] += comp_logl[c, k]
            vv = fv[f]
            for k in range(card[vv]):
                logits[vv, k] += comp_logr[c, k]
    for v in range(n):
        r = _find(parent, v)
        if r != v:
            for k in range(card[v]):
                logits[r, k] += logits[v, k]
    ok = True
    for v in range(n):
        if parent[v] == v:
            s = _sample_cat(logits[v], card[v], ux[minid[v]])
            if s < 0:
                ok = False
                s = 0
            x[v] = s
    for v in range(n):
        r = _find(parent, v)
        if r != v:
            x[v] = x[r]
    return ok


@njit(**_JIT)
def _pd_theta_half(x, fu, fv, theta,
                   comp_ptr, comp_logg, comp_bond, comp_logl, comp_logr,
                   ut, wbuf):
    """Sample every factor's dual state given x (independent across factors)."""
    ok = True
    for f in range(fu.shape[0]):
        lo = comp_ptr[f]
        K = comp_ptr[f + 1] - lo
        xu = x[fu[f]]
        xv = x[fv[f]]
        for j in range(K):
            wbuf[j] = _comp_log_value(lo + j, xu, xv, comp_logg, comp_bond, comp_logl, comp_logr)
        s = _sample_cat(wbuf, K, ut[f])
        if s < 0:
            ok = False
            s = 0
        theta[f] = s
    return ok


@njit(**_JIT)
def _big_g(x, fu, fv, comp_ptr, comp_logg, comp_bond, comp_logl, comp_logr):
    """log G(x) = sum_f log sum_theta g(theta) * comp(theta)(x_u, x_v)."""
    total = 0.0
    for f in range(fu.shape[0]):
        lo = comp_ptr[f]
        hi = comp_ptr[f + 1]
        xu = x[fu[f]]
        xv = x[fv[f]]
        m = -np.inf
        for c in range(lo, hi):
            lw = _comp_log_value(c, xu, xv, comp_logg, comp_bond, comp_logl, comp_logr)
            if lw > m:
                m = lw
        s = 0.0
        for c in range(lo, hi):
            lw = _comp_log_value(c, xu, xv, comp_logg, comp_bond, comp_logl, comp_logr)
            s += np.exp(lw - m)
        total += m + np.log(s)
    return total


@njit(**_JIT)
def _big_h(theta, card, unary_eff, fu, fv,
           comp_ptr, comp_bond, comp_logl, comp_logr,
           parent, csize, minid, logits):
    """log H(theta) = sum over bond clusters of logsumexp of member logits.

    Without bonds every cluster is a singleton and this reduces to a product
    of per-variable sums.
    """
    n = card.shape[0]
    F = fu.shape[0]
    for v in range(n):
        parent[v] = v
        csize[v] = 1
        minid[v] = v
        for k in range(card[v]):
            logits[v, k] = unary_eff[v, k]
    for f in range(F):
        c = comp_ptr[f] + theta[f]
        if comp_bond[c] == 1:
            _union(parent, csize, minid, fu[f], fv[f])
        else:
            uu = fu[f]
            for k in range(card[uu]):
                logits[uu, k] += comp_logl[c, k]
            vv = fv[f]
            for k in range(card[vv]):
                logits[vv, k] += comp_logr[c, k]
    for v in range(n):
        r = _find(parent, v)
        if r != v:
            for k in range(card[v]):
                logits[r, k] += logits[v, k]
    total = 0.0
    for v in range(n):
        if parent[v] == v:
            m = -np.inf
            for k in range(card[v]):
                if logits[v, k] > m:
                    m = logits[v, k]
            if m == -np.inf:
                return -np.inf
            s = 0.0
            for k in range(card[v]):
                s += np.exp(logits[v, k] - m)
            total += m + np.log(s)
    return total


@njit(**_JIT)
def _inner(x, theta, fu, fv, comp_ptr, comp_bond, comp_logl, comp_logr):
    """<s(x), r(theta)>: log of the selected components' x-dependent parts."""
    s = 0.0
    for f in range(fu.shape[0]):
        c = comp_ptr[f] + theta[f]
        if comp_bond[c] == 1:
            if x[fu[f]] != x[fv[f]]:
                s += -np.inf
        else:
            s += comp_logl[c, x[fu[f]]] + comp_logr[c, x[fv[f]]]
    return s


@njit(**_JIT)
def _log_v(x, theta, card, unary_eff, fu, fv,
           comp_ptr, comp_logg, comp_bond, comp_logl, comp_logr,
           log_const, parent, csize, minid, logits):
    g = _big_g(x, fu, fv, comp_ptr, comp_logg, comp_bond, comp_logl, comp_logr)
    h = _big_h(theta, card, unary_eff, fu, fv, comp_ptr, comp_bond, comp_logl, comp_logr,
               parent, csize, minid, logits)
    ip = _inner(x, theta, fu, fv, comp_ptr, comp_bond, comp_logl, comp_logr)
    return g + h - ip + log_const


@njit(**_JIT)
def seq_block(x, card, unary, fu, fv, log_table, adj_ptr, adj_fac, adj_side,
              u_s, log_offset, energies, site_mode,
              counts, collect_from, var_trace, track_vars):
    """Run one block of sequential Gibbs sweeps, visiting variables in index order.

    ``energies`` holds one entry per sweep, or per single-site update when
    ``site_mode`` is set (length B * n).  Energies are maintained
    incrementally from the conditional logits.
    """
    B = u_s.shape[0]
    n = x.shape[0]
    Kmax = unary.shape[1]
    logits = np.empty(Kmax)
    e = _energy(x, unary, fu, fv, log_table, log_offset)
    for t in range(B):
        for v in range(n):
            K = card[v]
            for k in range(K):
                logits[k] = unary[v, k]
            for idx in range(adj_ptr[v], adj_ptr[v + 1]):
                f = adj_fac[idx]
                if adj_side[idx] == 0:
                    xo = x[fv[f]]
                    for k in range(K):
                        logits[k] += log_table[f, k, xo]
                else:
                    xo = x[fu[f]]
                    for k in range(K):
                        logits[k] += log_table[f, xo, k]
            old = x[v]
            s = _sample_cat(logits, K, u_s[t, v])
            x[v] = s
            e += logits[s] - logits[old]
            if site_mode:
                energies[t * n + v] = e
        if not site_mode:
            energies[t] = e
        if counts.shape[0] > 0 and t >= collect_from:
            for v in range(n):
                counts[v, x[v]] += 1
        if track_vars:
            for v in range(n):
                var_trace[t, v] = x[v]
    return 0


@njit(**_JIT)
def pd_block(x, theta, card, unary, unary_eff, fu, fv, log_table,
             comp_ptr, comp_logg, comp_bond, comp_logl, comp_logr,
             u_x, u_t, theta_first, log_offset, log_const,
             energies, counts, collect_from, var_trace, track_vars,
             logv, record_logv):
    """Run one block of two-block (primal/dual) sweeps.

    Each sweep samples all x given theta and all theta given x; with
    ``theta_first`` the dual half runs first (Swendsen-Wang convention).
    """
    B = u_x.shape[0]
    n = x.shape[0]
    F = fu.shape[0]
    Kmax = unary_eff.shape[1]
    parent = np.empty(n, np.int64)
    csize = np.empty(n, np.int64)
    minid = np.empty(n, np.int64)
    logits = np.empty((n, Kmax))
    maxdc = 1
    for f in range(F):
        dc = comp_ptr[f + 1] - comp_ptr[f]
        if dc > maxdc:
            maxdc = dc
    wbuf = np.empty(maxdc)
    status = 0
    for t in range(B):
        if theta_first:
            if not _pd_theta_half(x, fu, fv, theta, comp_ptr, comp_logg, comp_bond,
                                  comp_logl, comp_logr, u_t[t], wbuf):
                status = 1
            if not _pd_x_half(x, card, unary_eff, fu, fv, theta, comp_ptr, comp_bond,
                              comp_logl, comp_logr, u_x[t], parent, csize, minid, logits):
                status = 1
        else:
            if not _pd_x_half(x, card, unary_eff, fu, fv, theta, comp_ptr, comp_bond,
                              comp_logl, comp_logr, u_x[t], parent, csize, minid, logits):
                status = 1
            if not _pd_theta_half(x, fu, fv, theta, comp_ptr, comp_logg, comp_bond,
                                  comp_logl, comp_logr, u_t[t], wbuf):
                status = 1
        energies[t] = _energy(x, unary, fu, fv, log_table, log_offset)
        if record_logv:
            logv[t] = _log_v(x, theta, card, unary_eff, fu, fv, comp_ptr, comp_logg,
                             comp_bond, comp_logl, comp_logr, log_const,
                             parent, csize, minid, logits)
        if counts.shape[0] > 0 and t >= collect_from:
            for v in range(n):
                counts[v, x[v]] += 1
        if track_vars:
            for v in range(n):
                var_trace[t, v] = x[v]
    return status


@njit(**_JIT)
def kruskal_retain(keys, fu, fv, n, parent, csize, minid, retained):
    """Greedy maximal spanning forest over factors in the order sorted by keys."""
    for v in range(n):
        parent[v] = v
        csize[v] = 1
        minid[v] = v
    order = np.argsort(keys)
    for f in range(retained.shape[0]):
        retained[f] = 0
    count = 0
    for i in range(order.shape[0]):
        f = order[i]
        if _union(parent, csize, minid, fu[f], fv[f]):
            retained[f] = 1
            count += 1
    return count


@njit(**_JIT)
def _build_forest(retained, fu, fv, n, deg, tptr, tadj_f, order, pvar, pfac, pside):
    """BFS structure of the retained forest; roots are minimal ids per tree.

    Returns False if the retained set contains a cycle.
    """
    F = fu.shape[0]
    for v in range(n):
        deg[v] = 0
    n_ret = 0
    for f in range(F):
        if retained[f] == 1:
            deg[fu[f]] += 1
            deg[fv[f]] += 1
            n_ret += 1
    tptr[0] = 0
    for v in range(n):
        tptr[v + 1] = tptr[v] + deg[v]
        deg[v] = tptr[v]
    for f in range(F):
        if retained[f] == 1:
            tadj_f[deg[fu[f]]] = f
            deg[fu[f]] += 1
            tadj_f[deg[fv[f]]] = f
            deg[fv[f]] += 1
    for v in range(n):
        pvar[v] = -2  # unvisited
    pos = 0
    for root in range(n):
        if pvar[root] != -2:
            continue
        pvar[root] = -1
        pfac[root] = -1
        order[pos] = root
        head = pos
        pos += 1
        while head < pos:
            v = order[head]
            head += 1
            for idx in range(tptr[v], tptr[v + 1]):
                f = tadj_f[idx]
                w = fv[f] if fu[f] == v else fu[f]
                if pvar[w] == -2:
                    pvar[w] = v
                    pfac[w] = f
                    pside[w] = 0 if fu[f] == w else 1
                    order[pos] = w
                    pos += 1
    visited_edges = 0
    for v in range(n):
        if pfac[v] >= 0:
            visited_edges += 1
    return visited_edges == n_ret


@njit(**_JIT)
def _forest_exact_sample(x, card, eff, fu, fv, log_table,
                         order, pvar, pfac, pside, agg, ux):
    """Exact joint draw on the forest: upward sum-product, downward sampling."""
    n = x.shape[0]
    Kmax = eff.shape[1]
    msg = np.empty(Kmax)
    for v in range(n):
        for k in range(card[v]):
            agg[v, k] = eff[v, k]
    for i in range(n - 1, -1, -1):
        v = order[i]
        p = pvar[v]
        if p < 0:
            continue
        f = pfac[v]
        for kp in range(card[p]):
            m = -np.inf
            for k in range(card[v]):
                if pside[v] == 0:
                    val = agg[v, k] + log_table[f, k, kp]
                else:
                    val = agg[v, k] + log_table[f, kp, k]
                if val > m:
                    m = val
            s = 0.0
            for k in range(card[v]):
                if pside[v] == 0:
                    val = agg[v, k] + log_table[f, k, kp]
                else:
                    val = agg[v, k] + log_table[f, kp, k]
                s += np.exp(val - m)
            msg[kp] = m + np.log(s) if m > -np.inf else -np.inf
        for kp in range(card[p]):
            agg[p, kp] += msg[kp]
    ok = True
    for i in range(n):
        v = order[i]
        p = pvar[v]
        if p < 0:
            s = _sample_cat(agg[v], card[v], ux[v])
        else:
            f = pfac[v]
            xp = x[p]
            for k in range(card[v]):
                if pside[v] == 0:
                    msg[k] = agg[v, k] + log_table[f, k, xp]
                else:
                    msg[k] = agg[v, k] + log_table[f, xp, k]
            s = _sample_cat(msg, card[v], ux[v])
        if s < 0:
            ok = False
            s = 0
        x[v] = s
    return ok


@njit(**_JIT)
def tree_block(x, theta, card, unary, unary_eff, fu, fv, log_table,
               comp_ptr, comp_logg, comp_bond, comp_logl, comp_logr,
               alpha_u, alpha_v,
               u_x, u_t, u_f, retained_in, log_offset, log_const,
               energies, counts, collect_from, var_trace, track_vars,
               logv, record_logv):
    """Blocked sweeps: exact x-draw on a retained forest given the other duals.

    With ``u_f`` nonempty a fresh uniform spanning forest is drawn each
    sweep; otherwise ``retained_in`` fixes the partition.  Retained factors
    act through their primal tables, so their absorbed alpha terms are
    removed from the effective unaries.  The dual half resamples every
    factor.
    """
    B = u_x.shape[0]
    n = x.shape[0]
    F = fu.shape[0]
    Kmax = unary_eff.shape[1]
    parent = np.empty(n, np.int64)
    csize = np.empty(n, np.int64)
    minid = np.empty(n, np.int64)
    logits = np.empty((n, Kmax))
    eff = np.empty((n, Kmax))
    agg = np.empty((n, Kmax))
    retained = np.empty(F, np.uint8)
    deg = np.empty(n, np.int64)
    tptr = np.empty(n + 1, np.int64)
    tadj_f = np.empty(2 * max(n, 1), np.int64)
    order = np.empty(n, np.int64)
    pvar = np.empty(n, np.int64)
    pfac = np.empty(n, np.int64)
    pside = np.empty(n, np.int8)
    maxdc = 1
    for f in range(F):
        dc = comp_ptr[f + 1] - comp_ptr[f]
        if dc > maxdc:
            maxdc = dc
    wbuf = np.empty(maxdc)
    refresh = u_f.shape[0] > 0
    for f in range(F):
        retained[f] = retained_in[f]
    status = 0
    structure_ready = False
    for t in range(B):
        if refresh:
            kruskal_retain(u_f[t], fu, fv, n, parent, csize, minid, retained)
            structure_ready = False
        if not structure_ready:
            if not _build_forest(retained, fu, fv, n, deg, tptr, tadj_f, order, pvar, pfac, pside):
                return 3  # cycle in retained set
            structure_ready = True
        # effective unaries: selected dual messages of non-retained factors,
        # minus the alpha terms of retained factors (their tables carry them)
        for v in range(n):
            for k in range(card[v]):
                eff[v, k] = unary_eff[v, k]
        for f in range(F):
            uu = fu[f]
            vv = fv[f]
            if retained[f] == 1:
                for k in range(card[uu]):
                    eff[uu, k] -= alpha_u[f, k]
                for k in range(card[vv]):
                    eff[vv, k] -= alpha_v[f, k]
                continue
            c = comp_ptr[f] + theta[f]
            if comp_bond[c] == 1:
                return 2
            for k in range(card[uu]):
                eff[uu, k] += comp_logl[c, k]
            for k in range(card[vv]):
                eff[vv, k] += comp_logr[c, k]
        # the BFS structure only walks retained factors, so the exact draw
        # sees the forest tables plus the augmented unaries
        if not _forest_exact_sample(x, card, eff, fu, fv, log_table,
                                    order, pvar, pfac, pside, agg, u_x[t]):
            status = 1
        if not _pd_theta_half(x, fu, fv, theta, comp_ptr, comp_logg, comp_bond,
                              comp_logl, comp_logr, u_t[t], wbuf):
            status = 1
        energies[t] = _energy(x, unary, fu, fv, log_table, log_offset)
        if record_logv:
            logv[t] = _log_v(x, theta, card, unary_eff, fu, fv, comp_ptr, comp_logg,
                             comp_bond, comp_logl, comp_logr, log_const,
                             parent, csize, minid, logits)
        if counts.shape[0] > 0 and t >= collect_from:
            for v in range(n):
                counts[v, x[v]] += 1
        if track_vars:
            for v in range(n):
                var_trace[t, v] = x[v]
    return status
