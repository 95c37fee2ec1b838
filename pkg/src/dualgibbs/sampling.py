"""Samplers: sequential Gibbs, parallel primal/dual two-block Gibbs,
Swendsen-Wang cluster updates, and blocked exact sampling on forests.

Randomness follows a counter-based stream contract: every uniform variate
is a pure function of (master seed, stream kind, sweep index, entity
index), so trajectories are bit-identical regardless of worker count or
execution order.  The ``run_*`` helpers execute many sweeps through the
compiled block kernels; the single-sweep functions consume the exact same
uniforms and therefore produce the exact same trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._packed import pack_model
from .duality import DualModel, dualize_model
from .model import Model, energy

__all__ = [
    "RngStreams",
    "SweepResult",
    "BlockPartition",
    "SampleRun",
    "conditional_prob",
    "init_state",
    "init_dual",
    "sequential_gibbs_sweep",
    "pd_sweep",
    "sw_sweep",
    "random_spanning_forest",
    "blocked_tree_sweep",
    "run_sequential",
    "run_pd",
    "run_sw",
    "run_blocked",
]

BLOCK = 1024

# stream kinds
STREAM_X = 0
STREAM_THETA = 1
STREAM_SEQ = 2
STREAM_FOREST = 3
STREAM_INIT_X = 4
STREAM_INIT_THETA = 5
STREAM_CHAIN = 6


@dataclass(frozen=True)
class RngStreams:
    """Deterministic uniform streams keyed by (kind, sweep index, entity index).

    Uniforms are generated in blocks of ``BLOCK`` sweeps: the vector for
    sweep t lives in row t % BLOCK of the block t // BLOCK, so batched and
    one-sweep-at-a-time execution consume identical values.
    """

    seed: int

    def generator(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key)))

    def block(self, kind: int, block_index: int, n: int) -> np.ndarray:
        return self.generator(kind, block_index).random((BLOCK, n))

    def uniforms(self, kind: int, sweep: int, n: int) -> np.ndarray:
        return self.block(kind, sweep // BLOCK, n)[sweep % BLOCK]

    def substream(self, kind: int, index: int) -> "RngStreams":
        child = int(self.generator(kind, index).integers(0, 2**63 - 1))
        return RngStreams(child)


@dataclass
class SweepResult:
    state: np.ndarray
    dual: np.ndarray
    energy: float
    magnetization: float


@dataclass
class BlockPartition:
    """Split of the factors: ``retained`` stay exact pairwise tables for the
    sweep (must induce a forest), the rest act through their dual variables."""

    retained: list[int]
    dualized: list[int]

    @staticmethod
    def from_retained(model: Model, retained) -> "BlockPartition":
        retained = sorted(retained)
        rset = set(retained)
        unknown = rset - set(model.factors)
        if unknown:
            raise ValueError(f"unknown factor ids in partition: {sorted(unknown)}")
        _check_forest(model, retained)
        dualized = [fid for fid in model.factors if fid not in rset]
        return BlockPartition(retained, dualized)


def _check_forest(model: Model, retained) -> None:
    parent = list(range(model.n_vars))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for fid in retained:
        f = model.factors[fid]
        ru, rv = find(f.u), find(f.v)
        if ru == rv:
            raise ValueError(f"retained set contains a cycle (closed by factor {fid})")
        parent[ru] = rv


@dataclass
class SampleRun:
    """Trajectory summary of a batched sampler run."""

    energies: np.ndarray
    final_state: np.ndarray
    final_dual: np.ndarray | None
    counts: np.ndarray | None
    burn_in: int
    var_trace: np.ndarray | None = None
    log_v: np.ndarray | None = None

    def marginals(self) -> np.ndarray:
        if self.counts is None:
            raise ValueError("run was executed without count collection")
        total = self.counts.sum(axis=1, keepdims=True)
        return self.counts / total


# ---------------------------------------------------------------------------
# single-sweep operations
# ---------------------------------------------------------------------------


def conditional_prob(model: Model, state, v: int) -> np.ndarray:
    """Full conditional of variable ``v`` given the rest of ``state``."""
    x = model.validate_state(state)
    if not (0 <= v < model.n_vars):
        raise ValueError(f"unknown variable {v}")
    var = model.variables[v]
    logits = var.unary.copy()
    for fid in model.adjacency[v]:
        f = model.factors[fid]
        if f.u == v:
            logits += np.log(f.table[:, x[f.v]])
        else:
            logits += np.log(f.table[x[f.u], :])
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def init_state(model: Model, rng: RngStreams) -> np.ndarray:
    """Independent uniform random state, one variate per variable."""
    card = model.cardinalities()
    u = rng.uniforms(STREAM_INIT_X, 0, model.n_vars)
    return np.minimum((u * card).astype(np.int64), card - 1)


def init_dual(dual_model: DualModel, state, rng: RngStreams) -> np.ndarray:
    """Draw theta from p(theta | x): the sampler's dual initialization."""
    pd = dual_model.packed()
    x = dual_model.base.validate_state(state)
    theta = np.zeros(pd.pm.F, dtype=np.int64)
    u = rng.uniforms(STREAM_INIT_THETA, 0, max(pd.pm.F, 1))
    wbuf = np.empty(max(int(pd.dual_card.max()) if pd.pm.F else 1, 1))
    ok = K._pd_theta_half(x, pd.pm.fu, pd.pm.fv, theta, pd.comp_ptr, pd.comp_logg,
                          pd.comp_bond, pd.comp_logl, pd.comp_logr, u[: pd.pm.F], wbuf)
    if not ok:
        raise RuntimeError("dual conditional with empty support; mixture invariants violated")
    return theta


def sequential_gibbs_sweep(model: Model, state, rng: RngStreams, sweep: int = 0) -> np.ndarray:
    """One pass of single-site Gibbs in fixed index order; returns the new state."""
    pm = pack_model(model)
    x = model.validate_state(state).copy()
    u = rng.uniforms(STREAM_SEQ, sweep, pm.n).reshape(1, -1)
    energies = np.empty(1)
    K.seq_block(x, pm.card, pm.unary, pm.fu, pm.fv, pm.log_table, pm.adj_ptr,
                pm.adj_fac, pm.adj_side, u, pm.log_offset, energies, False,
                _NO_COUNTS, 1, _NO_TRACE, False)
    return x


_NO_COUNTS = np.zeros((0, 1), dtype=np.int64)
_NO_TRACE = np.zeros((0, 1), dtype=np.int8)
_NO_LOGV = np.zeros(0)


def _pd_block_once(pd, x, theta, u_x, u_t, theta_first: bool):
    energies = np.empty(1)
    status = K.pd_block(
        x, theta, pd.pm.card, pd.pm.unary, pd.unary_eff, pd.pm.fu, pd.pm.fv,
        pd.pm.log_table, pd.comp_ptr, pd.comp_logg, pd.comp_bond, pd.comp_logl,
        pd.comp_logr, u_x, u_t, theta_first, pd.pm.log_offset, pd.log_const,
        energies, _NO_COUNTS, 1, _NO_TRACE, False, _NO_LOGV, False,
    )
    _raise_status(status)
    return float(energies[0])


def _raise_status(status: int) -> None:
    if status == 1:
        raise RuntimeError("conditional with empty support; mixture invariants violated")
    if status == 2:
        raise ValueError("bond components cannot be dualized messages in a tree sweep")
    if status == 3:
        raise ValueError("retained set contains a cycle")


def pd_sweep(dual_model: DualModel, state, dual, rng: RngStreams, sweep: int = 0) -> SweepResult:
    """One two-block sweep: x ~ p(x | theta), then theta ~ p(theta | x).

    Both halves factorize (bond components merge variables into clusters
    that draw one shared state), so within a half every slot could be
    filled concurrently; results do not depend on any such schedule.
    """
    pd = dual_model.packed()
    x = dual_model.base.validate_state(state).copy()
    theta = _validate_dual(pd, dual)
    u_x = rng.uniforms(STREAM_X, sweep, pd.pm.n).reshape(1, -1)
    u_t = rng.uniforms(STREAM_THETA, sweep, max(pd.pm.F, 1))[: pd.pm.F].reshape(1, -1)
    e = _pd_block_once(pd, x, theta, u_x, u_t, False)
    return SweepResult(x, theta, e, float(np.mean(x)))


def sw_sweep(model, state, rng: RngStreams, sweep: int = 0) -> np.ndarray:
    """One Swendsen-Wang sweep: bonds from agreement, then cluster flips.

    ``model`` may be a plain Ising/Potts model (it is bond-dualized on the
    fly) or a prebuilt dual model whose factors all use the bond
    decomposition.  Unaries bias each cluster draw by the product of the
    member weights.
    """
    dm = model if isinstance(model, DualModel) else dualize_model(model, method="sw")
    pd = dm.packed()
    x = dm.base.validate_state(state).copy()
    theta = np.zeros(pd.pm.F, dtype=np.int64)
    u_x = rng.uniforms(STREAM_X, sweep, pd.pm.n).reshape(1, -1)
    u_t = rng.uniforms(STREAM_THETA, sweep, max(pd.pm.F, 1))[: pd.pm.F].reshape(1, -1)
    _pd_block_once(pd, x, theta, u_x, u_t, True)
    return x


def random_spanning_forest(model: Model, rng: RngStreams, sweep: int = 0) -> BlockPartition:
    """Uniform-random-order Kruskal: shuffle factors, greedily retain acyclic ones."""
    pm = pack_model(model)
    keys = rng.uniforms(STREAM_FOREST, sweep, max(pm.F, 1))[: pm.F]
    parent = np.empty(pm.n, dtype=np.int64)
    csize = np.empty(pm.n, dtype=np.int64)
    minid = np.empty(pm.n, dtype=np.int64)
    retained = np.empty(pm.F, dtype=np.uint8)
    K.kruskal_retain(keys, pm.fu, pm.fv, pm.n, parent, csize, minid, retained)
    kept = [pm.factor_ids[i] for i in range(pm.F) if retained[i]]
    dualized = [pm.factor_ids[i] for i in range(pm.F) if not retained[i]]
    return BlockPartition(sorted(kept), sorted(dualized))


def blocked_tree_sweep(dual_model: DualModel, state, dual, partition: BlockPartition,
                       rng: RngStreams, sweep: int = 0) -> SweepResult:
    """One blocked sweep: exact joint x-draw on the retained forest given the
    dualized factors' theta, then a full dual half-step."""
    pd = dual_model.packed()
    _check_forest(dual_model.base, partition.retained)
    x = dual_model.base.validate_state(state).copy()
    theta = _validate_dual(pd, dual)
    retained = _retained_mask(pd, partition)
    u_x = rng.uniforms(STREAM_X, sweep, pd.pm.n).reshape(1, -1)
    u_t = rng.uniforms(STREAM_THETA, sweep, max(pd.pm.F, 1))[: pd.pm.F].reshape(1, -1)
    energies = np.empty(1)
    status = K.tree_block(
        x, theta, pd.pm.card, pd.pm.unary, pd.unary_eff, pd.pm.fu, pd.pm.fv,
        pd.pm.log_table, pd.comp_ptr, pd.comp_logg, pd.comp_bond, pd.comp_logl,
        pd.comp_logr, pd.alpha_u, pd.alpha_v, u_x, u_t, np.zeros((0, 1)), retained, pd.pm.log_offset,
        pd.log_const, energies, _NO_COUNTS, 1, _NO_TRACE, False, _NO_LOGV, False,
    )
    _raise_status(status)
    return SweepResult(x, theta, float(energies[0]), float(np.mean(x)))


def _validate_dual(pd, dual) -> np.ndarray:
    theta = np.asarray(dual, dtype=np.int64).copy()
    if theta.shape != (pd.pm.F,):
        raise ValueError(f"dual state length {theta.shape} != ({pd.pm.F},)")
    if np.any(theta < 0) or np.any(theta >= pd.dual_card):
        raise ValueError("dual state out of range")
    return theta


def _retained_mask(pd, partition: BlockPartition) -> np.ndarray:
    rset = set(partition.retained)
    return np.array([1 if fid in rset else 0 for fid in pd.pm.factor_ids], dtype=np.uint8)


# ---------------------------------------------------------------------------
# batched runners
# ---------------------------------------------------------------------------


def _block_ranges(start: int, count: int):
    """Yield (block_index, row_lo, row_hi) covering sweeps [start, start+count)."""
    sweep = start
    end = start + count
    while sweep < end:
        bi = sweep // BLOCK
        lo = sweep % BLOCK
        hi = min(BLOCK, lo + (end - sweep))
        yield bi, lo, hi
        sweep += hi - lo


def _default_burn_in(n_sweeps: int, burn_in) -> int:
    if burn_in is None:
        return n_sweeps // 10
    if burn_in >= n_sweeps:
        raise ValueError("burn-in must be smaller than the sweep count")
    return int(burn_in)


def run_sequential(model: Model, n_sweeps: int, seed: int, *, burn_in=None,
                   init=None, collect_counts: bool = True,
                   track_variables: bool = False, site_mode: bool = False,
                   sweep_offset: int = 0) -> SampleRun:
    """Run sequential Gibbs for ``n_sweeps`` full sweeps.

    With ``site_mode`` the energy trace has one entry per single-site
    update (length n_sweeps * n_vars) instead of one per sweep.
    """
    pm = pack_model(model)
    rng = RngStreams(seed)
    burn = _default_burn_in(n_sweeps, burn_in)
    x = init_state(model, rng) if init is None else model.validate_state(init).copy()
    energies = np.empty(n_sweeps * pm.n if site_mode else n_sweeps)
    counts = np.zeros((pm.n, pm.Kmax), dtype=np.int64) if collect_counts else _NO_COUNTS
    var_trace = np.empty((n_sweeps, pm.n), dtype=np.int8) if track_variables else _NO_TRACE
    done = 0
    for bi, lo, hi in _block_ranges(sweep_offset, n_sweeps):
        rows = hi - lo
        u = rng.block(STREAM_SEQ, bi, pm.n)[lo:hi]
        e_slice = energies[done * pm.n: (done + rows) * pm.n] if site_mode else energies[done:done + rows]
        t_slice = var_trace[done:done + rows] if track_variables else _NO_TRACE
        K.seq_block(x, pm.card, pm.unary, pm.fu, pm.fv, pm.log_table, pm.adj_ptr,
                    pm.adj_fac, pm.adj_side, u, pm.log_offset, e_slice, site_mode,
                    counts, max(burn - done, 0), t_slice, track_variables)
        done += rows
    return SampleRun(energies, x, None, counts if collect_counts else None, burn,
                     var_trace if track_variables else None)


def _as_dual(model_or_dual, method: str = "factorize") -> DualModel:
    if isinstance(model_or_dual, DualModel):
        return model_or_dual
    return dualize_model(model_or_dual, method=method)


def _run_two_block(dm: DualModel, n_sweeps: int, seed: int, *, burn_in, init,
                   collect_counts, track_variables, record_log_v, theta_first,
                   partition, refresh_forest, sweep_offset) -> SampleRun:
    pd = dm.packed()
    rng = RngStreams(seed)
    burn = _default_burn_in(n_sweeps, burn_in)
    x = init_state(dm.base, rng) if init is None else dm.base.validate_state(init).copy()
    theta = init_dual(dm, x, rng)
    energies = np.empty(n_sweeps)
    counts = np.zeros((pd.pm.n, pd.pm.Kmax), dtype=np.int64) if collect_counts else _NO_COUNTS
    var_trace = np.empty((n_sweeps, pd.pm.n), dtype=np.int8) if track_variables else _NO_TRACE
    logv = np.empty(n_sweeps) if record_log_v else _NO_LOGV
    blocked = partition is not None or refresh_forest
    retained = (
        _retained_mask(pd, partition)
        if partition is not None
        else np.zeros(pd.pm.F, dtype=np.uint8)
    )
    if partition is not None:
        _check_forest(dm.base, partition.retained)
    done = 0
    for bi, lo, hi in _block_ranges(sweep_offset, n_sweeps):
        rows = hi - lo
        u_x = rng.block(STREAM_X, bi, pd.pm.n)[lo:hi]
        u_t = rng.block(STREAM_THETA, bi, max(pd.pm.F, 1))[lo:hi, : pd.pm.F]
        e_slice = energies[done:done + rows]
        t_slice = var_trace[done:done + rows] if track_variables else _NO_TRACE
        v_slice = logv[done:done + rows] if record_log_v else _NO_LOGV
        cfrom = max(burn - done, 0)
        if blocked:
            u_f = rng.block(STREAM_FOREST, bi, max(pd.pm.F, 1))[lo:hi, : pd.pm.F] if refresh_forest else np.zeros((0, 1))
            status = K.tree_block(
                x, theta, pd.pm.card, pd.pm.unary, pd.unary_eff, pd.pm.fu, pd.pm.fv,
                pd.pm.log_table, pd.comp_ptr, pd.comp_logg, pd.comp_bond,
                pd.comp_logl, pd.comp_logr, pd.alpha_u, pd.alpha_v, u_x, u_t, u_f, retained,
                pd.pm.log_offset, pd.log_const, e_slice, counts, cfrom,
                t_slice, track_variables, v_slice, record_log_v,
            )
        else:
            status = K.pd_block(
                x, theta, pd.pm.card, pd.pm.unary, pd.unary_eff, pd.pm.fu, pd.pm.fv,
                pd.pm.log_table, pd.comp_ptr, pd.comp_logg, pd.comp_bond,
                pd.comp_logl, pd.comp_logr, u_x, u_t, theta_first,
                pd.pm.log_offset, pd.log_const, e_slice, counts, cfrom,
                t_slice, track_variables, v_slice, record_log_v,
            )
        _raise_status(status)
        done += rows
    return SampleRun(energies, x, theta, counts if collect_counts else None, burn,
                     var_trace if track_variables else None,
                     logv if record_log_v else None)


def run_pd(model_or_dual, n_sweeps: int, seed: int, *, burn_in=None, init=None,
           collect_counts: bool = True, track_variables: bool = False,
           record_log_v: bool = False, sweep_offset: int = 0) -> SampleRun:
    """Run the parallel primal/dual two-block sampler."""
    return _run_two_block(_as_dual(model_or_dual), n_sweeps, seed, burn_in=burn_in,
                          init=init, collect_counts=collect_counts,
                          track_variables=track_variables, record_log_v=record_log_v,
                          theta_first=False, partition=None, refresh_forest=False,
                          sweep_offset=sweep_offset)


def run_sw(model_or_dual, n_sweeps: int, seed: int, *, burn_in=None, init=None,
           collect_counts: bool = True, track_variables: bool = False,
           record_log_v: bool = False, sweep_offset: int = 0) -> SampleRun:
    """Run Swendsen-Wang cluster sweeps (bond half first, then cluster flips)."""
    return _run_two_block(_as_dual(model_or_dual, method="sw"), n_sweeps, seed,
                          burn_in=burn_in, init=init, collect_counts=collect_counts,
                          track_variables=track_variables, record_log_v=record_log_v,
                          theta_first=True, partition=None, refresh_forest=False,
                          sweep_offset=sweep_offset)


def run_blocked(model_or_dual, n_sweeps: int, seed: int, *, partition: BlockPartition | None = None,
                burn_in=None, init=None, collect_counts: bool = True,
                track_variables: bool = False, record_log_v: bool = False,
                sweep_offset: int = 0) -> SampleRun:
    """Run blocked tree sweeps; with no fixed partition a fresh random
    spanning forest is drawn every sweep."""
    return _run_two_block(_as_dual(model_or_dual), n_sweeps, seed, burn_in=burn_in,
                          init=init, collect_counts=collect_counts,
                          track_variables=track_variables, record_log_v=record_log_v,
                          theta_first=False, partition=partition,
                          refresh_forest=partition is None, sweep_offset=sweep_offset)
