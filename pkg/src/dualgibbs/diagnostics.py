"""Multi-chain convergence diagnostics: potential scale reduction factor
(Gelman-Rubin) and the mixing-index extraction built on it.

The PSRF of m chains over the first n sweeps is

    R = sqrt( ((n-1)/n * W + B/n) / W )

with W the mean within-chain sample variance and B = n * variance of the
chain means.  The mixing index is the first evaluation point after which
the PSRF stays below a threshold for the remainder of the horizon.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .duality import DualModel, dualize_model
from .model import Model
from .sampling import RngStreams, STREAM_CHAIN, run_blocked, run_pd, run_sequential, run_sw

__all__ = [
    "ChainTrace",
    "PsrfSeries",
    "psrf",
    "psrf_series",
    "mixing_time",
    "run_chains",
    "export_traces",
    "export_psrf",
    "worker_count",
]

WORKERS_ENV = "DUALGIBBS_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class ChainTrace:
    energies: np.ndarray              # (T,) summary per sweep (or site update)
    seed: int
    unit: str = "sweep"
    variables: np.ndarray | None = None   # (T, n) int8 when tracking is on
    final_state: np.ndarray | None = None


@dataclass
class PsrfSeries:
    values: np.ndarray   # PSRF at evaluation points stride, 2*stride, ...
    stride: int
    unit: str = "sweep"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0):
            raise ValueError("PSRF values must be >= 0")

    def evaluation_points(self) -> np.ndarray:
        return self.stride * np.arange(1, len(self.values) + 1)


def psrf(chains, n: int | None = None) -> float:
    """Gelman-Rubin statistic of m >= 2 scalar chains over their first n entries."""
    arr = np.asarray(chains, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("need a (m >= 2, T) array of chain summaries")
    if n is None:
        n = arr.shape[1]
    if not 2 <= n <= arr.shape[1]:
        raise ValueError("window must satisfy 2 <= n <= chain length")
    window = arr[:, :n]
    w = float(np.mean(np.var(window, axis=1, ddof=1)))
    b = n * float(np.var(np.mean(window, axis=1), ddof=1))
    return _psrf_from_wb(w, b, n)


def _psrf_from_wb(w: float, b: float, n: int) -> float:
    if w == 0.0:
        return 1.0 if b == 0.0 else math.inf
    return math.sqrt(((n - 1) / n * w + b / n) / w)


def psrf_series(chains, stride: int) -> np.ndarray:
    """PSRF over growing windows n = stride, 2*stride, ... via running sums.

    Chains are shifted by a common reference value first; the statistic is
    invariant under that shift and the sums stay well conditioned.
    """
    arr = np.asarray(chains, dtype=np.float64)
    m, t = arr.shape
    if stride < 2:
        raise ValueError("stride must be >= 2")
    arr = arr - arr[0, 0]
    ns = np.arange(stride, t + 1, stride)
    cs1 = np.cumsum(arr, axis=1)[:, ns - 1]
    cs2 = np.cumsum(arr * arr, axis=1)[:, ns - 1]
    out = np.empty(len(ns))
    for j, n in enumerate(ns):
        means = cs1[:, j] / n
        variances = (cs2[:, j] - n * means**2) / (n - 1)
        w = float(np.mean(variances))
        b = n * float(np.var(means, ddof=1))
        out[j] = _psrf_from_wb(max(w, 0.0), max(b, 0.0), int(n))
    return out


def _per_variable_max_psrf(var_traces: np.ndarray, stride: int) -> np.ndarray:
    """Max over variables of the per-variable PSRF series; chunked over
    variables to bound the float64 working set."""
    m, t, n_vars = var_traces.shape
    ns = np.arange(stride, t + 1, stride)
    best = np.zeros(len(ns))
    for lo in range(0, n_vars, 32):
        chunk = var_traces[:, :, lo:lo + 32].astype(np.float64)
        cs1 = np.cumsum(chunk, axis=1)[:, ns - 1, :]
        cs2 = np.cumsum(chunk * chunk, axis=1)[:, ns - 1, :]
        for j, n in enumerate(ns):
            means = cs1[:, j, :] / n
            variances = (cs2[:, j, :] - n * means**2) / (n - 1)
            w = np.mean(variances, axis=0)
            b = n * np.var(means, axis=0, ddof=1)
            vals = np.where(
                w > 0.0,
                np.sqrt(((n - 1) / n * np.maximum(w, 1e-300) + np.maximum(b, 0.0) / n) / np.maximum(w, 1e-300)),
                np.where(b > 0.0, np.inf, 1.0),
            )
            best[j] = max(best[j], float(np.max(vals)))
    return best


def mixing_time(series, threshold: float):
    """Smallest index t with series[t'] < threshold for all t' >= t; None if censored."""
    vals = series.values if isinstance(series, PsrfSeries) else np.asarray(series)
    if len(vals) == 0:
        raise ValueError("empty PSRF series")
    bad = np.nonzero(vals >= threshold)[0]
    if len(bad) == 0:
        return 0
    last_bad = int(bad[-1])
    if last_bad == len(vals) - 1:
        return None
    return last_bad + 1


_RUNNERS = {"sequential": run_sequential, "pd": run_pd, "sw": run_sw, "blocked": run_blocked}


def run_chains(model, sampler: str, m: int, max_sweeps: int, seed: int, *,
               stride: int = 10, track_variables: bool = True,
               unit: str = "sweep", threshold: float | None = None):
    """Run m independently initialized chains and the PSRF series over them.

    The summary statistic is the per-sweep energy; with ``track_variables``
    the series is the max of the energy PSRF and every per-variable PSRF.
    ``unit="site"`` (sequential sampler only) counts single-site updates
    instead of full sweeps.  Chains run in a thread pool sized by the
    DUALGIBBS_WORKERS environment variable; results are identical for any
    worker count.
    """
    if m < 2:
        raise ValueError("need at least 2 chains")
    if sampler not in _RUNNERS:
        raise ValueError(f"unknown sampler {sampler!r}; choose from {sorted(_RUNNERS)}")
    if unit not in ("sweep", "site"):
        raise ValueError("unit must be 'sweep' or 'site'")
    if unit == "site" and sampler != "sequential":
        raise ValueError("site-update accounting applies to the sequential sampler only")

    base = model.base if isinstance(model, DualModel) else model
    target = model
    if sampler in ("pd", "blocked") and not isinstance(model, DualModel):
        target = dualize_model(model)
    elif sampler == "sw" and not isinstance(model, DualModel):
        target = dualize_model(model, method="sw")
    if sampler == "sequential":
        target = base

    n = base.n_vars
    master = RngStreams(seed)
    chain_seeds = [master.substream(STREAM_CHAIN, c).seed for c in range(m)]
    site_mode = unit == "site"
    track = track_variables and not site_mode
    n_sweeps = -(-max_sweeps // n) if site_mode else max_sweeps

    def one_chain(c: int) -> ChainTrace:
        kwargs = dict(burn_in=0, collect_counts=False, track_variables=track)
        if sampler == "sequential":
            run = run_sequential(target, n_sweeps, chain_seeds[c], site_mode=site_mode, **kwargs)
        else:
            run = _RUNNERS[sampler](target, n_sweeps, chain_seeds[c], **kwargs)
        energies = run.energies[:max_sweeps] if site_mode else run.energies
        return ChainTrace(energies, chain_seeds[c], unit,
                          run.var_trace if track else None, run.final_state)

    workers = worker_count()
    if workers == 1:
        chains = [one_chain(c) for c in range(m)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chains = list(pool.map(one_chain, range(m)))

    energy_mat = np.stack([c.energies for c in chains])
    series = psrf_series(energy_mat, stride)
    if track:
        var_mat = np.stack([c.variables for c in chains])
        series = np.maximum(series, _per_variable_max_psrf(var_mat, stride))
    return chains, PsrfSeries(series, stride, unit)


def export_traces(path, chains: list[ChainTrace]) -> None:
    """CSV with columns (chain, sweep, energy[, v0..vk])."""
    with open(path, "w") as fh:
        n_vars = chains[0].variables.shape[1] if chains[0].variables is not None else 0
        header = "chain,sweep,energy" + "".join(f",v{i}" for i in range(n_vars))
        fh.write(header + "\n")
        for c, tr in enumerate(chains):
            for t in range(len(tr.energies)):
                row = f"{c},{t + 1},{float(tr.energies[t])!r}"
                if tr.variables is not None:
                    row += "".join(f",{int(s)}" for s in tr.variables[t])
                fh.write(row + "\n")


def export_psrf(path, series: PsrfSeries) -> None:
    """CSV with columns (sweep, psrf)."""
    with open(path, "w") as fh:
        fh.write("sweep,psrf\n")
        for n, val in zip(series.evaluation_points(), series.values):
            fh.write(f"{int(n)},{float(val)!r}\n")
