"""Experiment harness: mixing-time comparisons, sampling traces, log-partition
estimates, and MAP/mean-field inference on serialized models.

Every command is a deterministic function of its inputs and --seed.  The
worker pool size is taken from the DUALGIBBS_WORKERS environment variable;
outputs are identical for any worker count.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .diagnostics import mixing_time, run_chains
from .duality import dualize_model
from .model import Model, ModelFormatError, build_full_ising, build_grid_ising, build_random_graph, load_model
from .oracle import SizeCapError, exact_logZ, exact_map, state_logps, enumerate_states
from .partition import estimate_logZ_lower
from .sampling import RngStreams, random_spanning_forest, run_blocked, run_pd, run_sequential, run_sw
from .variational import run_em_map, run_mean_field
from .model import energy

TRACE_VERSION = "dualgibbs-trace v1"
MIXING_HEADER = "sampler,coupling,mixing_index,censored,unit"

_SAMPLER_CHOICES = ("sequential", "pd", "sw", "blocked")


def _parse_args(argv):
    p = argparse.ArgumentParser(prog="dualgibbs", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    mix = sub.add_parser("mixing", help="PSRF mixing-index experiments")
    mix.add_argument("--experiment", choices=("grid", "random", "full", "file"), required=True)
    mix.add_argument("--size", type=int, default=16,
                     help="grid side length / variable count (default 16)")
    mix.add_argument("--beta-min", type=float, default=0.1)
    mix.add_argument("--beta-max", type=float, default=0.5)
    mix.add_argument("--beta-steps", type=int, default=5)
    mix.add_argument("--k", default="2,4,8", help="factor-to-variable ratios for --experiment random")
    mix.add_argument("--sampler", default="sequential,pd",
                     help="comma list from {sequential,pd,sw,blocked}")
    mix.add_argument("--chains", type=int, default=10)
    mix.add_argument("--max-sweeps", type=int, default=20000)
    mix.add_argument("--psrf-threshold", type=float, default=1.01)
    mix.add_argument("--stride", type=int, default=10)
    mix.add_argument("--seed", type=int, default=0)
    mix.add_argument("--model", help="model file for --experiment file")
    mix.add_argument("--out", required=True)
    mix.add_argument("--format", default="csv", choices=("csv",))

    smp = sub.add_parser("sample", help="run one sampler and write its trace")
    smp.add_argument("model", help="model file")
    smp.add_argument("--sampler", choices=_SAMPLER_CHOICES, default="pd")
    smp.add_argument("--sweeps", type=int, required=True)
    smp.add_argument("--seed", type=int, default=0)
    smp.add_argument("--out", required=True)
    smp.add_argument("--format", default="csv", choices=("csv",))

    lz = sub.add_parser("logz", help="lower-bound estimate of log Z")
    lz.add_argument("model", help="model file")
    lz.add_argument("--sampler", choices=("pd", "blocked", "sw"), default="pd")
    lz.add_argument("--sweeps", type=int, default=20000)
    lz.add_argument("--seed", type=int, default=0)
    lz.add_argument("--out", help="optional CSV output")

    inf = sub.add_parser("infer", help="MAP / mean-field inference")
    inf.add_argument("model", help="model file")
    inf.add_argument("--method", choices=("map-em", "mean-field", "tree-map", "tree-mf"),
                     default="map-em")
    inf.add_argument("--seed", type=int, default=0)
    inf.add_argument("--damping", type=float, default=0.0)
    inf.add_argument("--fine-tune", action="store_true")
    inf.add_argument("--out", help="optional CSV trajectory output")

    return p.parse_args(argv)


def _load(path) -> Model:
    try:
        return load_model(path)
    except ModelFormatError as exc:
        raise SystemExit(f"error: {path}: {exc}")
    except OSError as exc:
        raise SystemExit(f"error: {exc}")


def _enumerable(model: Model, cap: int = 1 << 22) -> bool:
    return float(np.prod(model.cardinalities().astype(float))) <= cap


def _joint_enumerable(dm, cap: int = 1 << 20) -> bool:
    x_size = float(np.prod(dm.base.cardinalities().astype(float)))
    t_size = float(np.prod(dm.dual_cardinalities().astype(float))) if dm.base.n_factors else 1.0
    return x_size * t_size <= cap


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------


def _mixing_tasks(args):
    """Yield (sampler, coupling, model, unit, horizon) rows in output order."""
    samplers = [s.strip() for s in args.sampler.split(",") if s.strip()]
    for s in samplers:
        if s not in _SAMPLER_CHOICES:
            raise SystemExit(f"error: unknown sampler {s!r}")
    if args.experiment == "grid":
        betas = np.linspace(args.beta_min, args.beta_max, args.beta_steps)
        for sampler in samplers:
            for beta in betas:
                model = build_grid_ising(args.size, args.size, float(beta))
                yield sampler, float(beta), model, "sweep", args.max_sweeps
    elif args.experiment == "random":
        ks = [int(k) for k in args.k.split(",") if k]
        for sampler in samplers:
            for k in ks:
                model = build_random_graph(args.size, k, seed=args.seed)
                yield sampler, float(k), model, "sweep", args.max_sweeps
    elif args.experiment == "full":
        betas = np.linspace(args.beta_min, args.beta_max, args.beta_steps)
        for sampler in samplers:
            for beta in betas:
                model = build_full_ising(args.size, float(beta))
                if sampler == "sequential":
                    # fully connected comparison counts single-site updates
                    yield sampler, float(beta), model, "site", args.max_sweeps * args.size
                else:
                    yield sampler, float(beta), model, "sweep", args.max_sweeps
    else:
        if not args.model:
            raise SystemExit("error: --experiment file needs --model")
        model = _load(args.model)
        for sampler in samplers:
            yield sampler, 0.0, model, "sweep", args.max_sweeps


def cmd_mixing(args) -> int:
    if args.psrf_threshold <= 1.0:
        raise SystemExit("error: --psrf-threshold must be > 1")
    if args.chains < 2:
        raise SystemExit("error: --chains must be >= 2")
    master = RngStreams(args.seed)
    rows = []
    coupling_seed = {}
    for sampler, coupling, model, unit, horizon in _mixing_tasks(args):
        # pair the samplers: one chain-seed family per coupling value
        if coupling not in coupling_seed:
            coupling_seed[coupling] = int(master.generator(9, len(coupling_seed)).integers(0, 2**63 - 1))
        stride = args.stride
        _, series = run_chains(model, sampler, args.chains, horizon,
                               coupling_seed[coupling], stride=stride, unit=unit)
        idx = mixing_time(series, args.psrf_threshold)
        if idx is None:
            rows.append((sampler, coupling, -1, 1, unit))
        else:
            rows.append((sampler, coupling, int(series.evaluation_points()[idx]), 0, unit))
    with open(args.out, "w") as fh:
        fh.write(MIXING_HEADER + "\n")
        for sampler, coupling, index, censored, unit in rows:
            fh.write(f"{sampler},{coupling!r},{index},{censored},{unit}\n")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# sample / logz / infer
# ---------------------------------------------------------------------------

_RUNNERS = {"sequential": run_sequential, "pd": run_pd, "sw": run_sw, "blocked": run_blocked}


def cmd_sample(args) -> int:
    model = _load(args.model)
    try:
        run = _RUNNERS[args.sampler](model, args.sweeps, args.seed,
                                     burn_in=0, collect_counts=False)
    except ValueError as exc:
        raise SystemExit(f"error: {exc}")
    with open(args.out, "w") as fh:
        fh.write(f"# {TRACE_VERSION}\n")
        fh.write(f"# sampler={args.sampler} sweeps={args.sweeps} seed={args.seed}\n")
        fh.write("# final_state " + " ".join(str(int(s)) for s in run.final_state) + "\n")
        fh.write("sweep,energy\n")
        for t, e in enumerate(run.energies, start=1):
            fh.write(f"{t},{float(e)!r}\n")
    print(f"wrote {len(run.energies)} sweeps to {args.out}")
    return 0


def cmd_logz(args) -> int:
    model = _load(args.model)
    try:
        dm = dualize_model(model, method="sw" if args.sampler == "sw" else "factorize")
        est = estimate_logZ_lower(dm, args.sampler, args.sweeps, args.seed)
    except ValueError as exc:
        raise SystemExit(f"error: {exc}")
    print(f"log V mean:  {est.mean_logV!r}")
    print(f"std error:   {est.std_error!r}")
    print(f"samples:     {est.n_samples}")
    exact = None
    if _enumerable(model):
        exact = exact_logZ(model)
        print(f"exact log Z: {exact!r}")
        print(f"gap:         {exact - est.mean_logV!r}")
    else:
        print("exact log Z: unavailable (state space above enumeration cap)")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("mean_logV,std_error,n_samples,exact_logZ\n")
            fh.write(f"{est.mean_logV!r},{est.std_error!r},{est.n_samples},"
                     f"{'' if exact is None else repr(exact)}\n")
    return 0


def cmd_infer(args) -> int:
    model = _load(args.model)
    try:
        dm = dualize_model(model)
    except ValueError as exc:
        raise SystemExit(f"error: {exc}")
    partition = None
    if args.method in ("tree-map", "tree-mf"):
        partition = random_spanning_forest(model, RngStreams(args.seed))
    enumerable = _enumerable(model, 1 << 20)
    objective_rows = []
    if args.method in ("map-em", "tree-map"):
        res = run_em_map(dm, partition=partition)
        print(f"method:     {args.method}")
        print(f"iterations: {res.iterations} ({'converged' if res.converged else 'not converged'})")
        print("assignment: " + " ".join(str(int(s)) for s in res.state.x))
        print(f"objective:  {res.objectives[-1]!r}")
        if enumerable:
            best = exact_map(model)
            gap = energy(model, best) - res.objectives[-1]
            print(f"exact MAP objective: {energy(model, best)!r}")
            print(f"gap:        {gap!r}")
        print("trajectory: " + ",".join(repr(o) for o in res.objectives))
        objective_rows = res.objectives
    else:
        res = run_mean_field(dm, partition=partition, damping=args.damping,
                             record_objective=_joint_enumerable(dm) and partition is None,
                             fine_tune=args.fine_tune)
        print(f"method:     {args.method}")
        if res.converged:
            print(f"iterations: {res.iterations} (converged)")
        else:
            print(f"iterations: {res.iterations} (not converged; final delta {res.final_delta!r})")
        print("marginals:  " + " ".join(repr(float(e)) for e in res.state.eta))
        if res.objectives:
            print(f"objective:  {res.objectives[-1]!r}")
            print("trajectory: " + ",".join(repr(o) for o in res.objectives))
        objective_rows = res.objectives
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("iteration,objective\n")
            for i, o in enumerate(objective_rows):
                fh.write(f"{i},{o!r}\n")
    return 0


def main(argv=None) -> int:
    args = _parse_args(sys.argv[1:] if argv is None else argv)
    if args.command == "mixing":
        return cmd_mixing(args)
    if args.command == "sample":
        return cmd_sample(args)
    if args.command == "logz":
        return cmd_logz(args)
    if args.command == "infer":
        return cmd_infer(args)
    raise SystemExit(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
