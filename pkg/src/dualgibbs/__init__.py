"""Parallel Gibbs sampling for discrete pairwise MRFs via dual-variable
augmentation, with the associated MAP / mean-field solvers, a log-partition
estimator, and multi-chain convergence diagnostics."""

from .model import (
    Model,
    Variable,
    Factor,
    energy,
    build_grid_ising,
    build_random_graph,
    build_full_ising,
    clamp,
    save_model,
    load_model,
)
from .duality import (
    symmetric_factor,
    factorize_positive,
    dual_params,
    DualFactor,
    RankOneMixture,
    MixtureComponent,
    sw_decompose,
    higdon_decompose,
    entrywise_mixture,
    DualModel,
    dualize_model,
    build_dual_model,
)
from .sampling import (
    RngStreams,
    BlockPartition,
    SweepResult,
    conditional_prob,
    init_state,
    init_dual,
    sequential_gibbs_sweep,
    pd_sweep,
    sw_sweep,
    random_spanning_forest,
    blocked_tree_sweep,
    run_sequential,
    run_pd,
    run_sw,
    run_blocked,
)
from .partition import (
    LogZEstimate,
    big_G,
    big_H,
    log_V,
    estimate_logZ_lower,
    mutual_information_check,
)
from .variational import (
    MapState,
    MeanFieldState,
    em_map_step,
    mean_field_step,
    joint_kl_objective,
    tree_blocked_map_step,
    tree_blocked_mf_step,
    run_em_map,
    run_mean_field,
    cavi_mean_field,
)
from .diagnostics import (
    ChainTrace,
    PsrfSeries,
    psrf,
    psrf_series,
    mixing_time,
    run_chains,
)
from .oracle import (
    ExactSummary,
    exact_logZ,
    exact_summary,
    exact_map,
    exact_dual_joint,
    SizeCapError,
)

__version__ = "0.1.0"
