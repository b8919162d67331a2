"""Interacting collision systems, backward interaction graphs, and
chaos-expansion statistics for mean-field particle models."""

__version__ = "0.1.0"

from .clocks import (
    ClusterSizePaths,
    DuplicateTimeError,
    RatePath,
    exp_race,
    sample_inhom_poisson,
    sample_yule,
    superpose,
    thin,
)
from .combinatorics import (
    alternating_sum,
    pair_constants,
    pair_count,
    pair_refinement_sum,
    stirling_expand,
    stirling_first_kind,
)
from .config import ConfigError, ExperimentConfig, RunManifest, config_hash, load_config
from .forward import forward_paths, simulate_forward, u_statistic
from .functionals import (
    CenteringRecord,
    PathFunctional,
    center_functional,
    shift_functional,
    symmetrize,
    tensor_product,
)
from .graphs import CoupledGraphs, InteractionGraph, build_coupled, build_graph, detect_events
from .models import (
    BUILTIN_MODELS,
    CollisionKernel,
    ModelSpec,
    bird_jump,
    kac_model,
    linear_toy_model,
    make_model,
    maxwell_collision,
    maxwell_model,
    mollified_mass,
    nanbu_jump,
)
from .realize import (
    YuleTree,
    marginal_paths,
    realize_branch_only,
    realize_cluster_block,
    realize_limit_pair,
    realize_pair_blocks,
    realize_system,
    sample_cross_loop,
    sample_yule_tree,
)
from .stats import (
    clt_covariance,
    estimate_delta,
    estimate_wick_direct,
    estimate_wick_limit,
    hoeffding_decompose,
)

__all__ = [
    "__version__",
    "BUILTIN_MODELS",
    "CenteringRecord",
    "ClusterSizePaths",
    "CollisionKernel",
    "ConfigError",
    "CoupledGraphs",
    "DuplicateTimeError",
    "ExperimentConfig",
    "InteractionGraph",
    "ModelSpec",
    "PathFunctional",
    "RatePath",
    "RunManifest",
    "YuleTree",
    "alternating_sum",
    "bird_jump",
    "build_coupled",
    "build_graph",
    "center_functional",
    "clt_covariance",
    "config_hash",
    "detect_events",
    "estimate_delta",
    "estimate_wick_direct",
    "estimate_wick_limit",
    "exp_race",
    "forward_paths",
    "hoeffding_decompose",
    "kac_model",
    "linear_toy_model",
    "load_config",
    "make_model",
    "marginal_paths",
    "maxwell_collision",
    "maxwell_model",
    "mollified_mass",
    "nanbu_jump",
    "pair_constants",
    "pair_count",
    "pair_refinement_sum",
    "realize_branch_only",
    "realize_cluster_block",
    "realize_limit_pair",
    "realize_pair_blocks",
    "realize_system",
    "sample_cross_loop",
    "sample_inhom_poisson",
    "sample_yule",
    "sample_yule_tree",
    "shift_functional",
    "simulate_forward",
    "stirling_expand",
    "stirling_first_kind",
    "superpose",
    "symmetrize",
    "tensor_product",
    "thin",
    "u_statistic",
]
