"""Geometric stability certificates and homotopy-tracking learners for drifting finite MDPs.

The package is organized bottom-up:

- :mod:`htmdp.mdp` -- finite MDPs, Bellman operators, exact solvers.
- :mod:`htmdp.metric` -- ground metrics, W1 dual norms, mixing certificates.
- :mod:`htmdp.paths` -- drifting-MDP families (ring regimes) and path derivatives.
- :mod:`htmdp.geometry` -- path length / curvature / kink certificates, tubes,
  gap-safe regions, and multi-parameter pullback geometry.
- :mod:`htmdp.scheduler` -- replay-based drift proxies and the hysteresis
  hyper-parameter scheduler.
- :mod:`htmdp.agents` -- tracking Q-learning and tracking MCTS runners plus
  their static baselines and audits.
- :mod:`htmdp.config` / :mod:`htmdp.cli` -- experiment configuration and the
  command-line entry point.
"""

from htmdp.mdp import (
    FiniteMdp,
    IterationLimitError,
    ValueIterationResult,
    action_gap,
    bellman_optimal_apply,
    greedy_policy,
    policy_evaluation,
    policy_iteration,
    policy_transition,
    resolvent_apply,
    value_iteration,
)
from htmdp.metric import (
    GroundMetric,
    InfiniteLipschitzError,
    MixingCertificate,
    NoMixingCertificateError,
    NonZeroMassError,
    SignedMeasure,
    l1_surrogate_norm,
    lipschitz_seminorm,
    mixing_certificate,
    w1_dual_norm,
)
from htmdp.paths import (
    MdpPath,
    PathDerivatives,
    PATH_FAMILIES,
    curvature_dominated_path,
    kink_prone_path,
    length_dominated_path,
    make_path,
    moving_center_path,
    path_derivatives,
    ring_mdp,
    stationary_path,
)
from htmdp.agents import (
    AgentConfig,
    RunTrace,
    StochasticPathProcess,
    bellman_sweep_run,
    dynamic_regret,
    ht_mcts_run,
    ht_q_learning_run,
    static_mcts_run,
    static_q_learning_run,
    tracking_recursion_audit,
    uct_plan,
    value_range,
)
from htmdp.scheduler import (
    HyperParams,
    ProxySignals,
    ReplayBuffer,
    SchedulerConfig,
    SchedulerState,
    Transition,
    chatter_stats,
    feature_mean_drift,
    initial_scheduler_state,
    map_hyperparams,
    minibatch_gap,
    one_hot_features,
    proxy_update,
    reward_drift,
    robbins_monro_audit,
    scheduled_rate,
    scheduler_step,
    zero_signals,
)
from htmdp.geometry import (
    GapSafeResult,
    GeometrySummary,
    KinkRecord,
    NonRegularPointError,
    ParamFamily,
    ParamGeometry,
    TubeResult,
    bound_matrix,
    bound_term_matrices,
    curvature,
    curvature_density,
    detect_kinks,
    ellipsoid_contains,
    feasible_cone,
    gap_profile,
    gap_safe_region,
    geometry_summary,
    jacobian_vector_product,
    kink_penalty,
    param_geometry,
    path_length,
    path_value_bound,
    pullback_metric,
    q_path_derivative,
    speed_density,
    tube_first_order,
    tube_second_order,
)

__version__ = "0.1.0"

__all__ = [
    "FiniteMdp",
    "ValueIterationResult",
    "IterationLimitError",
    "bellman_optimal_apply",
    "value_iteration",
    "policy_iteration",
    "policy_evaluation",
    "greedy_policy",
    "action_gap",
    "policy_transition",
    "resolvent_apply",
    "GroundMetric",
    "SignedMeasure",
    "MixingCertificate",
    "NonZeroMassError",
    "InfiniteLipschitzError",
    "NoMixingCertificateError",
    "w1_dual_norm",
    "l1_surrogate_norm",
    "lipschitz_seminorm",
    "mixing_certificate",
    "MdpPath",
    "PathDerivatives",
    "PATH_FAMILIES",
    "ring_mdp",
    "length_dominated_path",
    "curvature_dominated_path",
    "kink_prone_path",
    "moving_center_path",
    "stationary_path",
    "make_path",
    "path_derivatives",
    "GeometrySummary",
    "KinkRecord",
    "TubeResult",
    "GapSafeResult",
    "ParamFamily",
    "ParamGeometry",
    "NonRegularPointError",
    "speed_density",
    "curvature_density",
    "path_length",
    "curvature",
    "gap_profile",
    "detect_kinks",
    "kink_penalty",
    "q_path_derivative",
    "path_value_bound",
    "bound_matrix",
    "bound_term_matrices",
    "tube_first_order",
    "tube_second_order",
    "gap_safe_region",
    "geometry_summary",
    "jacobian_vector_product",
    "pullback_metric",
    "param_geometry",
    "ellipsoid_contains",
    "feasible_cone",
    "Transition",
    "ReplayBuffer",
    "ProxySignals",
    "SchedulerConfig",
    "SchedulerState",
    "HyperParams",
    "one_hot_features",
    "reward_drift",
    "feature_mean_drift",
    "minibatch_gap",
    "proxy_update",
    "zero_signals",
    "map_hyperparams",
    "initial_scheduler_state",
    "scheduler_step",
    "scheduled_rate",
    "chatter_stats",
    "robbins_monro_audit",
    "StochasticPathProcess",
    "AgentConfig",
    "RunTrace",
    "value_range",
    "ht_q_learning_run",
    "static_q_learning_run",
    "uct_plan",
    "ht_mcts_run",
    "static_mcts_run",
    "bellman_sweep_run",
    "dynamic_regret",
    "tracking_recursion_audit",
    "__version__",
]
