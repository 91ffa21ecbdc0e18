"""Offline goal-conditioned RL on finite MDPs.

Core pieces: exact MDP primitives (mdp), chi-square conjugate machinery
(divergence), an exact solver for the regularized occupancy program with
duality-gap certificates (oracle), dataset generation (data), value and
policy learning (vlearn, plearn), and an experiment harness (harness).
"""

from .data import InitDataset, OfflineDataset, exhaustive_dataset, generate_dataset, split_dataset
from .divergence import (
    ChiSquareSpec,
    f_conjugate,
    f_divergence,
    f_value,
    g_conjugate,
    g_conjugate_plus,
    g_conjugate_prime,
)
from .mdp import (
    GoalMdp,
    OccupancyMeasure,
    Policy,
    ShiftedAdvantage,
    ValueFn,
    build_shifted_advantage,
    concentrability,
    evaluate_policy,
    exact_optimal_policy,
    j_value,
    occupancy_of_policy,
    policy_from_occupancy,
)
from .oracle import (
    RegularizedSolution,
    SolveReport,
    dual_objective,
    recover_occupancy,
    regularization_bias,
    solve_dual,
    solve_regularized_primal,
)
from .plearn import PolicyClass, evaluate_suboptimality, expected_tv, fit_policy, weighted_mle_objective
from .vlearn import (
    TransitionModel,
    ValueClass,
    empirical_dual_deterministic,
    empirical_dual_stochastic,
    fit_transition_mle,
    fit_v_deterministic,
    fit_v_stochastic,
    linear_value_class,
    tabular_value_class,
    u_records,
    u_records_model,
)

__version__ = "0.1.0"
