"""Differentiable arbitrating for tabular two-player zero-sum Markov games.

The lower level is an entropy-regularized Nash equilibrium (``mg_solvers``);
the upper level tunes reward incentives ``theta`` by differentiating through
it (``implicit``, ``arbitration``).
"""

__version__ = "0.1.0"

from .arbitration import (
    ArbitrationHistory,
    BaselineResult,
    GridSpec,
    StepSchedule,
    SyntheticInstance,
    UpperEvaluator,
    bayes_opt,
    convergence_report,
    da_run,
    grid_search,
    random_search,
    two_stage_grid_search,
)
from .environments import (
    ExplorationObjective,
    PpConfig,
    RwsConfig,
    build_pp,
    build_rws,
    exploration_objective,
    pp_lite_config,
    rws_lite_config,
    rws_payoff,
)
from .game import (
    IncentiveScheme,
    SoftmaxPolicyPair,
    TabularMarkovGame,
    best_response_value,
    dump_game,
    evaluate_value,
    exploitability,
    load_game,
    occupancy_measure,
)
from .grad_engine import value_grads_dp, value_grads_exact, value_grads_mc, value_grads_stationary
from .implicit import assemble_system, designer_gradient, evaluate_upper, ne_sensitivity
from .matrix_solvers import MatrixGameProblem, solve_regularized_matrix_game
from .mg_solvers import SolveConfig, SolveResult, lam_for_epsilon, nash_solve

__all__ = [
    "ArbitrationHistory",
    "BaselineResult",
    "ExplorationObjective",
    "GridSpec",
    "IncentiveScheme",
    "MatrixGameProblem",
    "PpConfig",
    "RwsConfig",
    "SoftmaxPolicyPair",
    "SolveConfig",
    "SolveResult",
    "StepSchedule",
    "SyntheticInstance",
    "TabularMarkovGame",
    "UpperEvaluator",
    "assemble_system",
    "bayes_opt",
    "best_response_value",
    "build_pp",
    "build_rws",
    "convergence_report",
    "da_run",
    "designer_gradient",
    "dump_game",
    "evaluate_upper",
    "evaluate_value",
    "exploitability",
    "exploration_objective",
    "grid_search",
    "lam_for_epsilon",
    "load_game",
    "nash_solve",
    "ne_sensitivity",
    "occupancy_measure",
    "pp_lite_config",
    "random_search",
    "rws_lite_config",
    "rws_payoff",
    "solve_regularized_matrix_game",
    "two_stage_grid_search",
    "value_grads_dp",
    "value_grads_exact",
    "value_grads_mc",
    "value_grads_stationary",
]
