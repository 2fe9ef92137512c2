"""Stochastic fictitious play for stochastic games with turn-based controllers."""

from sfpsg.engine import RunConfig, RunRecord, StepSchedule, run, run_epoch, sfp_step, q_update
from sfpsg.game_model import (
    GeneratorSpec, StageGameStructure, StochasticGame, check_connectivity,
    classify_stage_game, decompose_controller_payoff, generate_game,
    validate_turn_based_controller,
)
from sfpsg.oracle import backward_induction, compare, ode_rhs, solve_stage_nash
from sfpsg.response import (
    PerturbationSpec, best_response_value, expected_payoff, marginal_payoffs,
    smoothed_best_response,
)

__all__ = [
    "GeneratorSpec", "PerturbationSpec", "RunConfig", "RunRecord", "StageGameStructure",
    "StepSchedule", "StochasticGame", "backward_induction", "best_response_value",
    "check_connectivity", "classify_stage_game", "compare", "decompose_controller_payoff",
    "expected_payoff", "generate_game", "marginal_payoffs", "ode_rhs", "q_update", "run",
    "run_epoch", "sfp_step", "smoothed_best_response", "solve_stage_nash",
    "validate_turn_based_controller",
]
