"""Finite-horizon Q-learning toolkit."""
from .dp import bellman_residual, solve
from .learner import LearnerConfig, StepSchedule, TrainingTrace, run, step_size, sup_error
from .mdp import (FiniteHorizonMdp, brute_force_optimal_q, greedy_policy, policy_q_evaluation,
                  q_to_value, validate)
from .random_mdp import RandomMdpSpec, generate

__all__ = [
    "FiniteHorizonMdp", "LearnerConfig", "RandomMdpSpec", "StepSchedule", "TrainingTrace",
    "bellman_residual", "brute_force_optimal_q", "generate", "greedy_policy",
    "policy_q_evaluation", "q_to_value", "run", "solve", "step_size", "sup_error", "validate",
]
