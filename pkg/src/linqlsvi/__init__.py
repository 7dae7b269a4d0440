"""LinQ-LSVI-UCB with state revisiting: agents, environments, exact oracle and verification harness."""
from __future__ import annotations

from .agent import BaselineAgent, LinQAgent, PathBuffer, StepRegressor, compute_beta, default_k_budget, revisit_bound
from .envgen import EnvSpec, Environment, GenerationError, generate, load, make_environment, save
from .harness import ExperimentConfig, RegretLog, evaluate_theorem_bounds, parallel_sweep, run_experiment
from .linalg import CovarianceState, quad_form, rank_one_update, solve_apply
from .mdp import DeterministicPolicy, FeatureMap, FiniteMdp, dp_solve, fit_linear_q, policy_evaluate
from .rng import Xoshiro256

__version__ = "0.1.0"
