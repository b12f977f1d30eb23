"""Opportunistic contextual bandits with linear payoffs.

AdaLinUCB and its baselines, synthetic opportunistic environments, regret
bookkeeping, rejection-sampling replay and numeric regret bounds.
"""

from .bounds import (BoundConstants, alpha_schedule, bound_adalinucb_binary,
                     bound_adalinucb_continuous, bound_linucb, c_slots, quantile_threshold)
from .environments import (BetaVariation, BinaryVariation, EnvConfig, EnvironmentSpec,
                           TraceVariation, generate_environment, problem_constants)
from .evaluation import (RegretTrace, ReplayLog, aggregate_runs, decompose_regret,
                         replay_offline, run_episode)
from .policies import (DecisionRound, KernelUCB, LinearPolicy, PolicyConfig, RandomPolicy,
                       ThresholdConfig, make_policy)

__version__ = "0.1.0"

__all__ = [
    "BoundConstants", "alpha_schedule", "bound_adalinucb_binary", "bound_adalinucb_continuous",
    "bound_linucb", "c_slots", "quantile_threshold",
    "BetaVariation", "BinaryVariation", "EnvConfig", "EnvironmentSpec", "TraceVariation",
    "generate_environment", "problem_constants",
    "RegretTrace", "ReplayLog", "aggregate_runs", "decompose_regret", "replay_offline",
    "run_episode",
    "DecisionRound", "KernelUCB", "LinearPolicy", "PolicyConfig", "RandomPolicy",
    "ThresholdConfig", "make_policy",
]
