"""Regularized independent distributional Q-learning for cooperative agents."""

from .distq import (
    PolicyDistribution,
    QuantileQNet,
    TargetNet,
    bellman_target_quantiles,
    mean_q,
    policy_from_q,
    polyak_update,
    quantile_huber_loss,
)
from .envs import EnvSpec, StepResult, make_env, optimal_return
from .numkit import AdamState, DenseNet, GradBundle, adam_step, backward, finite_diff_check, forward
from .regularizers import (
    RegularizerConfig,
    adaptive_entropy_grad,
    cql_penalty,
    cross_entropy_penalty,
    entropy,
    importance_ratio,
    kl_divergence,
    shared_experience_penalty,
    total_loss,
)
from .replay import AgentBuffer, EmpiricalBehavior, Transition, behavior_prob, sample_batch, sample_cross
from .tabular import TabularMDP, bellman_optimality_backup, cross_agent_iterate, penalized_iterate
from .trainer import MetricsRow, Trainer, TrainerConfig, checkpoint_load, checkpoint_save, evaluate, run_sweep

__version__ = "0.1.0"
