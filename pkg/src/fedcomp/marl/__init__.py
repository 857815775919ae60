"""Function approximators and actor-critic learners."""

from fedcomp.marl.approximators import Approximator
from fedcomp.marl.gradcheck import grad_check, run_grad_check
from fedcomp.marl.learner import (
    AgentLearner,
    LearnerConfig,
    Transition,
    actor_update,
    avg_reward_update,
    create_learner,
    critic_update,
    critic_value,
    inverse_cdf,
    learn,
    log_policy_grad,
    policy_probs,
    sample_action,
    softmax,
    td_update_average,
    td_update_episodic,
)
from fedcomp.marl.schedules import Schedule

__all__ = [
    "AgentLearner",
    "Approximator",
    "LearnerConfig",
    "Schedule",
    "Transition",
    "actor_update",
    "avg_reward_update",
    "create_learner",
    "critic_update",
    "critic_value",
    "grad_check",
    "inverse_cdf",
    "learn",
    "log_policy_grad",
    "policy_probs",
    "run_grad_check",
    "sample_action",
    "softmax",
    "td_update_average",
    "td_update_episodic",
]
