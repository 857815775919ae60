"""Experiment orchestration: configuration, training loop, checkpoints and CLI."""

from fedcomp.harness.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from fedcomp.harness.config import AgentConfig, ExperimentConfig, PlateauConfig, reference_config
from fedcomp.harness.runner import (
    METRICS_HEADER,
    RunResult,
    random_policy_rewards,
    run_experiment,
    run_many,
    run_to_directory,
)
from fedcomp.harness.seeding import derive_seed, splitmix64

__all__ = [
    "METRICS_HEADER",
    "AgentConfig",
    "Checkpoint",
    "ExperimentConfig",
    "PlateauConfig",
    "RunResult",
    "derive_seed",
    "load_checkpoint",
    "random_policy_rewards",
    "reference_config",
    "run_experiment",
    "run_many",
    "run_to_directory",
    "save_checkpoint",
    "splitmix64",
]
