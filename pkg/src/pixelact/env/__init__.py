"""Programmatic pixel environments and the scripted expert."""

from .corridor import (
    CorridorConfig,
    CorridorWorld,
    EnvAction,
    env_step,
    expert_action,
    render,
    reset,
)
from .rollout import (
    EpisodeResult,
    EvaluationStats,
    collect_dataset,
    collect_target_dataset,
    engine_policy,
    evaluate,
    random_policy,
)
from .targets import TargetConfig, expert_target_action, reset_targets, target_step

__all__ = [
    "CorridorConfig",
    "CorridorWorld",
    "EnvAction",
    "env_step",
    "expert_action",
    "render",
    "reset",
    "EpisodeResult",
    "EvaluationStats",
    "collect_dataset",
    "collect_target_dataset",
    "engine_policy",
    "evaluate",
    "random_policy",
    "TargetConfig",
    "expert_target_action",
    "reset_targets",
    "target_step",
]
