"""Dataset collection and closed-loop evaluation on the corridor track."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..actions import RawAction
from ..trajectory import Trajectory
from .corridor import (
    CorridorConfig,
    EnvAction,
    env_step,
    expert_action,
    render,
    reset,
)
from .targets import TargetConfig, expert_target_action, reset_targets, target_step


@dataclass(frozen=True)
class EpisodeResult:
    completed: bool
    steps_to_lap: float  # inf when the lap was not completed
    wall_contacts: int


@dataclass(frozen=True)
class EvaluationStats:
    results: tuple
    completion_rate: float
    mean_steps: float  # over completed episodes; nan if none
    std_steps: float

    def summary(self) -> str:
        return (f"completion_rate {self.completion_rate:.3f}\n"
                f"steps_to_lap {self.mean_steps:.1f} +- {self.std_steps:.1f}\n")


def _random_env_action(rng: np.random.Generator) -> EnvAction:
    return EnvAction(
        forward=bool(rng.integers(2)),
        back=bool(rng.integers(4) == 0),
        strafe_left=bool(rng.integers(4) == 0),
        strafe_right=bool(rng.integers(4) == 0),
        turn_dx=float(rng.normal(0, 60)),
    )


def collect_dataset(n_episodes: int, seed: int = 0,
                    cfg: CorridorConfig = CorridorConfig(),
                    max_steps: int = 800,
                    correction_noise: float = 0.0) -> list:
    """Expert rollouts as Trajectories. With correction_noise > 0, each
    frame is taken over by a random agent action with that probability and
    its loss mask set False: the expert frames are the 'supervisor' data,
    the noise frames carry no loss."""
    trajectories = []
    for ep in range(n_episodes):
        world = reset(cfg, seed + ep)
        rng = np.random.default_rng((seed + ep, 1))
        frames, actions, mask = [], [], []
        for _ in range(max_steps):
            frames.append(render(world))
            if correction_noise > 0.0 and rng.uniform() < correction_noise:
                act = _random_env_action(rng)
                mask.append(False)
            else:
                act = expert_action(world)
                mask.append(True)
            actions.append(act.to_raw())
            env_step(world, act)
            if world.lap_completed:
                break
        trajectories.append(Trajectory(
            frames=np.stack(frames),
            actions=tuple(actions),
            loss_mask=np.array(mask, dtype=bool),
            game_id="corridor",
        ))
    return trajectories


def collect_target_dataset(n_episodes: int, seed: int = 0,
                           cfg: TargetConfig = TargetConfig(),
                           episode_steps: int = 400) -> list:
    trajectories = []
    for ep in range(n_episodes):
        world = reset_targets(cfg, seed + ep)
        frames, actions = [], []
        from .targets import render_targets
        for _ in range(episode_steps):
            frames.append(render_targets(world))
            act = expert_target_action(world)
            actions.append(act)
            target_step(world, act)
        trajectories.append(Trajectory(
            frames=np.stack(frames),
            actions=tuple(actions),
            loss_mask=np.ones(episode_steps, dtype=bool),
            game_id="target_tap",
        ))
    return trajectories


def evaluate(step_fn, n_episodes: int = 16, step_budget: int = 1500,
             cfg: CorridorConfig = CorridorConfig(), seed: int = 0,
             on_episode_start=None) -> EvaluationStats:
    """Closed-loop corridor evaluation. step_fn(frame) -> EnvAction or
    RawAction; on_episode_start() is called before each episode (use it to
    reset a stateful policy engine)."""
    if step_budget <= 0:
        raise ValueError("step_budget must be positive")
    results = []
    for ep in range(n_episodes):
        if on_episode_start is not None:
            on_episode_start()
        world = reset(cfg, seed + ep)
        frame = render(world)
        steps = math.inf
        for t in range(step_budget):
            act = step_fn(frame)
            if isinstance(act, RawAction):
                act = EnvAction.from_raw(act)
            frame = env_step(world, act)
            if world.lap_completed:
                steps = t + 1
                break
        results.append(EpisodeResult(
            completed=math.isfinite(steps),
            steps_to_lap=steps,
            wall_contacts=world.wall_contacts,
        ))
    done = [r.steps_to_lap for r in results if r.completed]
    return EvaluationStats(
        results=tuple(results),
        completion_rate=len(done) / n_episodes,
        mean_steps=float(np.mean(done)) if done else float("nan"),
        std_steps=float(np.std(done)) if done else float("nan"),
    )


def random_policy(seed: int = 0):
    rng = np.random.default_rng(seed)
    return lambda frame: _random_env_action(rng)


def engine_policy(engine):
    """Adapt an InferenceEngine to the evaluate() step function."""
    def step_fn(frame):
        action, (dx, dy), _ = engine.step(frame)
        return EnvAction.from_raw(RawAction(
            keys=frozenset(k for k in action.key_slots if k != 0),
            mouse_dx=dx,
            mouse_dy=dy,
            left_btn=bool(action.btn_slots[0]),
            right_btn=bool(action.btn_slots[1]),
        ))
    return step_fn
