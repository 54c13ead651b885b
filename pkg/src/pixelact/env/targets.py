"""Target-tap environment variant: aim the cursor, click the target.

A fixed dark arena shows one highlighted target square at a time; the
agent moves a crosshair with mouse deltas and taps it with the left
button. Scored by hit count. Exercises the mouse bins and button slots the
corridor track never touches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..actions import RawAction


@dataclass(frozen=True)
class TargetConfig:
    resolution: int = 64
    cursor_gain: float = 0.25  # pixels per mouse count
    click_radius: float = 3.0
    target_size: int = 5
    margin: int = 8

    def __post_init__(self):
        if self.resolution < 16 or self.cursor_gain <= 0:
            raise ValueError("bad target config")


class TargetWorld:
    def __init__(self, cfg: TargetConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        c = cfg.resolution / 2
        self.cursor = np.array([c, c], dtype=float)
        self.target = self._spawn()
        self.hits = 0
        self.steps = 0

    def _spawn(self) -> np.ndarray:
        m, r = self.cfg.margin, self.cfg.resolution
        return self.rng.integers(m, r - m, size=2).astype(float)


def reset_targets(cfg: TargetConfig = TargetConfig(), seed: int = 0) -> TargetWorld:
    return TargetWorld(cfg, seed)


def target_step(world: TargetWorld, action: RawAction) -> np.ndarray:
    cfg = world.cfg
    world.cursor += cfg.cursor_gain * np.array([action.mouse_dx, action.mouse_dy])
    world.cursor = np.clip(world.cursor, 0, cfg.resolution - 1)
    if action.left_btn:
        if np.linalg.norm(world.cursor - world.target) <= cfg.click_radius:
            world.hits += 1
            world.target = world._spawn()
    world.steps += 1
    return render_targets(world)


def render_targets(world: TargetWorld) -> np.ndarray:
    cfg = world.cfg
    r = cfg.resolution
    frame = np.full((r, r, 3), 30, dtype=np.uint8)
    tx, ty = int(world.target[0]), int(world.target[1])
    h = cfg.target_size // 2
    frame[max(ty - h, 0) : ty + h + 1, max(tx - h, 0) : tx + h + 1] = (220, 60, 60)
    cx, cy = int(world.cursor[0]), int(world.cursor[1])
    frame[cy, max(cx - 2, 0) : cx + 3] = (255, 255, 255)
    frame[max(cy - 2, 0) : cy + 3, cx] = (255, 255, 255)
    return frame


def expert_target_action(world: TargetWorld) -> RawAction:
    """Proportional aim toward the target, click inside the radius."""
    cfg = world.cfg
    err = world.target - world.cursor
    counts = err / cfg.cursor_gain
    dx = float(np.clip(0.6 * counts[0], -200, 200))
    dy = float(np.clip(0.6 * counts[1], -200, 200))
    close = math.hypot(err[0], err[1]) <= cfg.click_radius
    return RawAction(mouse_dx=0.0 if close else dx,
                     mouse_dy=0.0 if close else dy,
                     left_btn=close)
