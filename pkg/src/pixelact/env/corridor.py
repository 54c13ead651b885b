"""Looped-corridor pixel environment with a raycast renderer.

A closed waypoint polyline is carved into an occupancy grid; the agent
drives through the corridor in first person. Rendering is a classic
grid-DDA raycast: one wall column per screen column, flat shading by wall
face and distance over a floor/ceiling gradient. Everything is a pure
function of (seed, action sequence), byte-for-byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..actions import RawAction
from ..keys import key_code

KEY_W = key_code("w")
KEY_A = key_code("a")
KEY_S = key_code("s")
KEY_D = key_code("d")

# rectangular loop with an inward notch: six turns, mixed left and right
DEFAULT_WAYPOINTS = (
    (5.0, 5.0), (26.0, 5.0), (26.0, 16.0), (17.0, 16.0),
    (17.0, 26.0), (5.0, 26.0),
)


@dataclass(frozen=True)
class CorridorConfig:
    waypoints: tuple = DEFAULT_WAYPOINTS
    grid_size: int = 32
    corridor_half_width: float = 2.0  # cells
    resolution: int = 64
    fov: float = math.radians(66)
    move_speed: float = 0.22  # cells per frame
    turn_rate: float = 0.004  # radians per mouse count
    max_turn_counts: float = 120.0
    waypoint_radius: float = 1.6

    def __post_init__(self):
        if len(self.waypoints) < 3:
            raise ValueError("track needs at least 3 waypoints")
        if self.resolution < 16:
            raise ValueError("resolution too small")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps({
            "waypoints": [list(w) for w in self.waypoints],
            "grid_size": self.grid_size,
            "corridor_half_width": self.corridor_half_width,
            "resolution": self.resolution,
        }, indent=1))

    @classmethod
    def load(cls, path) -> "CorridorConfig":
        raw = json.loads(Path(path).read_text())
        raw["waypoints"] = tuple(tuple(w) for w in raw["waypoints"])
        return cls(**raw)


@dataclass(frozen=True)
class EnvAction:
    forward: bool = False
    back: bool = False
    strafe_left: bool = False
    strafe_right: bool = False
    turn_dx: float = 0.0  # mouse counts, positive = clockwise

    def to_raw(self) -> RawAction:
        keys = set()
        if self.forward:
            keys.add(KEY_W)
        if self.back:
            keys.add(KEY_S)
        if self.strafe_left:
            keys.add(KEY_A)
        if self.strafe_right:
            keys.add(KEY_D)
        return RawAction(keys=frozenset(keys), mouse_dx=float(self.turn_dx))

    @classmethod
    def from_raw(cls, raw: RawAction) -> "EnvAction":
        return cls(
            forward=KEY_W in raw.keys,
            back=KEY_S in raw.keys,
            strafe_left=KEY_A in raw.keys,
            strafe_right=KEY_D in raw.keys,
            turn_dx=raw.mouse_dx,
        )


def _carve_grid(cfg: CorridorConfig) -> np.ndarray:
    """True = free cell. Corridor = cells within half_width of the loop."""
    n = cfg.grid_size
    ys, xs = np.mgrid[0:n, 0:n]
    centers = np.stack([xs + 0.5, ys + 0.5], axis=-1).reshape(-1, 2)
    wps = np.asarray(cfg.waypoints)
    dmin = np.full(len(centers), np.inf)
    for i in range(len(wps)):
        a, b = wps[i], wps[(i + 1) % len(wps)]
        ab = b - a
        tt = np.clip(((centers - a) @ ab) / (ab @ ab), 0.0, 1.0)
        proj = a + tt[:, None] * ab
        dmin = np.minimum(dmin, np.linalg.norm(centers - proj, axis=1))
    free = (dmin <= cfg.corridor_half_width).reshape(n, n)
    free[0, :] = free[-1, :] = free[:, 0] = free[:, -1] = False
    return free


class CorridorWorld:
    """Mutable episode state. Construct via `reset`."""

    def __init__(self, cfg: CorridorConfig, seed: int):
        self.cfg = cfg
        self.grid = _carve_grid(cfg)
        wps = cfg.waypoints
        start = seed % len(wps)
        self.pos = np.array(wps[start], dtype=float)
        nxt = wps[(start + 1) % len(wps)]
        self.heading = math.atan2(nxt[1] - self.pos[1], nxt[0] - self.pos[0])
        self.target_idx = (start + 1) % len(wps)
        self.waypoints_reached = 0
        self.wall_contacts = 0
        self.steps = 0

    def free(self, x: float, y: float) -> bool:
        i, j = int(y), int(x)
        if not (0 <= i < self.cfg.grid_size and 0 <= j < self.cfg.grid_size):
            return False
        return bool(self.grid[i, j])

    @property
    def lap_completed(self) -> bool:
        return self.waypoints_reached >= len(self.cfg.waypoints)


def reset(cfg: CorridorConfig = CorridorConfig(), seed: int = 0) -> CorridorWorld:
    return CorridorWorld(cfg, seed)


def env_step(world: CorridorWorld, action: EnvAction) -> np.ndarray:
    """Advance one frame and return the rendered [R, R, 3] uint8 frame."""
    cfg = world.cfg
    dx = float(np.clip(action.turn_dx, -cfg.max_turn_counts, cfg.max_turn_counts))
    world.heading = (world.heading + cfg.turn_rate * dx) % (2 * math.pi)
    fwd = np.array([math.cos(world.heading), math.sin(world.heading)])
    right = np.array([-fwd[1], fwd[0]])
    v = fwd * cfg.move_speed * (int(action.forward) - int(action.back))
    v = v + right * cfg.move_speed * (
        int(action.strafe_right) - int(action.strafe_left))
    if np.any(v):
        # axis-separated slide so grazing a wall does not stop the agent
        blocked = False
        for axis in (0, 1):
            trial = world.pos.copy()
            trial[axis] += v[axis]
            if world.free(trial[0], trial[1]):
                world.pos = trial
            elif v[axis] != 0.0:
                blocked = True
        if blocked:
            world.wall_contacts += 1
    target = np.asarray(cfg.waypoints[world.target_idx])
    if np.linalg.norm(world.pos - target) < cfg.waypoint_radius:
        world.target_idx = (world.target_idx + 1) % len(cfg.waypoints)
        world.waypoints_reached += 1
    world.steps += 1
    return render(world)


def render(world: CorridorWorld) -> np.ndarray:
    """Raycast the current view; pure function of world state."""
    cfg = world.cfg
    res = cfg.resolution
    angles = world.heading + np.arctan(
        np.tan(cfg.fov / 2) * np.linspace(-1, 1, res))
    dirx, diry = np.cos(angles), np.sin(angles)
    px, py = world.pos

    # vectorized DDA over all columns
    mapx = np.full(res, int(px))
    mapy = np.full(res, int(py))
    with np.errstate(divide="ignore"):
        ddx = np.abs(1.0 / dirx)
        ddy = np.abs(1.0 / diry)
    stepx = np.where(dirx < 0, -1, 1)
    stepy = np.where(diry < 0, -1, 1)
    sidex = np.where(dirx < 0, (px - mapx) * ddx, (mapx + 1.0 - px) * ddx)
    sidey = np.where(diry < 0, (py - mapy) * ddy, (mapy + 1.0 - py) * ddy)
    hit_side = np.zeros(res, dtype=np.int64)
    done = np.zeros(res, dtype=bool)
    for _ in range(2 * cfg.grid_size):
        go_x = (sidex < sidey) & ~done
        go_y = ~go_x & ~done
        sidex[go_x] += ddx[go_x]
        mapx[go_x] += stepx[go_x]
        hit_side[go_x] = 0
        sidey[go_y] += ddy[go_y]
        mapy[go_y] += stepy[go_y]
        hit_side[go_y] = 1
        inside = (mapx >= 0) & (mapx < cfg.grid_size) & \
                 (mapy >= 0) & (mapy < cfg.grid_size)
        wall = np.zeros(res, dtype=bool)
        wall[inside] = ~world.grid[mapy[inside], mapx[inside]]
        done |= wall | ~inside
        if done.all():
            break
    dist = np.where(hit_side == 0,
                    sidex - ddx, sidey - ddy)
    dist = np.maximum(dist, 1e-6)

    frame = np.zeros((res, res, 3), dtype=np.float64)
    rows = np.arange(res)[:, None]
    frame[:] = np.where(rows < res // 2, 150.0, 55.0)[..., None]
    # darken floor and ceiling toward the horizon
    horizon_fade = 1.0 - 0.7 * np.exp(-np.abs(rows - res / 2) / (res / 6))
    frame *= horizon_fade[..., None]
    # world-anchored checkerboard on floor and ceiling: each screen row below
    # (above) the horizon is a fixed distance along the ray, so ego-motion
    # shows up as texture flow instead of sub-pixel wall-height changes
    row_center = np.abs(np.arange(res) - (res - 1) / 2)
    row_dist = (res / 2) / np.maximum(row_center, 0.5)
    wx = px + dirx[None, :] * row_dist[:, None]
    wy = py + diry[None, :] * row_dist[:, None]
    checker = ((np.floor(wx) + np.floor(wy)) % 2).astype(np.float64)
    frame *= (0.7 + 0.3 * checker)[..., None]

    height = np.clip((res / dist).astype(np.int64), 0, res)
    top = (res - height) // 2
    bottom = top + height
    shade = 1.0 / (1.0 + 0.08 * dist)
    # N/S and E/W faces get distinct base colors plus a cell-parity stripe
    base = np.where(hit_side[:, None] == 0,
                    np.array([200.0, 90.0, 60.0]),
                    np.array([70.0, 120.0, 200.0]))
    parity = ((mapx + mapy) % 2).astype(float)[:, None]
    color = base * (0.75 + 0.25 * parity) * shade[:, None]
    col_mask = (rows >= top[None, :]) & (rows < bottom[None, :])
    for c in range(3):
        chan = frame[:, :, c]
        chan[col_mask] = np.broadcast_to(color[:, c], (res, res))[col_mask]

    # the current target waypoint is a bright beacon pillar, occlusion
    # tested against the walls: the goal bearing is read straight off the
    # screen as the pillar's horizontal offset from center. The beacon is
    # also a traffic light on a 5-green/4-amber cycle; the scripted expert
    # only drives forward while it shows green, so the throttle rhythm is
    # visible game state rather than a hidden clock
    wp = np.asarray(cfg.waypoints[world.target_idx])
    rel = wp - world.pos
    wp_dist = float(np.hypot(rel[0], rel[1]))
    if wp_dist > 1e-6:
        bearing = math.atan2(rel[1], rel[0])
        off = (angles - bearing + math.pi) % (2 * math.pi) - math.pi
        half_w = max(math.atan(0.4 / wp_dist), 0.025)
        cols = (np.abs(off) <= half_w) & (dist > wp_dist - 0.05)
        if cols.any():
            h = int(np.clip(res / max(wp_dist, 0.5), 4, res))
            b_top = (res - h) // 2
            green = world.steps % 9 < 5
            color = (40.0, 230.0, 60.0) if green else (235.0, 160.0, 30.0)
            frame[b_top:b_top + h, cols] = np.array(color)
    return np.clip(np.rint(frame), 0, 255).astype(np.uint8)


def expert_action(world: CorridorWorld) -> EnvAction:
    """Bang-bang controller toward the next waypoint. Turn commands are
    snapped to three magnitudes (0, fine, coarse) so the mouse channel is a
    small discrete vocabulary: the command is a classification of how far
    off-center the corridor looks, not a regression of a hidden state. The
    forward key is released on sharp turns so keyboard labels vary with
    the view."""
    target = np.asarray(world.cfg.waypoints[world.target_idx])
    to_target = target - world.pos
    desired = math.atan2(to_target[1], to_target[0])
    err = (desired - world.heading + math.pi) % (2 * math.pi) - math.pi
    if abs(err) > 0.30:
        dx = math.copysign(24.0, err)
    elif abs(err) > 0.08:
        dx = math.copysign(8.0, err)
    else:
        dx = 0.0
    # drive only while the beacon shows green: the 5-of-9 duty cycle
    # regulates speed, keeps the forward key under a 60% hold fraction,
    # and is visible on screen as the beacon's traffic-light color
    green = world.steps % 9 < 5
    return EnvAction(forward=green and abs(err) < 0.7, turn_dx=dx)
