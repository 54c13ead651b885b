"""Training loops for the policy and the inverse dynamics model.

Plain AdamW over random fixed-length trajectory windows, deterministic
given the seed, with periodic test-loss evaluation and checkpointing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..actions import QuantileBinning, discretize, fit_quantile_bins


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    window: int = 32  # timesteps per training window
    learning_rate: float = 1e-4
    beta_1: float = 0.9
    beta_2: float = 0.999
    weight_decay: float = 1e-4
    eval_every: int = 100
    eval_batches: int = 4
    seed: int = 0
    # probability of replacing a timestep's conditioning action tokens with
    # the all-zero action during training (targets are untouched); combats
    # the copycat shortcut of reading the action history instead of pixels
    action_dropout: float = 0.0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.window < 1:
            raise ValueError("bad training configuration")
        if not 0.0 <= self.action_dropout <= 1.0:
            raise ValueError("action_dropout must be in [0, 1]")


def _bins_per_side(model_cfg) -> int:
    """Largest per-side bin count whose total fits the model's vocabularies."""
    return max((min(model_cfg.mouse_bins_x, model_cfg.mouse_bins_y) - 1) // 2, 1)


def fit_binning_from_trajectories(trajs, bins_per_side: int = 10) -> QuantileBinning:
    """Quantile mouse bins fitted on the supervised frames only: frames with
    loss_mask False (e.g. random-takeover frames) never contribute targets,
    so they should not shape the target vocabulary either."""
    dx = [a.mouse_dx for t in trajs
          for a, m in zip(t.actions, t.loss_mask) if m]
    dy = [a.mouse_dy for t in trajs
          for a, m in zip(t.actions, t.loss_mask) if m]
    if not dx:
        dx = [a.mouse_dx for t in trajs for a in t.actions]
        dy = [a.mouse_dy for t in trajs for a in t.actions]
    return fit_quantile_bins(dx, dy, bins_per_side)


def prepare_trajectory(traj, binning: QuantileBinning) -> dict:
    """Discretize one trajectory into training arrays."""
    slots = np.array(
        [discretize(a, binning).slots for a in traj.actions], dtype=np.int64
    )
    return {
        "frames": traj.frames,
        "slots": slots,
        "mask": np.asarray(traj.loss_mask, dtype=bool),
        "instructions": traj.instruction_ids(),
        "game_id": traj.game_id,
    }


def sample_window_batch(prepared, batch_size, window, rng):
    """Random fixed-length windows across trajectories, as torch tensors."""
    eligible = [p for p in prepared if len(p["frames"]) >= window]
    if not eligible:
        raise ValueError(f"no trajectory is at least {window} frames long")
    frames, slots, masks, instrs = [], [], [], []
    for _ in range(batch_size):
        p = eligible[rng.integers(len(eligible))]
        start = int(rng.integers(len(p["frames"]) - window + 1))
        sl = slice(start, start + window)
        frames.append(p["frames"][sl])
        slots.append(p["slots"][sl])
        masks.append(p["mask"][sl])
        instrs.append(p["instructions"][sl])
    return (
        torch.from_numpy(np.stack(frames)),
        torch.from_numpy(np.stack(slots)),
        torch.from_numpy(np.stack(masks)),
        torch.from_numpy(np.stack(instrs)),
    )


@dataclass
class TrainResult:
    checkpoint_paths: list = field(default_factory=list)
    losses: list = field(default_factory=list)  # (step, train_loss)
    test_losses: list = field(default_factory=list)  # (step, test_loss)
    halted: bool = False


def _loop(model, loss_fn, eval_fn, cfg: TrainConfig, out_dir, kind: str) -> TrainResult:
    from .checkpoint import save_checkpoint

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate,
        betas=(cfg.beta_1, cfg.beta_2), weight_decay=cfg.weight_decay,
    )
    result = TrainResult()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def checkpoint(step):
        test = eval_fn(model, rng)
        result.test_losses.append((step, test))
        if out_dir is not None:
            p = out_dir / f"checkpoint_{step:07d}.bin"
            save_checkpoint(p, model, kind, step=step, test_loss=test, optimizer=opt)
            result.checkpoint_paths.append(p)

    for step in range(1, cfg.steps + 1):
        loss = loss_fn(model, rng)
        if not math.isfinite(float(loss.detach())):
            result.halted = True
            break
        opt.zero_grad()
        loss.backward()
        opt.step()
        result.losses.append((step, float(loss.detach())))
        if step % cfg.eval_every == 0 or step == cfg.steps:
            checkpoint(step)
    if cfg.steps == 0:
        checkpoint(0)
    return result


def train_policy(model, trajectories, cfg: TrainConfig,
                 binning: QuantileBinning | None = None,
                 out_dir=None, test_trajectories=None) -> TrainResult:
    """Behavior-cloning training. Test loss is the mean keyboard slot
    cross-entropy on held-out windows (test_trajectories, or the training
    set when none given)."""
    if binning is None:
        binning = fit_binning_from_trajectories(
            trajectories, _bins_per_side(model.cfg))
    window = min(cfg.window, model.cfg.history_length)
    prepared = [prepare_trajectory(t, binning) for t in trajectories]
    test_prepared = (
        [prepare_trajectory(t, binning) for t in test_trajectories]
        if test_trajectories is not None else prepared
    )

    def loss_fn(model, rng):
        frames, slots, masks, instrs = sample_window_batch(
            prepared, cfg.batch_size, window, rng)
        cond = slots
        if cfg.action_dropout > 0.0:
            drop = torch.from_numpy(
                rng.random(slots.shape[:2]) < cfg.action_dropout)
            cond = slots.clone()
            cond[drop] = 0
        return model.bc_loss(frames, cond, masks, instrs, targets=slots)["total"]

    @torch.no_grad()
    def eval_fn(model, rng):
        eval_rng = np.random.default_rng(cfg.seed + 1)
        total = 0.0
        for _ in range(cfg.eval_batches):
            frames, slots, masks, instrs = sample_window_batch(
                test_prepared, cfg.batch_size, window, eval_rng)
            total += float(model.bc_loss(frames, slots, masks, instrs)["keyboard"])
        return total / cfg.eval_batches

    return _loop(model, loss_fn, eval_fn, cfg, out_dir, "policy")


def train_idm(model, trajectories, cfg: TrainConfig,
              binning: QuantileBinning | None = None,
              out_dir=None, test_trajectories=None) -> TrainResult:
    if binning is None:
        binning = fit_binning_from_trajectories(
            trajectories, _bins_per_side(model.cfg))
    window = min(cfg.window, model.cfg.history_length)
    prepared = [prepare_trajectory(t, binning) for t in trajectories]
    test_prepared = (
        [prepare_trajectory(t, binning) for t in test_trajectories]
        if test_trajectories is not None else prepared
    )

    def loss_fn(model, rng):
        frames, slots, _, _ = sample_window_batch(
            prepared, cfg.batch_size, window, rng)
        return model.loss(frames, slots)

    @torch.no_grad()
    def eval_fn(model, rng):
        eval_rng = np.random.default_rng(cfg.seed + 1)
        total = 0.0
        for _ in range(cfg.eval_batches):
            frames, slots, _, _ = sample_window_batch(
                test_prepared, cfg.batch_size, window, eval_rng)
            total += float(model.loss(frames, slots))
        return total / cfg.eval_batches

    return _loop(model, loss_fn, eval_fn, cfg, out_dir, "idm")
