"""Real-time incremental decoding with a sliding-window cache.

Each `step` runs exactly one backbone forward. While the window is
filling, keys and values are cached per layer and only the new tokens are
processed (the previous step's decoded action enters as that timestep's
action-token inputs, followed by this step's observation tokens and the
a_in token). Once the window is full, cached keys would retain context
from evicted timesteps (a layer-2 key depends on what its token attended
at layer 1), so the engine instead re-runs the backbone over the cached
token embeddings of the last W timesteps; this keeps the per-step a_in
latent exactly equal to a batch forward over the same window. Eviction is
always in whole-timestep units and rotary positions are global.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np
import torch

from .actions import Action, QuantileBinning, TruncatedNormalParams, sample_mouse
from .model.layout import build_mask


@dataclass(frozen=True)
class RealtimeConfig:
    target_hz: int = 20
    window: int | None = None  # defaults to the model's history length
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.target_hz <= 0:
            raise ValueError("target_hz must be positive")


@dataclass
class LatencySample:
    step: int
    encode_us: float
    backbone_us: float
    decode_us: float
    sample_us: float
    total_us: float


@dataclass
class LatencyReport:
    samples: list
    percentiles: dict  # stage -> {p50, p90, p99}
    achieved_fps: float

    def to_csv(self) -> str:
        lines = ["step,encode_us,backbone_us,decode_us,sample_us"]
        for s in self.samples:
            lines.append(f"{s.step},{s.encode_us:.1f},{s.backbone_us:.1f},"
                         f"{s.decode_us:.1f},{s.sample_us:.1f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        out = [f"achieved_fps {self.achieved_fps:.2f}"]
        for stage, pcts in self.percentiles.items():
            out.append(f"{stage} p50 {pcts['p50']:.1f}us p90 {pcts['p90']:.1f}us "
                       f"p99 {pcts['p99']:.1f}us")
        return "\n".join(out) + "\n"


class EngineError(Exception):
    pass


class InferenceEngine:
    def __init__(self, model, binning: QuantileBinning,
                 tn: TruncatedNormalParams = TruncatedNormalParams(),
                 config: RealtimeConfig = RealtimeConfig()):
        self.model = model
        self.model.eval()
        self.binning = binning
        self.tn = tn
        self.config = config
        self.window = (config.window if config.window is not None
                       else model.cfg.history_length)
        if self.window < 1:
            raise ValueError("window must be >= 1")
        self.reset()

    def reset(self) -> None:
        """Empty all caches; the next step is treated as timestep 0."""
        n_layers = len(self.model.backbone.blocks)
        self._kv = [None] * n_layers  # per-layer (k, v), fast path only
        self._kv_cols = 0
        # per-timestep token embeddings, oldest first: (timestep, obs, gt)
        # where gt is None until the step's action has been decoded
        self._emb = deque()
        self._step_index = 0
        self._prev_slots = None
        self._torch_rng = torch.Generator().manual_seed(self.config.seed)
        self._np_rng = np.random.default_rng(self.config.seed)
        # replay log for equivalence checks
        self.latents = []
        self.conditioning_slots = []

    @property
    def cached_timesteps(self) -> int:
        return len(self._emb)

    def _incremental_pass(self, obs, ain, gt_prev):
        """Window not yet full: process only the new tokens against the KV
        cache. Returns the a_in latent."""
        model = self.model
        layout = model.layout
        n, n_obs = layout.tokens_per_step, layout.ain_offset
        i = self._step_index
        parts, positions = [], []
        g = 0
        if gt_prev is not None:
            g = 8
            parts.append(gt_prev)
            base = (i - 1) * n + n_obs + 1
            positions.extend(range(base, base + 8))
        parts += [obs, ain]
        positions.extend(range(i * n, i * n + n_obs + 1))
        x = torch.cat(parts, dim=2).reshape(1, -1, obs.shape[-1])

        s_new = x.shape[1]
        mask = torch.zeros(s_new, self._kv_cols + s_new, dtype=torch.bool)
        mask[:, : self._kv_cols] = True
        block = mask[:, self._kv_cols :]
        block[:g, :g] = True  # prior-step action tokens attend each other
        block[g : g + n_obs, : g + n_obs] = True
        block[g + n_obs, :] = True  # a_in attends the whole step

        h, present = model.backbone(
            x, torch.tensor(positions, dtype=torch.long), mask,
            past=self._kv if self._kv_cols else None,
        )
        keep = torch.ones(s_new, dtype=torch.bool)
        keep[-1] = False  # a_in is never attended, never cached
        for layer, (k_new, v_new) in enumerate(present):
            k_new, v_new = k_new[:, :, keep], v_new[:, :, keep]
            if self._kv[layer] is not None:
                k_new = torch.cat([self._kv[layer][0], k_new], dim=2)
                v_new = torch.cat([self._kv[layer][1], v_new], dim=2)
            self._kv[layer] = (k_new, v_new)
        self._kv_cols += s_new - 1
        return h[0, -1]

    def _windowed_pass(self, ain):
        """Window full: one backbone call over the cached embeddings of the
        last W timesteps, exactly mirroring the batch forward."""
        model = self.model
        layout = model.layout
        n = layout.tokens_per_step
        zero_gt = model.embed_action_tokens(
            torch.zeros(1, 1, 8, dtype=torch.long))
        rows = []
        first_ts = self._emb[0][0]
        for ts, obs_e, gt_e in self._emb:
            gt = gt_e if gt_e is not None else zero_gt  # unattended filler
            rows.append(torch.cat([obs_e, ain, gt], dim=2))
        x = torch.cat(rows, dim=1).reshape(1, -1, rows[0].shape[-1])
        mask = torch.from_numpy(build_mask(len(self._emb), layout))
        positions = torch.arange(x.shape[1]) + first_ts * n
        h, _ = model.backbone(x, positions, mask)
        return h.view(len(self._emb), n, -1)[-1, layout.ain_offset]

    @torch.no_grad()
    def step(self, frame: np.ndarray, instruction_id: int = 0):
        """frame: [H, W, 3] uint8. Returns (Action, (dx, dy), LatencySample)."""
        if not hasattr(self, "_emb"):
            raise EngineError("engine not initialized; call reset()")
        model = self.model
        i = self._step_index
        t_start = time.perf_counter_ns()

        frames = torch.from_numpy(np.ascontiguousarray(frame))[None, None]
        instr = torch.tensor([[instruction_id]], dtype=torch.long)
        obs = model.embed_obs_tokens(frames, instr)
        ain = model.embed_ain_token(1, 1)
        t_encode = time.perf_counter_ns()

        gt_prev = None
        if self._prev_slots is not None:
            prev = torch.tensor(self._prev_slots, dtype=torch.long)[None, None]
            gt_prev = model.embed_action_tokens(prev)
            self._emb[-1] = (self._emb[-1][0], self._emb[-1][1], gt_prev)
        self._emb.append((i, obs, None))
        while len(self._emb) > self.window:
            self._emb.popleft()

        if i < self.window:
            latent = self._incremental_pass(obs, ain, gt_prev)
        else:
            self._kv = [None] * len(self._kv)  # fast path retired
            self._kv_cols = 0
            latent = self._windowed_pass(ain)
        t_backbone = time.perf_counter_ns()

        slots, _ = model.decoder.decode(
            latent[None], temperature=self.config.temperature,
            rng=self._torch_rng)
        action = Action.from_slots(slots[0].tolist())
        t_decode = time.perf_counter_ns()

        # the model's bin vocabulary may exceed the fitted bin count when an
        # axis collapsed; clamp decoded indices into the fitted range
        dx_bin = min(action.dx_bin, self.binning.x.n_bins - 1)
        dy_bin = min(action.dy_bin, self.binning.y.n_bins - 1)
        dx = sample_mouse(dx_bin, "x", self.binning, self.tn, self._np_rng)
        dy = sample_mouse(dy_bin, "y", self.binning, self.tn, self._np_rng)
        t_end = time.perf_counter_ns()

        self._prev_slots = action.slots
        self._step_index = i + 1
        self.latents.append(latent.clone())
        self.conditioning_slots.append(action.slots)
        sample = LatencySample(
            step=i,
            encode_us=(t_encode - t_start) / 1000,
            backbone_us=(t_backbone - t_encode) / 1000,
            decode_us=(t_decode - t_backbone) / 1000,
            sample_us=(t_end - t_decode) / 1000,
            total_us=(t_end - t_start) / 1000,
        )
        return action, (dx, dy), sample


def benchmark(engine: InferenceEngine, frames, n_steps: int,
              warmup: int = 10) -> LatencyReport:
    """frames: iterable of [H, W, 3] uint8 arrays, cycled if shorter than
    n_steps. Percentiles cover steady-state steps (first `warmup` dropped)."""
    if n_steps < 100:
        raise ValueError("benchmark needs n_steps >= 100")
    frames = list(frames)
    engine.reset()
    samples = []
    for i in range(n_steps):
        _, _, s = engine.step(frames[i % len(frames)])
        samples.append(s)
    steady = samples[warmup:]
    percentiles = {}
    for stage in ("encode_us", "backbone_us", "decode_us", "sample_us", "total_us"):
        vals = np.array([getattr(s, stage) for s in steady])
        percentiles[stage] = {
            "p50": float(np.percentile(vals, 50)),
            "p90": float(np.percentile(vals, 90)),
            "p99": float(np.percentile(vals, 99)),
        }
    mean_total_s = float(np.mean([s.total_us for s in steady])) / 1e6
    return LatencyReport(
        samples=steady,
        percentiles=percentiles,
        achieved_fps=1.0 / mean_total_s,
    )
