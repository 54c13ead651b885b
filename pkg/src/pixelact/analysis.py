"""Offline metrics: causality score, keyboard perplexity, the
training-inference gap probe and checkpoint selection.

The causality score perturbs image frames by swapping in the same-index
frame of another same-game batch element with probability p, then sums the
KL divergence between the model's factored action distributions on the
original and perturbed sequences at the final timestep of each chunk.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class CausalityEvalConfig:
    chunks: int = 10
    perturb_prob: float = 0.5
    batch_size: int = 32

    def __post_init__(self):
        if not 0.0 <= self.perturb_prob <= 1.0:
            raise ValueError("perturb_prob must be in [0, 1]")
        if self.chunks < 1 or self.batch_size < 1:
            raise ValueError("chunks and batch_size must be >= 1")


def _slot_log_probs(model, frames, slots):
    """Teacher-forced per-slot log-probabilities at every frame.
    Returns a list of 8 tensors [B, T, vocab]."""
    b, t = frames.shape[:2]
    logits = model.slot_logits(frames, slots)
    return [torch.log_softmax(l, dim=-1).view(b, t, -1) for l in logits]


def _factored_kl(logp, logq):
    """Sum over the 8 slots of KL(p || q); inputs are per-slot log-prob
    lists, output shape [B, T]."""
    total = 0.0
    for lp, lq in zip(logp, logq):
        # exact KL is nonnegative; float32 rounding can dip just below 0
        total = total + (lp.exp() * (lp - lq)).sum(-1).clamp_min(0.0)
    return total


@torch.no_grad()
def causality_score(model, sequences, cfg: CausalityEvalConfig,
                    rng: np.random.Generator) -> float:
    """sequences: list of dicts with 'frames' [T, H, W, 3] uint8, 'slots'
    [T, 8] int64 and 'game_id'. Sequences are truncated to a common length
    divisible by cfg.chunks. Returns the summed KL score (>= 0)."""
    sequences = sequences[: cfg.batch_size]
    t = min(len(s["frames"]) for s in sequences)
    t -= t % cfg.chunks
    if t == 0:
        raise ValueError("sequences shorter than one chunk")
    chunk = t // cfg.chunks
    final_idx = np.arange(1, cfg.chunks + 1) * chunk - 1

    frames = np.stack([np.asarray(s["frames"][:t]) for s in sequences])
    slots = np.stack([np.asarray(s["slots"][:t]) for s in sequences])
    games = [s["game_id"] for s in sequences]

    perturbed = frames.copy()
    kept = []
    for b in range(len(sequences)):
        partners = [j for j in range(len(sequences))
                    if j != b and games[j] == games[b]]
        if not partners:
            warnings.warn(f"sequence {b}: no same-game partner in batch, skipped")
            continue
        kept.append(b)
        for idx in range(t):
            if rng.uniform() < cfg.perturb_prob:
                perturbed[b, idx] = frames[partners[rng.integers(len(partners))], idx]
    if not kept:
        raise ValueError("no sequence had a same-game partner")

    frames_t = torch.from_numpy(frames[kept])
    pert_t = torch.from_numpy(perturbed[kept])
    slots_t = torch.from_numpy(slots[kept])
    logp = _slot_log_probs(model, frames_t, slots_t)
    logq = _slot_log_probs(model, pert_t, slots_t)
    kl = _factored_kl(logp, logq)  # [B, T]
    return float(kl[:, final_idx].sum())


@torch.no_grad()
def keyboard_perplexity(model, prepared, window: int | None = None,
                        batch_size: int = 8) -> float:
    """exp(mean cross-entropy of the 4 keyboard slots over unmasked frames).

    prepared: list of dicts from train.prepare_trajectory."""
    window = window or model.cfg.history_length
    total_ce, total_count = 0.0, 0
    for p in prepared:
        t = len(p["frames"])
        for start in range(0, t, window):
            end = min(start + window, t)
            mask = p["mask"][start:end]
            if not mask.any():
                continue
            frames = torch.from_numpy(np.ascontiguousarray(p["frames"][start:end]))[None]
            slots = torch.from_numpy(p["slots"][start:end])[None]
            instr = torch.from_numpy(p["instructions"][start:end])[None]
            logits = model.slot_logits(frames, slots, instr)
            tgt = slots.reshape(-1, 8)
            m = torch.from_numpy(mask)
            for j in range(4):
                ce = torch.nn.functional.cross_entropy(
                    logits[j][m], tgt[m][:, j], reduction="sum")
                total_ce += float(ce)
                total_count += int(m.sum())
    if total_count == 0:
        raise ValueError("no unmasked frames in dataset")
    return float(np.exp(total_ce / total_count))


# --- lossy transforms for the training-inference gap probe ----------------

def lossy_transform(name: str, strength: float):
    """Deterministic frame transforms standing in for codec loss.
    Names: additive_noise (std in channel units), downscale (factor >= 1),
    quantize (bits kept per channel)."""
    if name == "additive_noise":
        def fn(frames):
            noise_rng = np.random.default_rng(12345)
            noise = noise_rng.normal(0.0, strength, frames.shape)
            return np.clip(frames.astype(np.float64) + noise, 0, 255).astype(np.uint8)
        return fn
    if name == "downscale":
        def fn(frames):
            if strength <= 1:
                return frames.copy()
            f = int(strength)
            small = frames[:, ::f, ::f]
            return np.repeat(np.repeat(small, f, axis=1), f, axis=2)[
                :, : frames.shape[1], : frames.shape[2]]
        return fn
    if name == "quantize":
        def fn(frames):
            bits = int(strength)
            if bits >= 8:
                return frames.copy()
            shift = 8 - bits
            return ((frames >> shift) << shift).astype(np.uint8)
        return fn
    raise ValueError(f"unknown transform {name!r}")


@torch.no_grad()
def gap_probe(model, frames: np.ndarray, slots: np.ndarray, transform) -> float:
    """Mean per-frame KL between the action distributions on raw and
    transformed frames. frames: [T, H, W, 3] uint8; slots: [T, 8]."""
    t = min(len(frames), model.cfg.history_length)
    frames = np.asarray(frames[:t])
    slots_t = torch.from_numpy(np.asarray(slots[:t]))[None]
    raw = torch.from_numpy(frames)[None]
    lossy = torch.from_numpy(transform(frames))[None]
    logp = _slot_log_probs(model, raw, slots_t)
    logq = _slot_log_probs(model, lossy, slots_t)
    return float(_factored_kl(logp, logq).mean())


def gap_probe_sweep(model, frames, slots, name: str, strengths) -> list:
    """Rows of (transform, strength, mean_KL) over a strength sweep."""
    return [(name, s, gap_probe(model, frames, slots, lossy_transform(name, s)))
            for s in strengths]


def select_checkpoint(series):
    """Minimum recorded test loss; ties go to the earliest entry.
    series: sequence of objects with a test_loss attribute (or
    (step, test_loss) pairs)."""
    if not series:
        raise ValueError("empty checkpoint series")
    def loss(e):
        return e[1] if isinstance(e, tuple) else e.test_loss
    best = 0
    for i in range(1, len(series)):
        if loss(series[i]) < loss(series[best]):
            best = i
    return series[best]
