"""Rotary position embedding, applied at every backbone layer.

Queries and keys are rotated by their absolute token position; attention
logits then depend only on relative positions, which is what lets the
sliding-window cache keep globally increasing positions without re-basing.
"""

from __future__ import annotations

import torch


def rope_cos_sin(positions: torch.Tensor, head_dim: int, base: float = 10000.0):
    """positions: [S] int64 -> (cos, sin), each [S, head_dim/2]."""
    half = head_dim // 2
    inv_freq = base ** (-torch.arange(half, dtype=torch.float64) / half)
    angles = positions.to(torch.float64)[:, None] * inv_freq[None, :]
    return angles.cos(), angles.sin()


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate pairs (x[2i], x[2i+1]); x is [..., S, head_dim]."""
    cos = cos.to(x.dtype)
    sin = sin.to(x.dtype)
    x1 = x[..., 0::2]
    x2 = x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out
