"""Decoder-style transformer backbone with RoPE, optional QK norm and
grouped-query attention, usable both batched (full mask) and incrementally
(new tokens attending a KV cache)."""

from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn

from .rope import apply_rope, rope_cos_sin


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        scale = torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps)
        return x * scale * self.weight


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int, n_kv_heads: int,
                 use_qk_norm: bool, rope_base: float):
        super().__init__()
        if dim % n_heads != 0 or n_heads % n_kv_heads != 0:
            raise ValueError("bad head configuration")
        self.n_heads = n_heads
        self.n_kv_heads = n_kv_heads
        self.head_dim = dim // n_heads
        self.rope_base = rope_base
        self.q_proj = nn.Linear(dim, dim, bias=False)
        self.k_proj = nn.Linear(dim, self.head_dim * n_kv_heads, bias=False)
        self.v_proj = nn.Linear(dim, self.head_dim * n_kv_heads, bias=False)
        self.o_proj = nn.Linear(dim, dim, bias=False)
        self.q_norm = RMSNorm(self.head_dim) if use_qk_norm else None
        self.k_norm = RMSNorm(self.head_dim) if use_qk_norm else None

    def forward(self, x, positions, mask, past_kv: Optional[tuple] = None):
        """x: [B, S, D]; positions: [S]; mask: bool [S, S_keys] where
        S_keys counts cached keys first, then the current tokens.
        Returns (out, (k, v)) with k already rotated."""
        b, s, _ = x.shape
        q = self.q_proj(x).view(b, s, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(b, s, self.n_kv_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(b, s, self.n_kv_heads, self.head_dim).transpose(1, 2)
        if self.q_norm is not None:
            q = self.q_norm(q)
            k = self.k_norm(k)
        cos, sin = rope_cos_sin(positions, self.head_dim, self.rope_base)
        cos, sin = cos.to(x.device), sin.to(x.device)
        q = apply_rope(q, cos, sin)
        k = apply_rope(k, cos, sin)

        keys, values = k, v
        if past_kv is not None:
            keys = torch.cat([past_kv[0], k], dim=2)
            values = torch.cat([past_kv[1], v], dim=2)
        if self.n_kv_heads != self.n_heads:
            rep = self.n_heads // self.n_kv_heads
            keys = keys.repeat_interleave(rep, dim=1)
            values = values.repeat_interleave(rep, dim=1)

        logits = q @ keys.transpose(-2, -1) / math.sqrt(self.head_dim)
        logits = logits.masked_fill(~mask[None, None, :, :], float("-inf"))
        attn = torch.softmax(logits, dim=-1)
        out = (attn @ values).transpose(1, 2).reshape(b, s, -1)
        return self.o_proj(out), (k, v)


class Mlp(nn.Module):
    def __init__(self, dim: int, expansion: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, expansion * dim)
        self.fc2 = nn.Linear(expansion * dim, dim)

    def forward(self, x):
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim, n_heads, n_kv_heads, use_qk_norm, rope_base):
        super().__init__()
        self.attn_norm = RMSNorm(dim)
        self.attn = SelfAttention(dim, n_heads, n_kv_heads, use_qk_norm, rope_base)
        self.mlp_norm = RMSNorm(dim)
        self.mlp = Mlp(dim)

    def forward(self, x, positions, mask, past_kv=None):
        h, kv = self.attn(self.attn_norm(x), positions, mask, past_kv)
        x = x + h
        x = x + self.mlp(self.mlp_norm(x))
        return x, kv


class Transformer(nn.Module):
    def __init__(self, dim: int, n_layers: int, n_heads: int, n_kv_heads: int,
                 use_qk_norm: bool = True, rope_base: float = 10000.0):
        super().__init__()
        self.blocks = nn.ModuleList(
            Block(dim, n_heads, n_kv_heads, use_qk_norm, rope_base)
            for _ in range(n_layers)
        )
        self.final_norm = RMSNorm(dim)
        # instrumentation: incremented once per forward call
        self.call_count = 0

    def forward(self, x, positions, mask, past=None):
        """past: list of per-layer (k, v) caches or None.
        Returns (hidden, present) where present holds this call's new
        rotated (k, v) per layer."""
        self.call_count += 1
        present = []
        for i, block in enumerate(self.blocks):
            x, kv = block(x, positions, mask, past[i] if past is not None else None)
            present.append(kv)
        return self.final_norm(x), present
