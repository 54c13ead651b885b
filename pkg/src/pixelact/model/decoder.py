"""Autoregressive action decoder.

Expands a single per-timestep latent into the 8 action slots, in fixed
order key1..key4, dx_bin, dy_bin, button_left, button_right. Position 0 of
the decoder sequence is the projected latent; position j >= 1 embeds the
value decoded for slot j-1, and the hidden state at position j predicts
slot j. The four key slots share one embedding table; the rest get their
own.
"""

from __future__ import annotations

import torch
from torch import nn

from .backbone import Transformer


class ActionDecoder(nn.Module):
    def __init__(self, hidden_dim: int, n_layers: int, n_heads: int,
                 slot_vocabs: tuple, rope_base: float = 10000.0):
        super().__init__()
        if len(slot_vocabs) != 8 or len(set(slot_vocabs[:4])) != 1:
            raise ValueError("expected 8 slots with a shared key vocabulary")
        self.slot_vocabs = tuple(slot_vocabs)
        self.in_proj = nn.Linear(hidden_dim, hidden_dim)
        key_table = nn.Embedding(slot_vocabs[0], hidden_dim)
        self.value_embed = nn.ModuleList(
            [key_table] * 4 + [nn.Embedding(v, hidden_dim) for v in slot_vocabs[4:]]
        )
        self.pos_embed = nn.Parameter(torch.zeros(9, hidden_dim))
        self.core = Transformer(hidden_dim, n_layers, n_heads, n_heads,
                                use_qk_norm=False, rope_base=rope_base)
        self.heads = nn.ModuleList(
            nn.Linear(hidden_dim, v, bias=False) for v in slot_vocabs
        )
        self.call_count = 0

    def _run(self, latent: torch.Tensor, slots: torch.Tensor) -> list:
        """latent: [B, D]; slots: [B, n] already-decoded values, n <= 8.
        Returns per-position logits for slots 0..n."""
        self.call_count += 1
        b, n = slots.shape
        parts = [self.in_proj(latent)[:, None, :]]
        for j in range(n):
            parts.append(self.value_embed[j](slots[:, j])[:, None, :])
        x = torch.cat(parts, dim=1) + self.pos_embed[None, : n + 1]
        positions = torch.arange(n + 1)
        mask = torch.ones(n + 1, n + 1, dtype=torch.bool).tril()
        h, _ = self.core(x, positions, mask)
        return [self.heads[j](h[:, j]) for j in range(min(n + 1, 8))]

    def forward(self, latent: torch.Tensor, target_slots: torch.Tensor) -> list:
        """Teacher-forced pass. target_slots: [B, 8]. Returns 8 logit
        tensors, logits[j] conditioning on target slots < j."""
        return self._run(latent, target_slots[:, :7])

    @torch.no_grad()
    def decode(self, latent: torch.Tensor, temperature: float = 0.0,
               rng: torch.Generator | None = None):
        """Greedy (temperature 0) or sampled decode, one decoder call per
        slot. Returns (slots [B, 8], per-slot log-probs [B, 8])."""
        b = latent.shape[0]
        slots = torch.zeros(b, 0, dtype=torch.long, device=latent.device)
        logps = []
        for j in range(8):
            logits = self._run(latent, slots)[j]
            logp = torch.log_softmax(logits, dim=-1)
            if temperature <= 0.0:
                choice = logits.argmax(dim=-1)
            else:
                probs = torch.softmax(logits / temperature, dim=-1)
                choice = torch.multinomial(probs, 1, generator=rng)[:, 0]
            logps.append(logp.gather(1, choice[:, None])[:, 0])
            slots = torch.cat([slots, choice[:, None]], dim=1)
        return slots, torch.stack(logps, dim=1)
