"""The full policy: image encoder, masked backbone, action decoder, losses.

Per timestep the backbone sees [text, image x N_i, thinking, a_in,
action x 8] token embeddings plus a learned type embedding per role, and
produces one a_in latent per timestep from which the action decoder expands
the 8 action slots.
"""

from __future__ import annotations

import warnings

import torch
from torch import nn

from ..actions import Action
from .config import ModelConfig
from .decoder import ActionDecoder
from .encoder import ImageEncoder
from .layout import N_ROLES, ROLE_ACTION, ROLE_AIN, ROLE_IMAGE, ROLE_TEXT, ROLE_THINK, TokenLayout, build_mask
from .backbone import Transformer

KEYBOARD_SLOTS = slice(0, 4)
MOUSE_SLOTS = slice(4, 6)
BUTTON_SLOTS = slice(6, 8)


def _slot_embeddings(slot_vocabs: tuple, dim: int) -> nn.ModuleList:
    key_table = nn.Embedding(slot_vocabs[0], dim)
    return nn.ModuleList(
        [key_table] * 4 + [nn.Embedding(v, dim) for v in slot_vocabs[4:]]
    )


class PolicyModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.layout = TokenLayout.from_config(cfg)
        d = cfg.hidden_dimension
        self.encoder = ImageEncoder(d, cfg.number_of_image_tokens)
        self.backbone = Transformer(
            d, cfg.number_of_layers, cfg.query_heads, cfg.key_value_heads,
            use_qk_norm=cfg.use_qk_norm, rope_base=cfg.rope_base,
        )
        self.decoder = ActionDecoder(
            d, cfg.decoder_layers, cfg.decoder_heads, cfg.slot_vocabs,
            rope_base=cfg.rope_base,
        )
        self.type_embed = nn.Embedding(N_ROLES, d)
        self.instruction_embed = nn.Embedding(cfg.instruction_vocab, d)
        self.think_token = nn.Parameter(torch.zeros(d))
        self.ain_token = nn.Parameter(torch.zeros(d))
        self.action_embed = _slot_embeddings(cfg.slot_vocabs, d)

    # --- token assembly -------------------------------------------------

    def embed_obs_tokens(self, frames, instruction_ids):
        """frames: [B, T, H, W, 3]; instruction_ids: [B, T].
        Returns the observation-side tokens [B, T, 2+N_i, D] in layout
        order text, image(s), thinking, with type embeddings added."""
        b, t = frames.shape[:2]
        text = self.instruction_embed(instruction_ids) + self.type_embed.weight[ROLE_TEXT]
        img = self.encoder(frames.reshape(b * t, *frames.shape[2:]))
        img = img.view(b, t, self.cfg.number_of_image_tokens, -1)
        img = img + self.type_embed.weight[ROLE_IMAGE]
        think = (self.think_token + self.type_embed.weight[ROLE_THINK]).expand(b, t, 1, -1)
        return torch.cat([text[:, :, None, :], img, think], dim=2)

    def embed_ain_token(self, b, t):
        tok = self.ain_token + self.type_embed.weight[ROLE_AIN]
        return tok.expand(b, t, 1, -1)

    def embed_action_tokens(self, slots):
        """slots: [B, T, 8] -> [B, T, 8, D] with type embeddings added."""
        parts = [self.action_embed[j](slots[..., j]) for j in range(8)]
        return torch.stack(parts, dim=2) + self.type_embed.weight[ROLE_ACTION]

    # --- batch forward ---------------------------------------------------

    def forward(self, frames, action_slots, instruction_ids=None,
                position_offset: int = 0):
        """Teacher-forced batch pass over T <= history_length timesteps.

        frames: [B, T, H, W, 3]; action_slots: [B, T, 8] long (the executed
        actions, conditioning inputs for later timesteps). Returns the a_in
        latents [B, T, D].
        """
        b, t = frames.shape[:2]
        if t > self.cfg.history_length:
            raise ValueError(f"window of {t} exceeds history_length")
        if action_slots.shape != (b, t, 8):
            raise ValueError(f"bad action_slots shape {tuple(action_slots.shape)}")
        if instruction_ids is None:
            instruction_ids = torch.zeros(b, t, dtype=torch.long, device=frames.device)
        obs = self.embed_obs_tokens(frames, instruction_ids)
        ain = self.embed_ain_token(b, t)
        act = self.embed_action_tokens(action_slots)
        x = torch.cat([obs, ain, act], dim=2).reshape(b, t * self.layout.tokens_per_step, -1)

        mask = torch.from_numpy(build_mask(t, self.layout)).to(frames.device)
        positions = torch.arange(x.shape[1]) + position_offset * self.layout.tokens_per_step
        h, _ = self.backbone(x, positions, mask)
        h = h.view(b, t, self.layout.tokens_per_step, -1)
        return h[:, :, self.layout.ain_offset, :]

    # --- action decoding -------------------------------------------------

    def decode_action(self, latent, temperature: float = 0.0, rng=None):
        """latent: [D] or [B, D] -> (Action list or single Action, per-slot
        log-probs). Keys are canonically re-sorted after decoding."""
        single = latent.dim() == 1
        if single:
            latent = latent[None, :]
        slots, logps = self.decoder.decode(latent, temperature=temperature, rng=rng)
        actions = [Action.from_slots(row.tolist()) for row in slots]
        if single:
            return actions[0], logps[0]
        return actions, logps

    # --- losses ----------------------------------------------------------

    def slot_logits(self, frames, action_slots, instruction_ids=None,
                    targets=None):
        """Teacher-forced logits for every frame: list of 8 [B*T, vocab]."""
        if targets is None:
            targets = action_slots
        latents = self.forward(frames, action_slots, instruction_ids)
        d = latents.shape[-1]
        return self.decoder(latents.reshape(-1, d), targets.reshape(-1, 8))

    def bc_loss(self, frames, action_slots, loss_mask, instruction_ids=None,
                targets=None):
        """Behavior-cloning loss over one window batch.

        action_slots are the executed actions and always condition the
        backbone; targets (default: the same tensor) are what the loss is
        computed against. Frames with loss_mask False contribute exactly
        zero gradient. Returns a dict with 'total', 'keyboard', 'mouse',
        'button' and 'slot_losses'.
        """
        if targets is None:
            targets = action_slots
        logits = self.slot_logits(frames, action_slots, instruction_ids, targets)
        tgt = targets.reshape(-1, 8)
        mask = loss_mask.reshape(-1)
        if not bool(mask.any()):
            warnings.warn("all frames masked out; loss defined as zero")
            zero = sum(l.sum() for l in logits) * 0.0
            return {"total": zero, "keyboard": zero, "mouse": zero,
                    "button": zero, "slot_losses": [zero] * 8}
        slot_losses = []
        z_terms = []
        for j in range(8):
            lj = logits[j][mask]
            ce = nn.functional.cross_entropy(lj, tgt[mask][:, j])
            slot_losses.append(ce)
            z_terms.append(torch.logsumexp(lj, dim=-1).pow(2).mean())
        total = sum(slot_losses) / 8
        if self.cfg.z_loss_coeff:
            total = total + self.cfg.z_loss_coeff * sum(z_terms) / 8
        return {
            "total": total,
            "keyboard": sum(slot_losses[KEYBOARD_SLOTS]) / 4,
            "mouse": sum(slot_losses[MOUSE_SLOTS]) / 2,
            "button": sum(slot_losses[BUTTON_SLOTS]) / 2,
            "slot_losses": slot_losses,
        }
