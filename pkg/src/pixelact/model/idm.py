"""Inverse dynamics model: label actions from frames alone.

Non-causal variant of the policy backbone. Each timestep contributes its
image tokens plus one readout token, the attention mask is all-true over
the window (future frames are visible), and all 8 action slots are
predicted jointly from the readout latent by per-slot linear heads, with
no autoregression.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..actions import (
    Action,
    QuantileBinning,
    RawAction,
    TruncatedNormalParams,
    truncated_normal_mean,
)
from ..trajectory import Trajectory
from .backbone import Transformer
from .config import ModelConfig
from .encoder import ImageEncoder


class InverseDynamicsModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_dimension
        self.encoder = ImageEncoder(d, cfg.number_of_image_tokens)
        self.backbone = Transformer(
            d, cfg.number_of_layers, cfg.query_heads, cfg.key_value_heads,
            use_qk_norm=cfg.use_qk_norm, rope_base=cfg.rope_base,
        )
        self.readout_token = nn.Parameter(torch.zeros(d))
        self.image_type = nn.Parameter(torch.zeros(d))
        self.heads = nn.ModuleList(
            nn.Linear(d, v, bias=False) for v in cfg.slot_vocabs
        )

    @property
    def tokens_per_step(self) -> int:
        return self.cfg.number_of_image_tokens + 1

    def forward(self, frames: torch.Tensor) -> list:
        """frames: [B, T, H, W, 3] -> 8 logit tensors, each [B, T, vocab]."""
        b, t = frames.shape[:2]
        img = self.encoder(frames.reshape(b * t, *frames.shape[2:]))
        img = img.view(b, t, self.cfg.number_of_image_tokens, -1) + self.image_type
        ro = self.readout_token.expand(b, t, 1, -1)
        n = self.tokens_per_step
        x = torch.cat([img, ro], dim=2).reshape(b, t * n, -1)
        mask = torch.ones(t * n, t * n, dtype=torch.bool)
        h, _ = self.backbone(x, torch.arange(t * n), mask)
        readout = h.view(b, t, n, -1)[:, :, -1, :]
        return [head(readout) for head in self.heads]

    def loss(self, frames, target_slots):
        """Mean cross-entropy over all 8 slots and all frames."""
        logits = self.forward(frames)
        losses = [
            nn.functional.cross_entropy(
                logits[j].reshape(-1, logits[j].shape[-1]),
                target_slots[..., j].reshape(-1),
            )
            for j in range(8)
        ]
        return sum(losses) / 8


@torch.no_grad()
def pseudo_label(
    idm: InverseDynamicsModel,
    frames: np.ndarray,
    binning: QuantileBinning,
    tn: TruncatedNormalParams = TruncatedNormalParams(),
    game_id: str = "unknown",
) -> Trajectory:
    """Impute actions for an unlabeled frame sequence.

    Argmax per slot, processed in history-length windows; mouse bins map to
    the analytic truncated-normal mean of the bin so the result is
    deterministic. Output carries loss_mask all-true and the pseudo-label
    provenance flag.
    """
    idm.eval()
    t_total = len(frames)
    window = idm.cfg.history_length
    slots = []
    for start in range(0, t_total, window):
        chunk = torch.from_numpy(np.ascontiguousarray(frames[start : start + window]))
        logits = idm(chunk[None])
        slots.append(torch.stack([l[0].argmax(-1) for l in logits], dim=-1))
    slots = torch.cat(slots, dim=0).numpy()

    def bin_value(axis_binning, b, sigma):
        if b == axis_binning.zero_bin_index:
            return 0.0
        lo, hi = axis_binning.bin_bounds(int(b))
        return truncated_normal_mean(lo, hi, sigma)

    actions = []
    for row in slots:
        a = Action.from_slots(row)
        actions.append(RawAction(
            keys=frozenset(k for k in a.key_slots if k != 0),
            mouse_dx=bin_value(binning.x, a.dx_bin, tn.sigma_x),
            mouse_dy=bin_value(binning.y, a.dy_bin, tn.sigma_y),
            left_btn=bool(a.btn_slots[0]),
            right_btn=bool(a.btn_slots[1]),
        ))
    return Trajectory(
        frames=np.asarray(frames, dtype=np.uint8),
        actions=tuple(actions),
        loss_mask=np.ones(t_total, dtype=bool),
        game_id=game_id,
        pseudo_labeled=True,
    )
