"""Small trainable convolutional image encoder.

Maps one RGB frame to N_i tokens of the backbone's hidden dimension. Four
stride-2 blocks take 64x64 down to 4x4, an adaptive pool fixes the grid for
other resolutions, then a linear layer flattens to the token(s).
"""

from __future__ import annotations

import torch
from torch import nn


class ImageEncoder(nn.Module):
    def __init__(self, hidden_dim: int, n_tokens: int, channels: int = 32):
        super().__init__()
        if not 1 <= n_tokens <= 4:
            raise ValueError("n_tokens must be in 1..4")
        self.n_tokens = n_tokens
        chans = [3, channels, channels * 2, channels * 2, channels * 2]
        layers = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            layers += [nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.GELU()]
        self.conv = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.proj = nn.Linear(chans[-1] * 16, n_tokens * hidden_dim)
        self.hidden_dim = hidden_dim

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """frames: [B, H, W, 3] uint8 or float -> [B, n_tokens, hidden]."""
        if not frames.is_floating_point():
            frames = frames.to(self.proj.weight.dtype) / 255.0
        else:
            frames = frames.to(self.proj.weight.dtype)
        x = frames.permute(0, 3, 1, 2)
        x = self.pool(self.conv(x)).flatten(1)
        return self.proj(x).view(-1, self.n_tokens, self.hidden_dim)
