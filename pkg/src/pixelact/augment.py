"""Training-time frame augmentation.

Each augmentation fires independently with its own probability; parameters
are drawn from the configured ranges. Identical (frame, seed) pairs produce
byte-identical outputs. Planckian jitter and ISO color shift are approximated
by per-channel gain jitter; everything else follows the standard recipe
(small rotation, color perturbation, additive noise, gaussian/motion blur,
sharpening, horizontal translation).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import cv2
import numpy as np


@dataclass(frozen=True)
class AugmentConfig:
    spatial_p: float = 1.0
    rotation_deg: float = 3.0

    color_p: float = 0.25
    color_shift_max: float = 0.2  # brightness/contrast/saturation/hue ~ U(0, max)

    channel_jitter_p: float = 0.25  # stand-in for planckian jitter + ISO color shift
    channel_jitter_max: float = 0.2

    noise_p: float = 0.1
    noise_intensity: tuple = (0.1, 0.6)

    blur_p: float = 0.2
    blur_kernel: tuple = (3, 7)
    blur_sigma: tuple = (0.1, 2.0)

    sharpen_p: float = 0.15
    sharpen_range: tuple = (0.5, 1.5)

    translate_p: float = 0.25
    translate_frac: float = 0.03

    def __post_init__(self):
        for name in ("spatial_p", "color_p", "channel_jitter_p", "noise_p",
                     "blur_p", "sharpen_p", "translate_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("noise_intensity", "blur_kernel", "blur_sigma", "sharpen_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} range is empty")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(spatial_p=0.0, color_p=0.0, channel_jitter_p=0.0, noise_p=0.0,
                   blur_p=0.0, sharpen_p=0.0, translate_p=0.0)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1))

    @classmethod
    def load(cls, path) -> "AugmentConfig":
        data = json.loads(Path(path).read_text())
        for key in ("noise_intensity", "blur_kernel", "blur_sigma", "sharpen_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def _odd_kernel(rng: np.random.Generator, lo: int, hi: int) -> int:
    candidates = [k for k in range(lo, hi + 1) if k % 2 == 1]
    return int(rng.choice(candidates))


def augment(frame: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Return an augmented copy of an [H, W, 3] uint8 frame."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.dtype != np.uint8:
        raise ValueError("frame must be [H, W, 3] uint8")
    h, w = frame.shape[:2]
    out = frame.astype(np.float32)

    if rng.uniform() < cfg.spatial_p:
        angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
        if angle != 0.0:
            m = cv2.getRotationMatrix2D((w / 2, h / 2), angle, 1.0)
            out = cv2.warpAffine(out, m, (w, h), flags=cv2.INTER_LINEAR,
                                 borderMode=cv2.BORDER_REFLECT_101)

    if rng.uniform() < cfg.color_p:
        brightness, contrast, saturation, hue = rng.uniform(0.0, cfg.color_shift_max, 4)
        sign = rng.choice([-1.0, 1.0], 4)
        out = out * (1.0 + sign[0] * brightness)
        mean = out.mean()
        out = mean + (out - mean) * (1.0 + sign[1] * contrast)
        gray = out.mean(axis=2, keepdims=True)
        out = gray + (out - gray) * (1.0 + sign[2] * saturation)
        hsv = cv2.cvtColor(np.clip(out, 0, 255).astype(np.uint8), cv2.COLOR_RGB2HSV)
        hsv = hsv.astype(np.float32)
        hsv[..., 0] = (hsv[..., 0] + sign[3] * hue * 90.0) % 180.0
        out = cv2.cvtColor(hsv.astype(np.uint8), cv2.COLOR_HSV2RGB).astype(np.float32)

    if rng.uniform() < cfg.channel_jitter_p:
        gains = 1.0 + rng.uniform(-cfg.channel_jitter_max, cfg.channel_jitter_max, 3)
        out = out * gains[None, None, :]

    if rng.uniform() < cfg.noise_p:
        intensity = rng.uniform(*cfg.noise_intensity)
        out = out + rng.normal(0.0, intensity * 255.0 * 0.1, out.shape)

    if rng.uniform() < cfg.blur_p:
        k = _odd_kernel(rng, *cfg.blur_kernel)
        if rng.uniform() < 0.5:
            sigma = rng.uniform(*cfg.blur_sigma)
            out = cv2.GaussianBlur(out, (k, k), sigma)
        else:
            angle = rng.uniform(0.0, 360.0)
            kernel = np.zeros((k, k), np.float32)
            kernel[k // 2, :] = 1.0 / k
            m = cv2.getRotationMatrix2D((k / 2 - 0.5, k / 2 - 0.5), angle, 1.0)
            kernel = cv2.warpAffine(kernel, m, (k, k))
            s = kernel.sum()
            if s > 0:
                kernel /= s
            out = cv2.filter2D(out, -1, kernel)

    if rng.uniform() < cfg.sharpen_p:
        factor = rng.uniform(*cfg.sharpen_range)
        blurred = cv2.GaussianBlur(out, (3, 3), 1.0)
        out = blurred + factor * (out - blurred)

    if rng.uniform() < cfg.translate_p:
        shift = int(round(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * w))
        if shift != 0:
            out = np.roll(out, shift, axis=1)

    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
