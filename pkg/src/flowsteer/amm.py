"""Contrast-driven amplification of the editing signal.

The editing signal is averaged over channels, min-max normalized per batch
sample into a [0, 1] contrast map, and multiplied back elementwise as
(1 + gain * contrast). The gain grows logarithmically with the latent frame
count, ``gamma * log(F) / log(F0)``, so a single frame gets no
amplification and the reference length F0 gets exactly gamma. The epsilon
in the normalization denominator keeps constant signals at zero contrast
and bounds every multiplier in [1, 1 + gain].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import VideoLatent


@dataclass(frozen=True)
class AmmConfig:
    gamma: float = 1.0
    f0: int = 21
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.f0 < 2:
            raise ValueError(f"f0 must be >= 2, got {self.f0}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class ContrastMap:
    """Per-sample normalized signal contrast, shape (B, 1, F, H, W) in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 5 or arr.shape[1] != 1:
            raise ValueError(f"contrast map must have shape (B, 1, F, H, W), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("contrast map entries must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("contrast map entries must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr = arr.view()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)


def gamma_f(cfg: AmmConfig, frames: int) -> float:
    """Frame-adaptive gain gamma * log(F) / log(F0); zero at F = 1."""
    if frames < 1:
        raise ValueError(f"frame count must be >= 1, got {frames}")
    return cfg.gamma * (math.log(frames) / math.log(cfg.f0))


def contrast_map(dv: VideoLatent, eps: float = 1e-7) -> ContrastMap:
    """Channel-mean signal, min-max normalized independently per sample.

    Minima and maxima are taken over the flattened F*H*W positions of each
    sample; the denominator carries +eps so a constant signal maps to an
    all-zero contrast instead of 0/0.
    """
    mean = dv.data.mean(axis=1, keepdims=True, dtype=np.float32)
    flat = mean.reshape(mean.shape[0], -1)
    lo = flat.min(axis=1).reshape(-1, 1, 1, 1, 1)
    hi = flat.max(axis=1).reshape(-1, 1, 1, 1, 1)
    return ContrastMap((mean - lo) / (hi - lo + np.float32(eps)))


def amplify(dv: VideoLatent, contrast: ContrastMap, gain: float) -> VideoLatent:
    """(1 + gain * contrast) * dv with the contrast broadcast over channels."""
    if gain < 0.0:
        raise ValueError(f"gain must be >= 0, got {gain}")
    factor = 1.0 + np.float32(gain) * contrast.data
    return VideoLatent(factor * dv.data)


def apply_amm(dv: VideoLatent, cfg: AmmConfig, frames: int) -> VideoLatent:
    """Full modulation pass; bitwise identity when frames == 1 or gamma == 0."""
    return amplify(dv, contrast_map(dv, cfg.epsilon), gamma_f(cfg, frames))
