"""
Noise schedule, latent state and latent codec.
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

from duetdiff.utils.exceptions import ConfigurationError, InputError


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Per-timestep diffusion coefficients.

    Timesteps are 1-based: coefficient arrays are indexed with ``t - 1``.

    Attributes:
        T: Number of timesteps
        alphas: alpha_t, shape (T,), float64
        alpha_bars: cumulative products of alphas, shape (T,), float64
        sigmas: reverse-process noise scales, shape (T,), zero for deterministic sampling
    """

    T: int
    alphas: torch.Tensor
    alpha_bars: torch.Tensor
    sigmas: torch.Tensor

    def __repr__(self) -> str:
        return f"<NoiseSchedule T={self.T}>"

    @classmethod
    def from_alphas(cls, alphas: Union[Sequence[float], torch.Tensor]) -> "NoiseSchedule":
        """Build a deterministic schedule (sigma = 0) from per-step alphas."""
        alphas = torch.as_tensor(alphas, dtype=torch.float64).flatten()
        if alphas.numel() < 1:
            raise ConfigurationError("A schedule needs at least one timestep")
        if bool(((alphas <= 0) | (alphas > 1)).any()):
            raise ConfigurationError("alphas must lie in (0, 1]")
        alpha_bars = torch.cumprod(alphas, dim=0)
        return cls(
            T=int(alphas.numel()),
            alphas=alphas,
            alpha_bars=alpha_bars,
            sigmas=torch.zeros_like(alphas),
        )

    def check_timestep(self, t: Union[int, torch.Tensor]) -> None:
        """Raise InputError unless every t lies in [1, T]."""
        values = torch.as_tensor(t)
        if values.numel() == 0 or bool((values < 1).any()) or bool((values > self.T).any()):
            raise InputError(f"Timestep out of range [1, {self.T}]: {t}")

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t - 1])

    def respace(self, timesteps: Sequence[int]) -> "NoiseSchedule":
        """
        Schedule over a subsequence of timesteps.

        Entry j (1-based, ascending) keeps alpha_bar of the j-th smallest
        timestep, and alpha_j = alpha_bar[s_j] / alpha_bar[s_{j-1}], so one
        reverse step on the respaced schedule jumps between consecutive
        kept timesteps.
        """
        kept = sorted(set(int(t) for t in timesteps))
        self.check_timestep(torch.tensor(kept))
        bars = self.alpha_bars[torch.tensor(kept) - 1]
        previous = torch.cat([torch.ones(1, dtype=torch.float64), bars[:-1]])
        alphas = bars / previous
        return NoiseSchedule(T=len(kept), alphas=alphas, alpha_bars=bars, sigmas=torch.zeros_like(bars))


@dataclass
class LatentState:
    """A latent and the timestep it belongs to."""

    z: torch.Tensor
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise InputError(f"Timestep must be non-negative, got {self.t}")
        if not bool(torch.isfinite(self.z).all()):
            raise InputError("Latent contains non-finite values")


@dataclass(frozen=True)
class LatentCodec:
    """
    Affine map between 8-bit pixels and latents.

    encode: x -> x / scale + offset; decode is its inverse. With the defaults
    pixels 0..255 map onto [-1, 1].
    """

    scale: float = 127.5
    offset: float = -1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigurationError("Codec scale must be positive")

    def encode(self, pixels: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
        """HWC uint8 (or float) pixels to a CHW float64 latent."""
        x = torch.as_tensor(np.asarray(pixels), dtype=torch.float64)
        if x.ndim == 3:
            x = x.permute(2, 0, 1)
        return x / self.scale + self.offset

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """CHW latent back to CHW float pixel values (not rounded)."""
        return (z.to(torch.float64) - self.offset) * self.scale

    @staticmethod
    def to_pixels(x: torch.Tensor) -> np.ndarray:
        """Round and clip CHW float pixels to an HWC uint8 array."""
        x = x.detach().to(torch.float64)
        if x.ndim == 4:
            x = x[0]
        arr = torch.round(x).clamp(0, 255).to(torch.uint8).permute(1, 2, 0).contiguous()
        return arr.numpy()
