"""
Diffusion service: schedules, forward noising, guidance, reverse update, loss.

All functions are pure; schedules keep float64 coefficients and cast them to
the dtype of the tensors they act on.
"""

import logging
import math
from typing import List, Union

import torch
import torch.nn.functional as F

from duetdiff.models.schedule import NoiseSchedule
from duetdiff.utils.constants import ReverseUpdate
from duetdiff.utils.exceptions import ConfigurationError, ShapeMismatchError

logger = logging.getLogger(__name__)

Timestep = Union[int, torch.Tensor]


def _coefficient(values: torch.Tensor, t: Timestep, like: torch.Tensor) -> torch.Tensor:
    """Gather values[t-1] and shape it to broadcast against ``like``."""
    idx = torch.as_tensor(t, dtype=torch.long) - 1
    picked = values[idx].to(like.dtype)
    if picked.ndim == 0:
        return picked
    return picked.view(-1, *([1] * (like.ndim - 1)))


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


class DiffusionService:
    """Service for the diffusion algebra."""

    @staticmethod
    def make_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
        """
        Linear beta schedule.

        Args:
            T: Number of timesteps
            beta_start: First beta
            beta_end: Last beta

        Returns:
            NoiseSchedule with alphas = 1 - beta and sigmas = 0

        Raises:
            ConfigurationError: T < 1 or betas outside 0 <= start <= end < 1
        """
        if int(T) != T or T < 1:
            raise ConfigurationError(f"Timestep count must be a positive integer, got {T}")
        if not (0.0 <= beta_start <= beta_end < 1.0):
            raise ConfigurationError(f"Invalid beta range: start={beta_start}, end={beta_end}")
        betas = torch.linspace(beta_start, beta_end, int(T), dtype=torch.float64)
        return NoiseSchedule.from_alphas(1.0 - betas)

    @staticmethod
    def timestep_sequence(T: int, steps: int) -> List[int]:
        """
        Evenly spaced descending timesteps from T to 1 inclusive.

        Duplicates produced by rounding are dropped, so fewer than ``steps``
        values come back when steps > T.
        """
        if steps < 1:
            raise ConfigurationError(f"Sampling needs at least one step, got {steps}")
        if steps == 1:
            return [int(T)]
        raw = torch.linspace(float(T), 1.0, steps, dtype=torch.float64).round().long().tolist()
        seen = []
        for t in raw:
            if t not in seen:
                seen.append(int(t))
        return seen

    @staticmethod
    def forward_diffuse(z0: torch.Tensor, t: Timestep, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
        """
        Noise a clean latent to timestep t.

        Args:
            z0: Clean latent
            t: Timestep in [1, T], or a (B,) tensor of timesteps for a batch
            eps: Gaussian noise with z0's shape
            schedule: Noise schedule

        Returns:
            sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps
        """
        _check_same_shape(z0, eps, "forward_diffuse")
        schedule.check_timestep(t)
        bar = _coefficient(schedule.alpha_bars, t, z0)
        return torch.sqrt(bar) * z0 + torch.sqrt(1.0 - bar) * eps

    @staticmethod
    def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor, w: float) -> torch.Tensor:
        """Classifier-free guidance: eps_uncond + w * (eps_cond - eps_uncond)."""
        _check_same_shape(eps_uncond, eps_cond, "cfg_combine")
        return eps_uncond + w * (eps_cond - eps_uncond)

    @staticmethod
    def denoise_step(
        z_t: torch.Tensor,
        eps_hat: torch.Tensor,
        t: Timestep,
        schedule: NoiseSchedule,
        eps_fresh: torch.Tensor = None,
    ) -> torch.Tensor:
        """
        One reverse update from t to t - 1.

        (1/sqrt(a_t)) * (z_t - ((1 - a_t) / sqrt(1 - abar_t)) * eps_hat) + sigma_t * eps_fresh.
        The middle coefficient is 0 where abar_t = 1.

        Args:
            z_t: Current latent
            eps_hat: Predicted noise
            t: Timestep in [1, T]
            schedule: Noise schedule
            eps_fresh: Fresh noise; ignored when sigma_t = 0

        Returns:
            The latent at t - 1
        """
        _check_same_shape(z_t, eps_hat, "denoise_step")
        schedule.check_timestep(t)
        alpha = _coefficient(schedule.alphas, t, z_t)
        bar = _coefficient(schedule.alpha_bars, t, z_t)
        one_minus_bar = 1.0 - bar
        coef = torch.where(
            one_minus_bar > 0,
            (1.0 - alpha) / torch.sqrt(torch.clamp(one_minus_bar, min=torch.finfo(z_t.dtype).tiny)),
            torch.zeros_like(one_minus_bar),
        )
        out = (z_t - coef * eps_hat) / torch.sqrt(alpha)
        sigma = _coefficient(schedule.sigmas, t, z_t)
        if eps_fresh is not None and bool((sigma != 0).any()):
            _check_same_shape(z_t, eps_fresh, "denoise_step")
            out = out + sigma * eps_fresh
        return out

    @staticmethod
    def predict_clean(z_t: torch.Tensor, eps_hat: torch.Tensor, t: Timestep, schedule: NoiseSchedule) -> torch.Tensor:
        """(z_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)."""
        _check_same_shape(z_t, eps_hat, "predict_clean")
        schedule.check_timestep(t)
        bar = _coefficient(schedule.alpha_bars, t, z_t)
        return (z_t - torch.sqrt(1.0 - bar) * eps_hat) / torch.sqrt(bar)

    @staticmethod
    def ddim_step(
        z_t: torch.Tensor,
        eps_hat: torch.Tensor,
        t: Timestep,
        schedule: NoiseSchedule,
        clip: bool = True,
    ) -> torch.Tensor:
        """
        Deterministic implicit update from t to t - 1.

        sqrt(abar_{t-1}) * x0_hat + sqrt(1 - abar_{t-1}) * eps_hat, with abar_0 = 1.
        The noise component keeps the scale the next timestep expects.

        Args:
            z_t: Current latent
            eps_hat: Predicted noise
            t: Timestep in [1, T]
            schedule: Noise schedule, usually respaced over the sampled timesteps
            clip: Clamp x0_hat to the codec range [-1, 1]

        Returns:
            The latent at t - 1
        """
        x0 = DiffusionService.predict_clean(z_t, eps_hat, t, schedule)
        if clip:
            x0 = x0.clamp(-1.0, 1.0)
        previous = torch.cat([torch.ones(1, dtype=schedule.alpha_bars.dtype), schedule.alpha_bars[:-1]])
        bar_prev = _coefficient(previous, t, z_t)
        return torch.sqrt(bar_prev) * x0 + torch.sqrt(1.0 - bar_prev) * eps_hat

    @staticmethod
    def reverse_step(
        z_t: torch.Tensor, eps_hat: torch.Tensor, t: Timestep, schedule: NoiseSchedule, update: str, clip: bool = True
    ) -> torch.Tensor:
        """Dispatch one reverse update by name: "ddim" or "mean"."""
        if update == ReverseUpdate.DDIM:
            return DiffusionService.ddim_step(z_t, eps_hat, t, schedule, clip=clip)
        if update == ReverseUpdate.MEAN:
            return DiffusionService.denoise_step(z_t, eps_hat, t, schedule)
        raise ConfigurationError(f"Unknown reverse update: {update!r}")

    @staticmethod
    def noise_loss(eps_true: torch.Tensor, eps_pred: torch.Tensor) -> torch.Tensor:
        """Mean over all elements of the squared difference."""
        _check_same_shape(eps_true, eps_pred, "noise_loss")
        return F.mse_loss(eps_pred, eps_true, reduction="mean")

    @staticmethod
    def stage_a_iterations(steps: int, stage_split: float) -> int:
        """Number of leading iterations run as the text-emphasized stage."""
        return int(math.ceil(stage_split * steps - 1e-12))
