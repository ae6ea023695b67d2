"""
Sampler service: two-stage guided sampling.

Early iterations use classifier-free guidance with the lambda-weighted
condition only. Later iterations blend that prediction with the fully
conditioned one, weighting each latent location by the fusion map read off
the first visual token's attention at the lowest-resolution site.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from duetdiff.models.prompt import ConditioningBundle
from duetdiff.models.schedule import LatentCodec, NoiseSchedule
from duetdiff.models.settings import SamplerConfig
from duetdiff.nn.attention import AttentionStore, fusion_map, upsample_map
from duetdiff.nn.denoiser import DuetDiffModel
from duetdiff.services.diffusion_service import DiffusionService
from duetdiff.utils.exceptions import InputError, NumericFailure

logger = logging.getLogger(__name__)

STAGE_EARLY = "A"
STAGE_FUSED = "B"


@dataclass(frozen=True)
class StepRecord:
    """Trace entry for one sampling iteration."""

    step: int
    t: int
    stage: str
    m_mean: Optional[float] = None
    m_max: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return {"step": self.step, "t": self.t, "stage": self.stage, "m_mean": self.m_mean, "m_max": self.m_max}


@dataclass
class SampleTrace:
    """
    What happened during one sampling run.

    Attributes:
        steps: One record per iteration
        m_maps: Fusion maps (S, S) of the fused-stage iterations, keyed by iteration
        attention: Head-averaged image-branch weights per (site, branch), averaged over iterations
        grids: Query grid (h, w) of every site
    """

    steps: List[StepRecord] = field(default_factory=list)
    m_maps: Dict[int, np.ndarray] = field(default_factory=dict)
    attention: Dict[Tuple[str, str], torch.Tensor] = field(default_factory=dict)
    grids: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    @property
    def stages(self) -> List[str]:
        return [record.stage for record in self.steps]

    def to_records(self) -> List[Dict[str, object]]:
        return [record.to_dict() for record in self.steps]


def _check_finite(z: torch.Tensor, step: int, t: int) -> None:
    if not bool(torch.isfinite(z).all()):
        logger.error(f"Non-finite latent at sampling step {step} (t={t})")
        raise NumericFailure(f"Non-finite latent at sampling step {step}", step=step, t=t)


class SamplerService:
    """Service for sampling images from a trained model."""

    codec = LatentCodec()

    @staticmethod
    def fuse(eps_weak: torch.Tensor, eps_full: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
        """(1 - M) * eps_weak + M * eps_full, with M broadcast over channels."""
        return (1.0 - m) * eps_weak + m * eps_full

    @staticmethod
    def initial_latent(model: DuetDiffModel, seed: int, batch_size: int = 1) -> torch.Tensor:
        generator = torch.Generator().manual_seed(int(seed))
        dtype = next(model.parameters()).dtype
        return torch.randn((batch_size, *model.config.latent_shape), generator=generator, dtype=dtype)

    @staticmethod
    def _fusion(store: AttentionStore, model: DuetDiffModel, override: Optional[float], like: torch.Tensor):
        if override is not None:
            return torch.full((like.shape[0], 1, *like.shape[-2:]), float(override), dtype=like.dtype)
        site = model.lowest_site.site_name
        m = fusion_map(store.latest(site, "i1"), store.latest(site, "i2"), store.grids[site])
        return upsample_map(m, model.config.image_size).to(like.dtype)

    @staticmethod
    def _decode(z: torch.Tensor) -> np.ndarray:
        return LatentCodec.to_pixels(SamplerService.codec.decode(z))

    @staticmethod
    @torch.no_grad()
    def sample(
        bundle: ConditioningBundle,
        model: DuetDiffModel,
        schedule: NoiseSchedule,
        config: SamplerConfig,
    ) -> Tuple[np.ndarray, SampleTrace]:
        """
        Generate one image.

        Args:
            bundle: Conditioning of batch size 1
            model: Trained model
            schedule: Full training schedule; it is respaced over the sampled timesteps
            config: Sampler settings

        Returns:
            Tuple of (HWC uint8 image, SampleTrace)

        Raises:
            InputError: A bundle with more than one item
            NumericFailure: A non-finite latent, with the offending iteration
        """
        bundle = bundle.as_batch()
        if bundle.batch_size != 1:
            raise InputError(f"sample expects one conditioning item, got {bundle.batch_size}")
        timesteps = DiffusionService.timestep_sequence(schedule.T, config.steps)
        respaced = schedule.respace(timesteps)
        total = len(timesteps)
        early = DiffusionService.stage_a_iterations(total, config.stage_split)
        null = model.null_bundle(bundle.batch_size, bundle.c_T.dtype, like=bundle)

        z = SamplerService.initial_latent(model, config.seed)
        store = AttentionStore()
        trace = SampleTrace()
        m = None
        for i, t in enumerate(timesteps):
            eps_null = model(z, t, null)
            eps_weak = DiffusionService.cfg_combine(eps_null, model(z, t, bundle, config.lam, store), config.guidance)
            if i < early:
                eps = eps_weak
                record = StepRecord(step=i, t=t, stage=STAGE_EARLY)
            else:
                if m is None or config.m_recompute:
                    m = SamplerService._fusion(store, model, config.m_override, z)
                eps_full = DiffusionService.cfg_combine(eps_null, model(z, t, bundle, 1.0), config.guidance)
                eps = SamplerService.fuse(eps_weak, eps_full, m)
                trace.m_maps[i] = m[0, 0].detach().cpu().numpy().copy()
                record = StepRecord(step=i, t=t, stage=STAGE_FUSED, m_mean=float(m.mean()), m_max=float(m.max()))
            store.between_steps()
            z = DiffusionService.reverse_step(z, eps, total - i, respaced, config.update, config.clip_sample)
            _check_finite(z, i, t)
            trace.steps.append(record)

        trace.attention = store.get_average_attention()
        trace.grids = dict(store.grids)
        logger.debug(f"Sampled seed {config.seed}: {early}/{total} early iterations")
        return SamplerService._decode(z), trace

    @staticmethod
    @torch.no_grad()
    def sample_plain(
        bundle: ConditioningBundle,
        model: DuetDiffModel,
        schedule: NoiseSchedule,
        config: SamplerConfig,
    ) -> np.ndarray:
        """Single-stage classifier-free guidance with the full condition."""
        bundle = bundle.as_batch()
        timesteps = DiffusionService.timestep_sequence(schedule.T, config.steps)
        respaced = schedule.respace(timesteps)
        null = model.null_bundle(bundle.batch_size, bundle.c_T.dtype, like=bundle)
        z = SamplerService.initial_latent(model, config.seed)
        for i, t in enumerate(timesteps):
            eps = DiffusionService.cfg_combine(model(z, t, null), model(z, t, bundle, 1.0), config.guidance)
            z = DiffusionService.reverse_step(z, eps, len(timesteps) - i, respaced, config.update, config.clip_sample)
            _check_finite(z, i, t)
        return SamplerService._decode(z)

    @staticmethod
    def sample_grid(
        bundle: ConditioningBundle,
        model: DuetDiffModel,
        schedule: NoiseSchedule,
        configs: Sequence[SamplerConfig],
        workers: int = 1,
    ) -> List[Tuple[np.ndarray, SampleTrace]]:
        """
        Sample every config, in order.

        Each config draws its initial latent from its own seeded generator, so
        results do not depend on ``workers``.
        """

        def run(config: SamplerConfig) -> Tuple[np.ndarray, SampleTrace]:
            return SamplerService.sample(bundle, model, schedule, config)

        if workers <= 1:
            return [run(config) for config in configs]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, configs))

    @staticmethod
    def seed_configs(config: SamplerConfig, seeds: Sequence[int]) -> List[SamplerConfig]:
        """Copies of config differing only in seed."""
        return [replace(config, seed=int(seed)) for seed in seeds]
