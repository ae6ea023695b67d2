"""
Training service: adapter optimization with a frozen backbone, plus the
finite-difference gradient oracle.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from tqdm import tqdm

from duetdiff.models.annotation import AnnotationRecord
from duetdiff.models.prompt import EncodedInputs, PromptSpec
from duetdiff.models.schedule import LatentCodec, NoiseSchedule
from duetdiff.models.settings import ModelConfig, TrainConfig
from duetdiff.nn.denoiser import DuetDiffModel, is_adapter_param
from duetdiff.services.conditioning_service import ConditioningService
from duetdiff.services.diffusion_service import DiffusionService
from duetdiff.services.encoder_service import EncoderService
from duetdiff.services.synth_service import SynthService
from duetdiff.utils.constants import GLYPH_SIZE
from duetdiff.utils.exceptions import InputError, NumericFailure

logger = logging.getLogger(__name__)

STAGE_BASE = "base"
STAGE_ADAPTER = "adapter"


@dataclass(frozen=True)
class TrainingItem:
    """A clean latent with its pre-encoded prompt and references."""

    z0: torch.Tensor
    encoded: EncodedInputs
    image_id: str = ""


@dataclass
class TrainResult:
    """Trained model and per-step losses, as (step, loss) pairs."""

    model: DuetDiffModel
    losses: List[Tuple[int, float]] = field(default_factory=list)
    base_losses: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1][1] if self.losses else None


@dataclass(frozen=True)
class GroupCheck:
    """Gradient comparison for one adapter parameter group."""

    group: str
    coords: int
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_error < self.tol


@dataclass(frozen=True)
class GradCheckReport:
    groups: Tuple[GroupCheck, ...]

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)

    @property
    def worst(self) -> float:
        return max((g.rel_error for g in self.groups), default=0.0)


def build_model(config: ModelConfig, seed: int = 0) -> DuetDiffModel:
    """Model initialized from a seed without touching the global generator."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return DuetDiffModel(config)


def parameter_group(name: str) -> str:
    """Adapter group of a parameter: the adapter module it lives in."""
    parts = name.split(".")
    if parts[0] == "sites":
        return ".".join(parts[:3])
    return parts[0]


class TrainingService:
    """Service for training the adapters."""

    codec = LatentCodec()

    @staticmethod
    def prepare_item(image: np.ndarray, record: AnnotationRecord, config: ModelConfig) -> TrainingItem:
        """
        Encode one rendered record.

        The latent is the render box-downsampled to the model resolution. The
        references are the face tiles cut out at each person's face box, in
        caption-slot order.
        """
        if record.person_count != 2:
            raise InputError(f"Record {record.image_id} has {record.person_count} persons")
        pil = Image.fromarray(image)
        small = np.asarray(pil.resize((config.image_size, config.image_size), Image.BOX))
        z0 = TrainingService.codec.encode(small).to(torch.float32)

        scale = image.shape[1] / record.width
        persons = sorted(record.persons, key=lambda p: p.caption_slot)
        refs = []
        for person in persons:
            box = person.face_bbox.scaled(scale)
            x0, y0, x1, y1 = (int(round(v)) for v in box.to_list())
            tile = image[y0:y1, x0:x1]
            if tile.shape[:2] != (GLYPH_SIZE, GLYPH_SIZE):
                tile = np.asarray(Image.fromarray(tile).resize((GLYPH_SIZE, GLYPH_SIZE), Image.NEAREST))
            ref = SynthService.compose_reference(np.ascontiguousarray(tile))
            if ref.shape[0] != config.reference_size:
                ref = np.asarray(Image.fromarray(ref).resize((config.reference_size,) * 2, Image.NEAREST))
            refs.append(ref)

        prompt = PromptSpec.from_caption(record.caption, persons[0].caption_slot, persons[1].caption_slot)
        encoded = EncoderService.encode_inputs(prompt, refs[0], refs[1], config)
        return TrainingItem(z0=z0, encoded=encoded, image_id=record.image_id)

    @staticmethod
    def prepare_items(
        samples: Sequence[Tuple[np.ndarray, AnnotationRecord]], config: ModelConfig
    ) -> List[TrainingItem]:
        return [TrainingService.prepare_item(image, record, config) for image, record in samples]

    @staticmethod
    def partition_params(model: DuetDiffModel) -> Tuple[List[str], List[str]]:
        """
        Split parameter names into (frozen base, trainable adapter).

        Both lists follow registration order.
        """
        frozen, trainable = [], []
        for name, _ in model.named_parameters():
            (trainable if is_adapter_param(name) else frozen).append(name)
        return frozen, trainable

    @staticmethod
    def set_trainable(model: DuetDiffModel, stage: str) -> List[torch.nn.Parameter]:
        """Enable gradients for one stage's parameters only; returns them."""
        selected = []
        for name, param in model.named_parameters():
            train = is_adapter_param(name) == (stage == STAGE_ADAPTER)
            param.requires_grad_(train)
            if train:
                selected.append(param)
        return selected

    @staticmethod
    def make_optimizer(params: Sequence[torch.nn.Parameter], lr: float, config: TrainConfig) -> torch.optim.AdamW:
        return torch.optim.AdamW(params, lr=lr, betas=config.betas, weight_decay=config.weight_decay)

    @staticmethod
    def train_step(
        model: DuetDiffModel,
        optimizer: torch.optim.Optimizer,
        batch: Sequence[TrainingItem],
        schedule: NoiseSchedule,
        cond_drop_prob: float,
        generator: torch.Generator,
        stage: str = STAGE_ADAPTER,
        step: int = 0,
    ) -> float:
        """
        One optimization step on the noise-prediction loss.

        Per item it draws a timestep uniformly from [1, T], Gaussian noise and
        a dropout decision that nulls the whole bundle, in that order.

        Args:
            model: Model being trained
            optimizer: Optimizer over the stage's parameters
            batch: Non-empty list of items
            schedule: Training schedule
            cond_drop_prob: Probability of the null condition per item
            generator: Seeded generator for all draws
            stage: "adapter" (full bundle, lambda 1) or "base" (text only, lambda 0)
            step: Step index for diagnostics

        Returns:
            The loss before the update

        Raises:
            InputError: Empty batch
            NumericFailure: Non-finite loss
        """
        if not batch:
            raise InputError("Training batch is empty")
        dtype = next(model.parameters()).dtype
        z0 = torch.stack([item.z0 for item in batch]).to(dtype)
        encoded = EncodedInputs.stack([item.encoded for item in batch]).to(dtype)
        size = z0.shape[0]

        t = torch.randint(1, schedule.T + 1, (size,), generator=generator)
        eps = torch.randn(z0.shape, generator=generator, dtype=dtype)
        keep = torch.rand(size, generator=generator) >= cond_drop_prob

        if stage == STAGE_BASE:
            bundle, lam = ConditioningService.text_only(encoded, model), 0.0
        else:
            bundle, lam = ConditioningService.assemble(encoded, model), 1.0
        bundle = bundle.masked(keep)

        z_t = DiffusionService.forward_diffuse(z0, t, eps, schedule)
        loss = DiffusionService.noise_loss(eps, model(z_t, t, bundle, lam))
        if not bool(torch.isfinite(loss)):
            logger.error(f"Non-finite {stage} loss at step {step}")
            raise NumericFailure(f"Non-finite loss at step {step}", step=step, stage=stage)

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        return float(loss.detach())

    @staticmethod
    def _run_stage(
        model: DuetDiffModel,
        items: Sequence[TrainingItem],
        schedule: NoiseSchedule,
        config: TrainConfig,
        generator: torch.Generator,
        stage: str,
        steps: int,
        lr: float,
        show_progress: bool,
    ) -> List[Tuple[int, float]]:
        params = TrainingService.set_trainable(model, stage)
        optimizer = TrainingService.make_optimizer(params, lr, config)
        losses = []
        model.train()
        for step in tqdm(range(1, steps + 1), desc=f"{stage} stage", disable=not show_progress):
            idx = torch.randint(0, len(items), (config.batch_size,), generator=generator).tolist()
            batch = [items[i] for i in idx]
            loss = TrainingService.train_step(
                model, optimizer, batch, schedule, config.cond_drop_prob, generator, stage=stage, step=step
            )
            losses.append((step, loss))
            if config.log_every and step % config.log_every == 0:
                logger.info(f"{stage} step {step}/{steps}: loss {loss:.6f}")
        return losses

    @staticmethod
    def train(
        items: Sequence[TrainingItem],
        model_config: ModelConfig,
        config: TrainConfig,
        schedule: NoiseSchedule,
        model: Optional[DuetDiffModel] = None,
        show_progress: bool = False,
    ) -> TrainResult:
        """
        Train a model on prepared items.

        An optional backbone stage trains the base parameters with text-only
        conditioning; the image key/value layers are then re-initialized
        from the trained text ones and the adapter stage trains the adapters
        with the backbone frozen.

        Args:
            items: Prepared training items (non-empty)
            model_config: Architecture of a fresh model
            config: Optimization settings; ``seed`` fixes init and every draw
            schedule: Training schedule
            model: Start from this model instead of a fresh one
            show_progress: Show tqdm progress bars

        Returns:
            TrainResult with the model and loss curves
        """
        if not items:
            raise InputError("Training needs at least one item")
        model = model if model is not None else build_model(model_config, config.seed)
        generator = torch.Generator().manual_seed(int(config.seed))
        result = TrainResult(model=model)

        if config.base_steps > 0:
            result.base_losses = TrainingService._run_stage(
                model, items, schedule, config, generator, STAGE_BASE, config.base_steps, config.base_lr, show_progress
            )
            for site in model.sites:
                site.init_image_kv_from_text()
            logger.info(f"Backbone stage done after {config.base_steps} steps")

        result.losses = TrainingService._run_stage(
            model, items, schedule, config, generator, STAGE_ADAPTER, config.steps, config.lr, show_progress
        )
        TrainingService.set_trainable(model, STAGE_ADAPTER)
        model.eval()
        if result.losses:
            logger.info(f"Adapter stage: loss {result.losses[0][1]:.6f} -> {result.losses[-1][1]:.6f}")
        return result

    @staticmethod
    @torch.no_grad()
    def finite_diff_grad(
        loss_fn: Callable[[], float],
        params: Sequence[torch.Tensor],
        h: float = 1e-4,
        indices: Optional[Sequence[torch.Tensor]] = None,
    ) -> List[torch.Tensor]:
        """
        Central differences (f(p + h) - f(p - h)) / 2h per scalar parameter.

        Args:
            loss_fn: Evaluates the loss at the current parameter values
            params: Tensors perturbed in place and restored afterwards
            h: Step, > 0
            indices: Optional flat coordinates per tensor; all coordinates when omitted

        Returns:
            One float64 tensor per parameter: full-shaped, or the values at ``indices``
        """
        if h <= 0:
            raise InputError(f"Finite-difference step must be positive, got {h}")
        grads = []
        for n, param in enumerate(params):
            flat = param.view(-1)
            coords = range(flat.numel()) if indices is None else [int(i) for i in indices[n]]
            values = []
            for i in coords:
                original = flat[i].clone()
                flat[i] = original + h
                plus = float(loss_fn())
                flat[i] = original - h
                minus = float(loss_fn())
                flat[i] = original
                values.append((plus - minus) / (2.0 * h))
            out = torch.tensor(values, dtype=torch.float64)
            grads.append(out.view(param.shape) if indices is None else out)
        return grads

    @staticmethod
    def gradient_check(
        config: Optional[ModelConfig] = None,
        seed: int = 0,
        h: float = 1e-4,
        tol: float = 1e-3,
        max_coords: int = 0,
        lam: float = 0.7,
    ) -> GradCheckReport:
        """
        Compare analytic and finite-difference gradients per adapter group.

        Runs in float64 on a one-site model (ModelConfig.micro() by default).
        The relative error of a group is |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-10)
        over its checked coordinates.

        Args:
            config: Model configuration
            seed: Seed for weights, inputs and coordinate sampling
            h: Central-difference step
            tol: Relative error tolerance
            max_coords: Coordinates sampled per group; 0 checks all of them
            lam: Image-conditioning weight used in the forward pass

        Returns:
            GradCheckReport with one row per group
        """
        config = config or ModelConfig.micro()
        model = build_model(config, seed).to(torch.float64)
        generator = torch.Generator().manual_seed(int(seed))

        def randn(*shape: int) -> torch.Tensor:
            return torch.randn(shape, generator=generator, dtype=torch.float64)

        n_tokens = 5
        n_patches = (config.reference_size // config.patch_size) ** 2
        encoded = EncodedInputs(
            small=randn(n_tokens, config.d_small),
            text=randn(n_tokens, config.d_text),
            patches1=randn(n_patches, config.d_patch),
            patches2=randn(n_patches, config.d_patch),
            id1=randn(config.d_id),
            id2=randn(config.d_id),
            m1=1,
            m2=3,
        )
        schedule = DiffusionService.make_schedule(100, 1e-4, 2e-2)
        t = torch.tensor([50])
        eps = randn(1, *config.latent_shape)
        z_t = DiffusionService.forward_diffuse(randn(1, *config.latent_shape), t, eps, schedule)

        def loss() -> torch.Tensor:
            bundle = ConditioningService.assemble(encoded, model)
            return DiffusionService.noise_loss(eps, model(z_t, t, bundle, lam))

        groups: Dict[str, List[Tuple[str, torch.nn.Parameter]]] = {}
        for name, param in model.named_parameters():
            param.requires_grad_(is_adapter_param(name))
            if is_adapter_param(name):
                groups.setdefault(parameter_group(name), []).append((name, param))

        model.zero_grad(set_to_none=True)
        loss().backward()

        rows = []
        for group, members in groups.items():
            params = [p for _, p in members]
            indices = []
            for p in params:
                count = p.numel()
                if max_coords and count > max_coords:
                    indices.append(torch.randperm(count, generator=generator)[:max_coords].sort().values)
                else:
                    indices.append(torch.arange(count))
            fd = TrainingService.finite_diff_grad(lambda: float(loss()), params, h, indices)
            analytic = torch.cat([p.grad.reshape(-1)[idx] for p, idx in zip(params, indices)])
            numeric = torch.cat(fd)
            scale = max(float(analytic.norm()), float(numeric.norm()), 1e-10)
            rel = float((analytic - numeric).norm()) / scale
            rows.append(GroupCheck(group=group, coords=int(numeric.numel()), rel_error=rel, tol=tol))
            level = logging.INFO if rel < tol else logging.WARNING
            logger.log(level, f"gradcheck {group}: rel error {rel:.3e} over {numeric.numel()} coords")
        if not math.isfinite(max((r.rel_error for r in rows), default=0.0)):
            raise NumericFailure("Gradient check produced a non-finite error")
        return GradCheckReport(groups=tuple(rows))
