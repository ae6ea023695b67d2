"""
Typed configurations for the model, training and sampling.

Each is a frozen dataclass validated on construction and buildable from a
resolved RunConfig.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

from duetdiff.utils.constants import REVERSE_UPDATES, ReverseUpdate
from duetdiff.utils.exceptions import ConfigurationError


@dataclass(frozen=True)
class ModelConfig:
    """
    Shape and variant switches of the denoiser and its adapters.

    Attributes:
        image_size: Latent side (latents are in_channels x image_size x image_size)
        levels: Resolution levels; one attention site per level
        base_channels: Feature channels at every level
        attn_dim: Query/key width at every attention site
        num_tokens: Visual tokens per reference
        d_small, d_text, d_patch, d_id: Encoder widths
        reference_size: Side of reference images fed to the patch encoder
        shared_image_kv: Both references use one key/value projection pair
        use_subject_conditioning: Identity features replace the subject token rows
        use_id_enhancement: The identity projector attends over patch features
        query_positions: Add a fixed grid encoding to the attention queries
    """

    image_size: int = 32
    in_channels: int = 3
    levels: int = 2
    base_channels: int = 32
    groups: int = 8
    attn_dim: int = 32
    heads: int = 1
    num_tokens: int = 16
    d_small: int = 32
    d_text: int = 64
    d_patch: int = 32
    d_id: int = 32
    patch_size: int = 8
    reference_size: int = 32
    ff_mult: int = 4
    time_dim: int = 32
    init_std: float = 0.02
    shared_image_kv: bool = False
    use_subject_conditioning: bool = True
    use_id_enhancement: bool = True
    query_positions: bool = True

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigurationError("The denoiser needs at least one level")
        if self.image_size % (2 ** (self.levels - 1)) != 0:
            raise ConfigurationError(f"image_size {self.image_size} not divisible across {self.levels} levels")
        if self.base_channels % self.groups != 0:
            raise ConfigurationError(f"base_channels {self.base_channels} not divisible by groups {self.groups}")
        if self.attn_dim % self.heads != 0:
            raise ConfigurationError(f"attn_dim {self.attn_dim} not divisible by heads {self.heads}")
        if self.reference_size % self.patch_size != 0:
            raise ConfigurationError(f"reference_size {self.reference_size} not divisible by patch {self.patch_size}")
        if self.d_small > self.d_text:
            raise ConfigurationError("The small text width cannot exceed the large text width")
        if self.num_tokens < 1:
            raise ConfigurationError("At least one visual token is required")
        if self.time_dim % 2 != 0:
            raise ConfigurationError("time_dim must be even")

    @property
    def latent_shape(self) -> Tuple[int, int, int]:
        return (self.in_channels, self.image_size, self.image_size)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def from_run_config(cls, run_config) -> "ModelConfig":
        return cls(
            image_size=run_config["image_size"],
            levels=run_config["levels"],
            base_channels=run_config["base_channels"],
            attn_dim=run_config["attn_dim"],
            heads=run_config["heads"],
            num_tokens=run_config["num_tokens"],
            d_small=run_config["d_small"],
            d_text=run_config["d_text"],
            d_patch=run_config["d_patch"],
            d_id=run_config["d_id"],
            patch_size=run_config["patch_size"],
            shared_image_kv=run_config["shared_image_kv"],
            use_subject_conditioning=run_config["use_subject_conditioning"],
            use_id_enhancement=run_config["use_id_enhancement"],
            query_positions=run_config["query_positions"],
        )

    @classmethod
    def micro(cls) -> "ModelConfig":
        """One-site model small enough for finite-difference checks."""
        return cls(
            image_size=8,
            levels=1,
            base_channels=4,
            groups=2,
            attn_dim=4,
            num_tokens=2,
            d_small=4,
            d_text=8,
            d_patch=4,
            d_id=4,
            patch_size=4,
            reference_size=8,
            ff_mult=2,
            time_dim=4,
            init_std=0.2,
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; lr and weight decay apply to the adapter stage."""

    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-5
    weight_decay: float = 0.01
    cond_drop_prob: float = 0.1
    seed: int = 0
    betas: Tuple[float, float] = (0.9, 0.999)
    base_steps: int = 0
    base_lr: float = 1e-3
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 0 or self.base_steps < 0:
            raise ConfigurationError("Step counts cannot be negative")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr < 0 or self.base_lr < 0:
            raise ConfigurationError("Learning rates cannot be negative")
        if not 0.0 <= self.cond_drop_prob <= 1.0:
            raise ConfigurationError(f"cond_drop_prob must lie in [0, 1], got {self.cond_drop_prob}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay cannot be negative")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_run_config(cls, run_config) -> "TrainConfig":
        return cls(
            steps=run_config["train_steps"],
            batch_size=run_config["batch_size"],
            lr=run_config["lr"],
            weight_decay=run_config["weight_decay"],
            cond_drop_prob=run_config["cond_drop_prob"],
            seed=run_config["seed"],
            betas=(run_config["adam_beta1"], run_config["adam_beta2"]),
            base_steps=run_config["base_steps"],
            base_lr=run_config["base_lr"],
            log_every=run_config["log_every"],
        )


@dataclass(frozen=True)
class SamplerConfig:
    """
    Sampling settings.

    Attributes:
        steps: Sampling iterations
        guidance: Classifier-free guidance scale w
        lam: Image-conditioning weight of the attenuated condition
        stage_split: Fraction of leading iterations using only the attenuated condition
        seed: Seed of the initial latent
        m_recompute: Recompute the fusion map at every late step; otherwise keep the first one
        m_override: Force the fusion map to a constant
        update: Reverse rule, "ddim" (from the predicted clean latent) or "mean" (posterior mean)
        clip_sample: Clamp the predicted clean latent to [-1, 1] in the implicit rule
    """

    steps: int = 50
    guidance: float = 7.5
    lam: float = 0.6
    stage_split: float = 0.2
    seed: int = 0
    m_recompute: bool = True
    m_override: Optional[float] = None
    update: str = ReverseUpdate.DDIM
    clip_sample: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"steps must be positive, got {self.steps}")
        if not 0.0 <= self.stage_split <= 1.0:
            raise ConfigurationError(f"stage_split must lie in [0, 1], got {self.stage_split}")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be non-negative, got {self.lam}")
        if self.m_override is not None and not 0.0 <= self.m_override <= 1.0:
            raise ConfigurationError(f"m_override must lie in [0, 1], got {self.m_override}")
        if self.update not in REVERSE_UPDATES:
            raise ConfigurationError(f"update must be one of {REVERSE_UPDATES}, got {self.update!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_run_config(cls, run_config) -> "SamplerConfig":
        return cls(
            steps=run_config["steps"],
            guidance=run_config["guidance"],
            lam=run_config["lambda"],
            stage_split=run_config["stage_split"],
            seed=run_config["seed"],
            m_recompute=run_config["m_recompute"],
            m_override=run_config["m_override"],
            update=run_config["update"],
            clip_sample=run_config["clip_sample"],
        )
