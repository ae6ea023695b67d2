"""
Toy noise-prediction network with decoupled cross-attention sites.

Layout per level: a residual block then an attention site; levels are
separated by stride-2 downsampling. The decoder upsamples back, adding the
encoder activations of each level, with one residual block per level.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from duetdiff.models.prompt import ConditioningBundle
from duetdiff.models.settings import ModelConfig
from duetdiff.nn.attention import AttentionSite, AttentionStore
from duetdiff.nn.projectors import ProjectorP1, ProjectorP2, SubjectMLP
from duetdiff.utils.exceptions import ShapeMismatchError

logger = logging.getLogger(__name__)

ADAPTER_COMPONENTS = frozenset(
    {"to_k_i1", "to_v_i1", "to_k_i2", "to_v_i2", "projector_p1", "projector_p2", "subject_mlp"}
)


def is_adapter_param(name: str) -> bool:
    """Whether a parameter name belongs to the trainable adapter set."""
    return any(part in ADAPTER_COMPONENTS for part in name.split("."))


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps; (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    """GroupNorm-SiLU-conv twice, with the time embedding added in between."""

    def __init__(self, channels: int, time_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, channels)
        self.norm2 = nn.GroupNorm(groups, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, h: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        x = self.conv1(F.silu(self.norm1(h)))
        x = x + self.time_proj(temb)[:, :, None, None]
        x = self.conv2(F.silu(self.norm2(x)))
        return h + x


class DuetDiffModel(nn.Module):
    """
    Noise predictor eps(z_t, t, c) with its conditioning adapters.

    Attributes:
        projector_p1, projector_p2, subject_mlp: adapter modules building the bundle
        sites: one AttentionSite per level, ordered from full to lowest resolution
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c, g = config.base_channels, config.groups

        self.conv_in = nn.Conv2d(config.in_channels, c, 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(config.time_dim, 4 * config.time_dim),
            nn.SiLU(),
            nn.Linear(4 * config.time_dim, config.time_dim),
        )
        self.down_blocks = nn.ModuleList([ResBlock(c, config.time_dim, g) for _ in range(config.levels)])
        self.sites = nn.ModuleList(
            [
                AttentionSite(
                    c, config.d_text, config.attn_dim, config.heads, g, config.shared_image_kv, config.query_positions
                )
                for _ in range(config.levels)
            ]
        )
        for i, site in enumerate(self.sites):
            site.site_name = f"sites.{i}"
        self.downsamplers = nn.ModuleList([nn.Conv2d(c, c, 3, stride=2, padding=1) for _ in range(config.levels - 1)])
        self.upsamplers = nn.ModuleList([nn.Conv2d(c, c, 3, padding=1) for _ in range(config.levels - 1)])
        self.up_blocks = nn.ModuleList([ResBlock(c, config.time_dim, g) for _ in range(config.levels - 1)])
        self.norm_out = nn.GroupNorm(g, c)
        self.conv_out = nn.Conv2d(c, config.in_channels, 3, padding=1)

        self.projector_p1 = ProjectorP1(config.d_patch, config.d_text, config.num_tokens, config.ff_mult)
        self.projector_p2 = ProjectorP2(
            config.d_id, config.d_patch, config.d_text, config.ff_mult, use_patches=config.use_id_enhancement
        )
        self.subject_mlp = SubjectMLP(config.d_small, config.d_text, config.d_text)

        self._init_weights()

    def __repr__(self) -> str:
        return f"<DuetDiffModel levels={self.config.levels} params={sum(p.numel() for p in self.parameters())}>"

    @torch.no_grad()
    def _init_weights(self) -> None:
        for name, module in self.named_modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)) and is_adapter_param(name):
                nn.init.normal_(module.weight, std=self.config.init_std)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
        nn.init.normal_(self.projector_p1.init_tokens, std=self.config.init_std)
        for site in self.sites:
            site.init_image_kv_from_text()

    @property
    def lowest_site(self) -> AttentionSite:
        return self.sites[-1]

    def null_bundle(
        self, batch_size: int, dtype: torch.dtype, like: Optional[ConditioningBundle] = None
    ) -> ConditioningBundle:
        """
        Zero streams standing in for the empty condition.

        With ``like`` every stream takes that bundle's token counts, so the
        null pass sees as many text tokens as the conditional one. Without it
        the text streams hold a single zero token.

        Raises:
            ShapeMismatchError: ``like`` holds neither one item nor ``batch_size`` items
        """
        if like is None:
            return ConditioningBundle.null(batch_size, self.config.num_tokens, self.config.d_text, dtype=dtype)
        null = like.as_batch().zeros_like()
        if null.batch_size == batch_size:
            return null
        if null.batch_size != 1:
            raise ShapeMismatchError(f"Cannot shape a null condition of {batch_size} from {null.batch_size} items")
        return replace(
            null,
            c_T=null.c_T.expand(batch_size, -1, -1),
            c_I1=null.c_I1.expand(batch_size, -1, -1),
            c_I2=null.c_I2.expand(batch_size, -1, -1),
            c_S=null.c_S.expand(batch_size, -1, -1),
        )

    def forward(
        self,
        z_t: torch.Tensor,
        t: Union[int, torch.Tensor],
        bundle: Optional[ConditioningBundle],
        lam: float = 1.0,
        store: Optional[AttentionStore] = None,
    ) -> torch.Tensor:
        """
        Predict the noise in z_t.

        Args:
            z_t: (B, C, H, W) noisy latents
            t: Timestep, or (B,) timesteps
            bundle: Conditioning streams, or None for the null condition
            lam: Image-conditioning weight applied at every site
            store: Optional recorder of image-branch attention weights

        Returns:
            (B, C, H, W) predicted noise
        """
        if tuple(z_t.shape[1:]) != self.config.latent_shape:
            raise ShapeMismatchError(f"Latent shape {tuple(z_t.shape[1:])} != {self.config.latent_shape}")
        b = z_t.shape[0]
        if bundle is None:
            bundle = self.null_bundle(b, z_t.dtype)
        bundle = bundle.as_batch()
        t = torch.as_tensor(t).reshape(-1).expand(b) if torch.as_tensor(t).numel() == 1 else torch.as_tensor(t)
        temb = self.time_mlp(timestep_embedding(t, self.config.time_dim).to(z_t.dtype))

        h = self.conv_in(z_t)
        skips: List[torch.Tensor] = []
        for level, (block, site) in enumerate(zip(self.down_blocks, self.sites)):
            h = site(block(h, temb), bundle, lam, store)
            if level < self.config.levels - 1:
                skips.append(h)
                h = self.downsamplers[level](h)
        for level in reversed(range(self.config.levels - 1)):
            h = F.interpolate(h, scale_factor=2.0, mode="nearest")
            h = self.upsamplers[level](h) + skips[level]
            h = self.up_blocks[level](h, temb)
        return self.conv_out(F.silu(self.norm_out(h)))


def predict_noise(
    z_t: torch.Tensor,
    t: Union[int, torch.Tensor],
    bundle: Optional[ConditioningBundle],
    model: DuetDiffModel,
    lam: float = 1.0,
) -> torch.Tensor:
    """Noise prediction for a single latent (C, H, W) or a batch."""
    single = z_t.ndim == 3
    out = model(z_t.unsqueeze(0) if single else z_t, t, bundle, lam)
    return out[0] if single else out


@dataclass(frozen=True)
class LayerSpec:
    """One parameter tensor of the architecture."""

    name: str
    shape: Tuple[int, ...]
    group: str
    site: Optional[str]

    @property
    def numel(self) -> int:
        return int(math.prod(self.shape)) if self.shape else 1

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "shape": list(self.shape), "group": self.group, "site": self.site}


@dataclass(frozen=True)
class ArchitectureManifest:
    """Ordered parameter listing plus the attention sites."""

    layers: Tuple[LayerSpec, ...]
    sites: Tuple[str, ...]

    @property
    def parameter_count(self) -> int:
        return sum(layer.numel for layer in self.layers)

    def to_dict(self) -> Dict[str, object]:
        return {"layers": [layer.to_dict() for layer in self.layers], "sites": list(self.sites)}


def describe_architecture(config: Union[ModelConfig, DuetDiffModel]) -> ArchitectureManifest:
    """
    Layer manifest of a model configuration.

    Args:
        config: A ModelConfig, or a built model

    Returns:
        ArchitectureManifest in parameter registration order
    """
    model = config if isinstance(config, DuetDiffModel) else DuetDiffModel(config)
    layers = []
    for name, param in model.named_parameters():
        site = next((s.site_name for s in model.sites if name.startswith(s.site_name + ".")), None)
        layers.append(
            LayerSpec(
                name=name,
                shape=tuple(param.shape),
                group="adapter" if is_adapter_param(name) else "base",
                site=site,
            )
        )
    return ArchitectureManifest(layers=tuple(layers), sites=tuple(s.site_name for s in model.sites))
