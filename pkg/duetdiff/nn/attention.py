"""
Attention kernel and the decoupled cross-attention site.

A site attends from latent features to three condition streams with one
shared query projection: the two reference token sets (each with its own
key/value adapter layers) and the text stream (c_T followed by c_S).
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from duetdiff.models.prompt import ConditioningBundle
from duetdiff.utils.exceptions import InputError, ShapeMismatchError


def cross_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    heads: int = 1,
    return_probs: bool = False,
):
    """
    Softmax(Q K^T / sqrt(d_head)) V over the last two axes.

    Args:
        q: (..., Lq, d)
        k: (..., Lk, d)
        v: (..., Lk, dv)
        heads: Number of heads; d and dv must be divisible by it
        return_probs: Also return the attention weights

    Returns:
        (..., Lq, dv), and weights of shape (..., heads, Lq, Lk) when requested
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatchError(f"Query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatchError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    d, dv = q.shape[-1], v.shape[-1]
    if d % heads or dv % heads:
        raise ShapeMismatchError(f"Widths {d}/{dv} not divisible by {heads} heads")

    def split(x: torch.Tensor) -> torch.Tensor:
        return x.unflatten(-1, (heads, x.shape[-1] // heads)).transpose(-3, -2)

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(d // heads)
    scores = scores - scores.amax(dim=-1, keepdim=True).detach()
    probs = torch.softmax(scores, dim=-1)
    out = (probs @ vh).transpose(-3, -2).flatten(-2)
    if return_probs:
        return out, probs
    return out


def fusion_map(
    probs_i1: torch.Tensor, probs_i2: torch.Tensor, grid: Tuple[int, int], clamp: bool = True
) -> torch.Tensor:
    """
    Per-location weight of the first visual token of both references.

    Args:
        probs_i1, probs_i2: (B, heads, HW, K) attention weights of the image branches
        grid: (H, W) of the query grid
        clamp: Clamp the sum to [0, 1]

    Returns:
        (B, H, W) map
    """
    m = (probs_i1[..., 0] + probs_i2[..., 0]).mean(dim=-2)
    m = m.reshape(m.shape[0], *grid)
    return m.clamp(0.0, 1.0) if clamp else m


@lru_cache(maxsize=32)
def _sinusoid_table(positions: int, width: int) -> torch.Tensor:
    angles = torch.arange(positions, dtype=torch.float64)[:, None] / torch.pow(
        10000.0, 2 * (torch.arange(width) // 2).to(torch.float64) / max(width, 1)
    )
    table = torch.empty_like(angles)
    table[:, 0::2] = torch.sin(angles[:, 0::2])
    table[:, 1::2] = torch.cos(angles[:, 1::2])
    return table


def grid_position_encoding(height: int, width: int, dim: int) -> torch.Tensor:
    """
    Fixed 2-D sinusoidal encoding of a query grid, row-major; (height * width, dim).

    The first dim // 2 channels encode the row and the rest the column.
    """
    rows = dim // 2
    y = _sinusoid_table(height, rows)[:, None, :].expand(height, width, rows)
    x = _sinusoid_table(width, dim - rows)[None, :, :].expand(height, width, dim - rows)
    return torch.cat([y, x], dim=-1).reshape(height * width, dim)


@dataclass
class SiteBranches:
    """Outputs and weights of the three branches at one site."""

    a_i1: torch.Tensor
    a_i2: torch.Tensor
    a_ts: torch.Tensor
    p_i1: torch.Tensor
    p_i2: torch.Tensor

    def combine(self, lam: float) -> torch.Tensor:
        """lam * (A_I1 + A_I2) + A_TS."""
        return lam * (self.a_i1 + self.a_i2) + self.a_ts


class AttentionSite(nn.Module):
    """
    Decoupled cross-attention over latent features.

    Base layers: norm, to_q, to_k, to_v, to_out. Adapter layers: to_k_i1,
    to_v_i1, to_k_i2, to_v_i2 (only the i1 pair when keys/values are shared).
    With ``query_positions`` a fixed grid encoding is added to the normalized
    features before the query projection.
    """

    def __init__(
        self,
        channels: int,
        cond_dim: int,
        attn_dim: int,
        heads: int = 1,
        groups: int = 8,
        shared_image_kv: bool = False,
        query_positions: bool = False,
    ):
        super().__init__()
        self.heads = heads
        self.shared_image_kv = shared_image_kv
        self.query_positions = query_positions
        self.site_name = "site"

        self.norm = nn.GroupNorm(groups, channels)
        self.to_q = nn.Linear(channels, attn_dim, bias=False)
        self.to_k = nn.Linear(cond_dim, attn_dim, bias=False)
        self.to_v = nn.Linear(cond_dim, attn_dim, bias=False)
        self.to_out = nn.Linear(attn_dim, channels)

        self.to_k_i1 = nn.Linear(cond_dim, attn_dim, bias=False)
        self.to_v_i1 = nn.Linear(cond_dim, attn_dim, bias=False)
        if not shared_image_kv:
            self.to_k_i2 = nn.Linear(cond_dim, attn_dim, bias=False)
            self.to_v_i2 = nn.Linear(cond_dim, attn_dim, bias=False)

    def image_kv(self, which: int) -> Tuple[nn.Linear, nn.Linear]:
        if which == 1 or self.shared_image_kv:
            return self.to_k_i1, self.to_v_i1
        return self.to_k_i2, self.to_v_i2

    @torch.no_grad()
    def init_image_kv_from_text(self) -> None:
        """Copy the text key/value weights into the image adapter layers."""
        pairs = [(self.to_k_i1, self.to_v_i1)]
        if not self.shared_image_kv:
            pairs.append((self.to_k_i2, self.to_v_i2))
        for k_layer, v_layer in pairs:
            k_layer.weight.copy_(self.to_k.weight)
            v_layer.weight.copy_(self.to_v.weight)

    def queries(self, h: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) features to (B, HW, attn_dim) queries."""
        tokens = self.norm(h).flatten(2).transpose(1, 2)
        if self.query_positions:
            tokens = tokens + grid_position_encoding(h.shape[-2], h.shape[-1], h.shape[1]).to(tokens.dtype)
        return self.to_q(tokens)

    def branches(self, q: torch.Tensor, bundle: ConditioningBundle) -> SiteBranches:
        bundle = bundle.as_batch()
        k1, v1 = self.image_kv(1)
        k2, v2 = self.image_kv(2)
        a_i1, p_i1 = cross_attention(q, k1(bundle.c_I1), v1(bundle.c_I1), self.heads, return_probs=True)
        a_i2, p_i2 = cross_attention(q, k2(bundle.c_I2), v2(bundle.c_I2), self.heads, return_probs=True)
        text = bundle.text_stream()
        a_ts = cross_attention(q, self.to_k(text), self.to_v(text), self.heads)
        return SiteBranches(a_i1=a_i1, a_i2=a_i2, a_ts=a_ts, p_i1=p_i1, p_i2=p_i2)

    def forward(
        self,
        h: torch.Tensor,
        bundle: ConditioningBundle,
        lam: float = 1.0,
        store: Optional["AttentionStore"] = None,
    ) -> torch.Tensor:
        if lam < 0:
            raise InputError(f"lambda must be non-negative, got {lam}")
        b, c, height, width = h.shape
        branches = self.branches(self.queries(h), bundle)
        if store is not None:
            store(self.site_name, "i1", branches.p_i1, (height, width))
            store(self.site_name, "i2", branches.p_i2, (height, width))
        out = self.to_out(branches.combine(lam))
        return h + out.transpose(1, 2).reshape(b, c, height, width)


def site_attend(z_feats: torch.Tensor, bundle: ConditioningBundle, site: AttentionSite, lam: float) -> torch.Tensor:
    """
    Combined cross-attention output at one site, before the output projection.

    Args:
        z_feats: (B, C, H, W) features
        bundle: Conditioning streams
        site: The attention site
        lam: Image-conditioning weight, >= 0

    Returns:
        (B, HW, attn_dim) tensor lam * (A_I1 + A_I2) + A_TS
    """
    if lam < 0:
        raise InputError(f"lambda must be non-negative, got {lam}")
    return site.branches(site.queries(z_feats), bundle).combine(lam)


def extract_attention_map(
    z_feats: torch.Tensor, bundle: ConditioningBundle, site: AttentionSite, clamp: bool = True
) -> torch.Tensor:
    """Fusion map at one site from the first token of each reference; (B, H, W)."""
    branches = site.branches(site.queries(z_feats), bundle)
    return fusion_map(branches.p_i1, branches.p_i2, tuple(z_feats.shape[-2:]), clamp=clamp)


def upsample_map(m: torch.Tensor, size: int) -> torch.Tensor:
    """(B, h, w) map to (B, 1, size, size) by bilinear interpolation."""
    m = m.unsqueeze(1)
    if m.shape[-1] == size and m.shape[-2] == size:
        return m
    return F.interpolate(m, size=(size, size), mode="bilinear", align_corners=False)


class AttentionStore:
    """
    Collects image-branch attention weights per site across sampling steps.

    Sites call the store during a forward pass; ``between_steps`` folds the
    current step into the running sums.
    """

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.step_store: Dict[Tuple[str, str], torch.Tensor] = {}
        self.attention_store: Dict[Tuple[str, str], torch.Tensor] = {}
        self.grids: Dict[str, Tuple[int, int]] = {}
        self.cur_step = 0

    def __call__(self, site: str, branch: str, probs: torch.Tensor, grid: Tuple[int, int]) -> None:
        self.step_store[(site, branch)] = probs.detach()
        self.grids[site] = grid

    def latest(self, site: str, branch: str) -> torch.Tensor:
        return self.step_store[(site, branch)]

    def between_steps(self) -> None:
        for key, probs in self.step_store.items():
            averaged = probs.mean(dim=-3)
            if key in self.attention_store:
                self.attention_store[key] = self.attention_store[key] + averaged
            else:
                self.attention_store[key] = averaged.clone()
        self.step_store = {}
        self.cur_step += 1

    def get_average_attention(self) -> Dict[Tuple[str, str], torch.Tensor]:
        """Head-averaged weights per (site, branch), averaged over steps; (B, HW, K)."""
        if self.cur_step == 0:
            return {}
        return {key: value / self.cur_step for key, value in self.attention_store.items()}
