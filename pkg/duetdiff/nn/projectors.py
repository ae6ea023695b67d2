"""
Conditioning projectors.

ProjectorP1 compresses reference patch features into a fixed number of
visual tokens with learnable queries; ProjectorP2 aligns a face identity
vector with patch features into one token per subject; SubjectMLP fuses that
token with the subject word's small-text embedding.
"""

import torch
from torch import nn

from duetdiff.nn.attention import cross_attention


class FeedForward(nn.Module):
    """Two linear layers with GELU in between."""

    def __init__(self, dim: int, mult: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * mult)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim * mult, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class ProjectorP1(nn.Module):
    """
    Learnable-query resampler from patch features to visual tokens.

    init_tokens (K, d) are the queries; keys and values come from the
    projected patches followed by init_tokens.
    """

    def __init__(self, d_patch: int, dim: int, num_tokens: int = 16, ff_mult: int = 4):
        super().__init__()
        self.init_tokens = nn.Parameter(torch.zeros(num_tokens, dim))
        self.proj_in = nn.Linear(d_patch, dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.ff = FeedForward(dim, ff_mult)
        self.to_out = nn.Linear(dim, dim, bias=False)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        """
        Args:
            patches: (P, d_patch) or (B, P, d_patch)

        Returns:
            (K, d) or (B, K, d) visual tokens
        """
        x = self.proj_in(patches)
        latents = self.init_tokens.expand(*x.shape[:-2], *self.init_tokens.shape)
        kv = torch.cat([x, latents], dim=-2)
        h = latents + cross_attention(self.to_q(latents), self.to_k(kv), self.to_v(kv))
        h = h + self.ff(h)
        return self.to_out(h)


class ProjectorP2(nn.Module):
    """
    Identity projector.

    The identity vector is lifted by a two-layer projection; the result
    queries itself and the projected patches (only itself when
    ``use_patches`` is off).
    """

    def __init__(self, d_id: int, d_patch: int, dim: int, ff_mult: int = 4, use_patches: bool = True):
        super().__init__()
        self.use_patches = use_patches
        self.id_fc1 = nn.Linear(d_id, dim)
        self.id_act = nn.GELU()
        self.id_fc2 = nn.Linear(dim, dim)
        self.proj_in = nn.Linear(d_patch, dim)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.ff = FeedForward(dim, ff_mult)
        self.to_out = nn.Linear(dim, dim, bias=False)

    def forward(self, identity: torch.Tensor, patches: torch.Tensor) -> torch.Tensor:
        """
        Args:
            identity: (d_id,) or (B, d_id)
            patches: (P, d_patch) or (B, P, d_patch)

        Returns:
            (d,) or (B, d) aligned feature
        """
        f_id = self.id_fc2(self.id_act(self.id_fc1(identity))).unsqueeze(-2)
        kv = torch.cat([f_id, self.proj_in(patches)], dim=-2) if self.use_patches else f_id
        h = f_id + cross_attention(self.to_q(f_id), self.to_k(kv), self.to_v(kv))
        h = h + self.ff(h)
        return self.to_out(h).squeeze(-2)


class SubjectMLP(nn.Module):
    """Two affine layers with GELU: (d_small + d_align) -> d."""

    def __init__(self, d_small: int, d_align: int, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(d_small + d_align, dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, token: torch.Tensor, aligned: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(torch.cat([token, aligned], dim=-1))))
