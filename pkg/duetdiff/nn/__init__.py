"""
Torch modules of the denoiser and its conditioning adapters.
"""

from duetdiff.nn.attention import (
    AttentionSite,
    AttentionStore,
    cross_attention,
    extract_attention_map,
    fusion_map,
    site_attend,
    upsample_map,
)
from duetdiff.nn.denoiser import DuetDiffModel, describe_architecture, is_adapter_param, predict_noise
from duetdiff.nn.projectors import ProjectorP1, ProjectorP2, SubjectMLP

__all__ = [
    "AttentionSite",
    "AttentionStore",
    "DuetDiffModel",
    "ProjectorP1",
    "ProjectorP2",
    "SubjectMLP",
    "cross_attention",
    "describe_architecture",
    "extract_attention_map",
    "fusion_map",
    "is_adapter_param",
    "predict_noise",
    "site_attend",
    "upsample_map",
]
