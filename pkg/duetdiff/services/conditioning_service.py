"""
Conditioning service: turns encoder outputs into the four conditioning streams.
"""

import logging
from typing import Union

import torch
import torch.nn.functional as F

from duetdiff.models.prompt import ConditioningBundle, EncodedInputs, PromptSpec
from duetdiff.nn.denoiser import DuetDiffModel
from duetdiff.nn.projectors import ProjectorP1, ProjectorP2, SubjectMLP
from duetdiff.services.encoder_service import EncoderService, ImageLike
from duetdiff.utils.exceptions import InputError, ShapeMismatchError

logger = logging.getLogger(__name__)

Index = Union[int, torch.Tensor]


def _as_index(m: Index, batch: int) -> torch.Tensor:
    return torch.as_tensor(m, dtype=torch.long).reshape(-1).expand(batch)


class ConditioningService:
    """Service for building conditioning bundles."""

    @staticmethod
    def project_p1(patches: torch.Tensor, projector: ProjectorP1) -> torch.Tensor:
        """
        Visual tokens of one reference.

        Args:
            patches: (P, d_patch) or (B, P, d_patch) patch features
            projector: Shared patch projector

        Returns:
            (K, d) or (B, K, d) tokens
        """
        return projector(patches)

    @staticmethod
    def project_p2(identity: torch.Tensor, patches: torch.Tensor, projector: ProjectorP2) -> torch.Tensor:
        """Aligned identity feature, one d-vector per subject."""
        return projector(identity, patches)

    @staticmethod
    def lift_text(small: torch.Tensor, width: int) -> torch.Tensor:
        """Zero-pad small-text rows (..., N, d_small) to (..., N, width)."""
        if small.shape[-1] > width:
            raise ShapeMismatchError(f"Cannot lift width {small.shape[-1]} to {width}")
        return F.pad(small, (0, width - small.shape[-1]))

    @staticmethod
    def build_subject_conditioning(
        small: torch.Tensor,
        m1: Index,
        m2: Index,
        f1: torch.Tensor,
        f2: torch.Tensor,
        mlp: SubjectMLP,
        width: int,
        inject: bool = True,
    ) -> torch.Tensor:
        """
        Subject-augmented text rows c_S.

        Rows other than m1 and m2 are the lifted small-text rows. Rows m1 and
        m2 are the subject MLP applied to the word's small-text row joined with
        that subject's aligned feature.

        Args:
            small: (N, d_small) or (B, N, d_small) small-text embeddings
            m1, m2: Subject token indices (ints or (B,) tensors)
            f1, f2: Aligned features, (d,) or (B, d)
            mlp: Subject MLP
            width: Output row width d
            inject: Replace the subject rows; when off only lifted rows are returned

        Returns:
            c_S with the shape of ``small`` but width d

        Raises:
            InputError: m1 equals m2, or an index lies outside the prompt
        """
        unbatched = small.ndim == 2
        if unbatched:
            small, f1, f2 = small.unsqueeze(0), f1.unsqueeze(0), f2.unsqueeze(0)
        batch, n = small.shape[0], small.shape[1]
        i1, i2 = _as_index(m1, batch), _as_index(m2, batch)
        if bool((i1 == i2).any()):
            raise InputError("Subject indices collide: m1 = m2")
        if bool(((i1 < 0) | (i1 >= n) | (i2 < 0) | (i2 >= n)).any()):
            raise InputError(f"Subject index outside prompt of length {n}")

        lifted = ConditioningService.lift_text(small, width)
        if not inject:
            return lifted[0] if unbatched else lifted

        rows = torch.arange(batch)
        s1 = mlp(small[rows, i1], f1)
        s2 = mlp(small[rows, i2], f2)
        at1 = F.one_hot(i1, n).to(torch.bool).unsqueeze(-1)
        at2 = F.one_hot(i2, n).to(torch.bool).unsqueeze(-1)
        c_s = torch.where(at1, s1.unsqueeze(1), torch.where(at2, s2.unsqueeze(1), lifted))
        return c_s[0] if unbatched else c_s

    @staticmethod
    def assemble(encoded: EncodedInputs, model: DuetDiffModel) -> ConditioningBundle:
        """
        Run the trainable adapters over pre-encoded inputs.

        Args:
            encoded: Frozen-encoder outputs, single or batched
            model: Model owning the projectors and subject MLP

        Returns:
            Batched ConditioningBundle
        """
        encoded = encoded.as_batch()
        config = model.config
        c_i1 = ConditioningService.project_p1(encoded.patches1, model.projector_p1)
        c_i2 = ConditioningService.project_p1(encoded.patches2, model.projector_p1)
        f1 = ConditioningService.project_p2(encoded.id1, encoded.patches1, model.projector_p2)
        f2 = ConditioningService.project_p2(encoded.id2, encoded.patches2, model.projector_p2)
        c_s = ConditioningService.build_subject_conditioning(
            encoded.small,
            encoded.m1,
            encoded.m2,
            f1,
            f2,
            model.subject_mlp,
            config.d_text,
            inject=config.use_subject_conditioning,
        )
        return ConditioningBundle(c_T=encoded.text, c_I1=c_i1, c_I2=c_i2, c_S=c_s, m1=encoded.m1, m2=encoded.m2)

    @staticmethod
    def text_only(encoded: EncodedInputs, model: DuetDiffModel) -> ConditioningBundle:
        """Bundle with the text streams only; image tokens are zero and no identity is injected."""
        encoded = encoded.as_batch()
        config = model.config
        batch = encoded.text.shape[0]
        image = torch.zeros(batch, config.num_tokens, config.d_text, dtype=encoded.text.dtype)
        return ConditioningBundle(
            c_T=encoded.text,
            c_I1=image,
            c_I2=image.clone(),
            c_S=ConditioningService.lift_text(encoded.small, config.d_text),
            m1=encoded.m1,
            m2=encoded.m2,
        )

    @staticmethod
    def build_bundle(prompt: PromptSpec, ref1: ImageLike, ref2: ImageLike, model: DuetDiffModel) -> ConditioningBundle:
        """
        Encode a prompt and two reference images and build their bundle.

        Args:
            prompt: Tokenized prompt with subject indices
            ref1: Reference image of subject 1
            ref2: Reference image of subject 2
            model: Model owning the adapters

        Returns:
            Batched ConditioningBundle of batch size 1
        """
        encoded = EncoderService.encode_inputs(prompt, ref1, ref2, model.config)
        dtype = next(model.parameters()).dtype
        return ConditioningService.assemble(encoded.to(dtype), model)
