"""
Encoder service: the frozen text, patch and face encoders.

The encoders are fixed hash-seeded random maps. Token and face embeddings
come from a Gaussian vector seeded by a sha256 digest; patch features are a
fixed random projection of codec-normalized pixels.
"""

import hashlib
import logging
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
import torch
from PIL import Image

from duetdiff.models.identity import ToyIdentity
from duetdiff.models.prompt import EncodedInputs, PromptSpec
from duetdiff.models.schedule import LatentCodec
from duetdiff.models.settings import ModelConfig
from duetdiff.services.synth_service import SynthService
from duetdiff.utils.constants import GLYPH_FRAME_COLOR, GLYPH_SIZE
from duetdiff.utils.exceptions import ExtractionError, InputError

logger = logging.getLogger(__name__)

ImageLike = Union[np.ndarray, Image.Image]

_CODEC = LatentCodec()


def _digest_seed(*parts: Union[str, bytes]) -> int:
    h = hashlib.sha256()
    for part in parts:
        h.update(part if isinstance(part, bytes) else part.encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


@lru_cache(maxsize=16384)
def _gaussian(kind: str, key: Union[str, bytes], dim: int) -> np.ndarray:
    rng = np.random.default_rng(_digest_seed(kind, key, str(dim)))
    return rng.standard_normal(dim)


@lru_cache(maxsize=64)
def _patch_projection(in_dim: int, out_dim: int) -> np.ndarray:
    rng = np.random.default_rng(_digest_seed("patch-projection", str(in_dim), str(out_dim)))
    return rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)


def as_array(image: ImageLike) -> np.ndarray:
    """HWC uint8 RGB array from a PIL image or array."""
    if isinstance(image, Image.Image):
        image = image.convert("RGB")
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"Expected an RGB image, got array of shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    """Cosine similarity of two vectors."""
    a = a.to(torch.float64).flatten()
    b = b.to(torch.float64).flatten()
    return float(torch.dot(a, b) / (torch.linalg.norm(a) * torch.linalg.norm(b)))


class EncoderService:
    """Service for the frozen encoders."""

    @staticmethod
    def _encode_tokens(kind: str, prompt: PromptSpec, dim: int) -> torch.Tensor:
        if len(prompt.tokens) == 0:
            raise InputError("Empty prompt")
        rows = np.stack([_gaussian(kind, tok, dim) for tok in prompt.tokens]) / np.sqrt(dim)
        return torch.from_numpy(rows).to(torch.float32)

    @staticmethod
    def encode_text_small(prompt: PromptSpec, dim: int = 32) -> torch.Tensor:
        """
        Small text encoder.

        Args:
            prompt: Tokenized prompt
            dim: Embedding width

        Returns:
            (N, dim) float32 tensor, one row per token
        """
        return EncoderService._encode_tokens("text-small", prompt, dim)

    @staticmethod
    def encode_text_large(prompt: PromptSpec, dim: int = 64) -> torch.Tensor:
        """Large text encoder producing c_T, shape (N, dim)."""
        return EncoderService._encode_tokens("text-large", prompt, dim)

    @staticmethod
    def encode_image_patches(image: ImageLike, patch_size: int = 8, dim: int = 32) -> torch.Tensor:
        """
        Dense patch features.

        Args:
            image: RGB image with sides divisible by patch_size
            patch_size: Patch side
            dim: Feature width

        Returns:
            (num_patches, dim) float32 tensor, patches in row-major order

        Raises:
            InputError: Image sides not divisible by patch_size
        """
        arr = as_array(image)
        h, w, c = arr.shape
        if h % patch_size or w % patch_size:
            raise InputError(f"Image {w}x{h} is not divisible into {patch_size}px patches")
        gh, gw = h // patch_size, w // patch_size
        pixels = arr.astype(np.float64) / _CODEC.scale + _CODEC.offset
        patches = pixels.reshape(gh, patch_size, gw, patch_size, c).transpose(0, 2, 1, 3, 4)
        patches = patches.reshape(gh * gw, patch_size * patch_size * c)
        features = patches @ _patch_projection(patches.shape[1], dim)
        return torch.from_numpy(features).to(torch.float32)

    @staticmethod
    def locate_glyph(image: ImageLike) -> Tuple[int, int, int]:
        """
        Find the single face glyph by its pure-black frame.

        Returns:
            (x0, y0, side) of the frame in image pixels

        Raises:
            ExtractionError: No frame, or the black pixels do not form exactly one square frame
        """
        arr = as_array(image)
        mask = np.all(arr == np.array(GLYPH_FRAME_COLOR, dtype=np.uint8), axis=2)
        if not mask.any():
            raise ExtractionError("No face glyph found")
        ys, xs = np.nonzero(mask)
        y0, y1, x0, x1 = int(ys.min()), int(ys.max()), int(xs.min()), int(xs.max())
        side = y1 - y0 + 1
        is_frame = (
            side == x1 - x0 + 1
            and side >= 3
            and mask[y0, x0 : x1 + 1].all()
            and mask[y1, x0 : x1 + 1].all()
            and mask[y0 : y1 + 1, x0].all()
            and mask[y0 : y1 + 1, x1].all()
            and int(mask.sum()) == 4 * (side - 1)
        )
        if not is_frame:
            raise ExtractionError("Expected exactly one face glyph")
        return x0, y0, side

    @staticmethod
    def crop_glyph(image: ImageLike) -> np.ndarray:
        """The located face tile, resized to 16x16 if needed."""
        arr = as_array(image)
        x0, y0, side = EncoderService.locate_glyph(arr)
        tile = arr[y0 : y0 + side, x0 : x0 + side]
        if side != GLYPH_SIZE:
            tile = np.asarray(Image.fromarray(tile).resize((GLYPH_SIZE, GLYPH_SIZE), Image.NEAREST))
        return np.ascontiguousarray(tile)

    @staticmethod
    def encode_face(source: Union[ToyIdentity, ImageLike], dim: int = 32) -> torch.Tensor:
        """
        Face identity encoder.

        Args:
            source: An identity, or an image holding exactly one face glyph
            dim: Vector width

        Returns:
            Unit-norm (dim,) float32 vector; equal glyphs give equal vectors

        Raises:
            ExtractionError: No single glyph in the image
        """
        if isinstance(source, ToyIdentity):
            tile = SynthService.render_glyph(source)
        else:
            tile = EncoderService.crop_glyph(source)
        v = _gaussian("face", tile.tobytes(), dim)
        v = v / np.linalg.norm(v)
        return torch.from_numpy(v).to(torch.float32)

    @staticmethod
    def encode_inputs(prompt: PromptSpec, ref1: ImageLike, ref2: ImageLike, config: ModelConfig) -> EncodedInputs:
        """
        Run every frozen encoder once for a prompt and reference pair.

        Args:
            prompt: Tokenized prompt with subject indices
            ref1: Reference image of subject 1
            ref2: Reference image of subject 2
            config: Model config supplying encoder widths and patch size

        Returns:
            EncodedInputs ready for the trainable projectors
        """
        return EncodedInputs(
            small=EncoderService.encode_text_small(prompt, config.d_small),
            text=EncoderService.encode_text_large(prompt, config.d_text),
            patches1=EncoderService.encode_image_patches(ref1, config.patch_size, config.d_patch),
            patches2=EncoderService.encode_image_patches(ref2, config.patch_size, config.d_patch),
            id1=EncoderService.encode_face(ref1, config.d_id),
            id2=EncoderService.encode_face(ref2, config.d_id),
            m1=prompt.m1,
            m2=prompt.m2,
        )
