"""
Prompts, encoder outputs and conditioning bundles.
"""

import re
from dataclasses import dataclass, fields, replace
from typing import List, Optional, Sequence, Tuple, Union

import torch

from duetdiff.utils.constants import GENDER_WORDS
from duetdiff.utils.exceptions import InputError, ShapeMismatchError

Index = Union[int, torch.Tensor]

_TOKEN_PATTERN = re.compile(r"[a-z0-9_]+")


def tokenize(caption: str) -> Tuple[str, ...]:
    """Lowercase word tokens; punctuation is dropped."""
    return tuple(_TOKEN_PATTERN.findall(caption.lower()))


@dataclass(frozen=True)
class PromptSpec:
    """
    A tokenized prompt with the positions of the two subject words.

    Indices are 0-based.
    """

    tokens: Tuple[str, ...]
    m1: int
    m2: int

    def __post_init__(self):
        n = len(self.tokens)
        if n == 0:
            raise InputError("Empty prompt")
        for name, m in (("m1", self.m1), ("m2", self.m2)):
            if not 0 <= m < n:
                raise InputError(f"{name}={m} outside prompt of length {n}")
        if self.m1 == self.m2:
            raise InputError(f"Subject indices collide: m1 = m2 = {self.m1}")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @classmethod
    def from_caption(cls, caption: str, m1: Optional[int] = None, m2: Optional[int] = None) -> "PromptSpec":
        """
        Tokenize a caption.

        When subject indices are not given, the first two gender words
        (man, woman, boy, girl) are used.
        """
        tokens = tokenize(caption)
        if m1 is None or m2 is None:
            mentions = [i for i, tok in enumerate(tokens) if tok in GENDER_WORDS]
            if len(mentions) < 2:
                raise InputError(f"Caption names fewer than two subjects: {caption!r}")
            m1, m2 = mentions[0], mentions[1]
        return cls(tokens=tokens, m1=m1, m2=m2)


@dataclass(frozen=True)
class EncodedInputs:
    """
    Frozen-encoder outputs for one prompt and reference pair.

    Unbatched: ``small`` is (N, d_small), ``text`` (N, d), patches (P, d_patch),
    identity vectors (d_id,), indices ints. ``stack`` adds a leading batch
    dimension and turns the indices into (B,) long tensors.
    """

    small: torch.Tensor
    text: torch.Tensor
    patches1: torch.Tensor
    patches2: torch.Tensor
    id1: torch.Tensor
    id2: torch.Tensor
    m1: Index
    m2: Index

    @property
    def is_batched(self) -> bool:
        return self.text.ndim == 3

    def to(self, dtype: torch.dtype) -> "EncodedInputs":
        changes = {f.name: getattr(self, f.name).to(dtype) for f in fields(self) if f.name not in ("m1", "m2")}
        return replace(self, **changes)

    def as_batch(self) -> "EncodedInputs":
        return self if self.is_batched else EncodedInputs.stack([self])

    @classmethod
    def stack(cls, items: Sequence["EncodedInputs"]) -> "EncodedInputs":
        if not items:
            raise InputError("Cannot stack an empty list of inputs")
        lengths = {item.text.shape[0] for item in items}
        if len(lengths) != 1:
            raise ShapeMismatchError(f"Prompts in a batch must share a length, got {sorted(lengths)}")
        return cls(
            small=torch.stack([i.small for i in items]),
            text=torch.stack([i.text for i in items]),
            patches1=torch.stack([i.patches1 for i in items]),
            patches2=torch.stack([i.patches2 for i in items]),
            id1=torch.stack([i.id1 for i in items]),
            id2=torch.stack([i.id2 for i in items]),
            m1=torch.tensor([int(i.m1) for i in items], dtype=torch.long),
            m2=torch.tensor([int(i.m2) for i in items], dtype=torch.long),
        )

    def swapped(self) -> "EncodedInputs":
        """Same prompt with the two references exchanged."""
        return replace(self, patches1=self.patches2, patches2=self.patches1, id1=self.id2, id2=self.id1)


@dataclass(frozen=True)
class ConditioningBundle:
    """
    The four conditioning streams.

    Attributes:
        c_T: Large text encoder tokens, (B, N, d)
        c_I1: Visual tokens of reference 1, (B, K, d)
        c_I2: Visual tokens of reference 2, (B, K, d)
        c_S: Subject-augmented text tokens, (B, N, d)
        m1, m2: Subject token indices, ints or (B,) long tensors
    """

    c_T: torch.Tensor
    c_I1: torch.Tensor
    c_I2: torch.Tensor
    c_S: torch.Tensor
    m1: Index = 0
    m2: Index = 1

    def __post_init__(self):
        if self.c_I1.shape != self.c_I2.shape:
            raise ShapeMismatchError(f"c_I1 {tuple(self.c_I1.shape)} and c_I2 {tuple(self.c_I2.shape)} differ")
        if self.c_T.shape[:-1] != self.c_S.shape[:-1]:
            raise ShapeMismatchError(f"c_T {tuple(self.c_T.shape)} and c_S {tuple(self.c_S.shape)} differ in length")

    def __repr__(self) -> str:
        return f"<ConditioningBundle N={self.c_T.shape[-2]} K={self.c_I1.shape[-2]} d={self.c_T.shape[-1]}>"

    @property
    def batch_size(self) -> int:
        return self.c_T.shape[0] if self.c_T.ndim == 3 else 1

    @property
    def num_tokens(self) -> int:
        return self.c_I1.shape[-2]

    def as_batch(self) -> "ConditioningBundle":
        if self.c_T.ndim == 3:
            return self
        return replace(
            self,
            c_T=self.c_T.unsqueeze(0),
            c_I1=self.c_I1.unsqueeze(0),
            c_I2=self.c_I2.unsqueeze(0),
            c_S=self.c_S.unsqueeze(0),
        )

    def text_stream(self) -> torch.Tensor:
        """Keys/values of the text branch: c_T followed by c_S along the token axis."""
        return torch.cat([self.c_T, self.c_S], dim=-2)

    def zeros_like(self) -> "ConditioningBundle":
        """The null condition with this bundle's shapes."""
        return replace(
            self,
            c_T=torch.zeros_like(self.c_T),
            c_I1=torch.zeros_like(self.c_I1),
            c_I2=torch.zeros_like(self.c_I2),
            c_S=torch.zeros_like(self.c_S),
        )

    def masked(self, keep: torch.Tensor) -> "ConditioningBundle":
        """Zero the streams of batch items where ``keep`` is 0."""
        bundle = self.as_batch()
        keep = keep.to(torch.bool).view(-1, 1, 1)

        def apply(x: torch.Tensor) -> torch.Tensor:
            return torch.where(keep, x, torch.zeros_like(x))

        return replace(
            bundle,
            c_T=apply(bundle.c_T),
            c_I1=apply(bundle.c_I1),
            c_I2=apply(bundle.c_I2),
            c_S=apply(bundle.c_S),
        )

    @classmethod
    def null(
        cls,
        batch_size: int,
        num_tokens: int,
        width: int,
        text_length: int = 1,
        dtype: torch.dtype = torch.float32,
    ) -> "ConditioningBundle":
        """Zero-filled streams standing in for the empty condition."""
        text = torch.zeros(batch_size, text_length, width, dtype=dtype)
        image = torch.zeros(batch_size, num_tokens, width, dtype=dtype)
        return cls(c_T=text, c_I1=image, c_I2=image.clone(), c_S=text.clone())

    def to_list(self) -> List["ConditioningBundle"]:
        """Split a batched bundle into per-item bundles."""
        bundle = self.as_batch()
        out = []
        for b in range(bundle.batch_size):
            m1 = bundle.m1[b] if isinstance(bundle.m1, torch.Tensor) else bundle.m1
            m2 = bundle.m2[b] if isinstance(bundle.m2, torch.Tensor) else bundle.m2
            out.append(
                ConditioningBundle(
                    c_T=bundle.c_T[b],
                    c_I1=bundle.c_I1[b],
                    c_I2=bundle.c_I2[b],
                    c_S=bundle.c_S[b],
                    m1=int(m1),
                    m2=int(m2),
                )
            )
        return out
