"""
Synthetic identities and scene layouts.
"""

from dataclasses import dataclass
from typing import Tuple

from duetdiff.models.annotation import BBox
from duetdiff.utils.constants import CAPTION_TEMPLATE, COMPOSITIONS, TOPICS
from duetdiff.utils.exceptions import InputError

IDENTITY_DIM = 8


@dataclass(frozen=True)
class ToyIdentity:
    """
    Eight parameters in [0, 1] that fully determine a face glyph.

    Attributes:
        params: hue, eye spacing, face aspect, skin tone, hair band,
            eye size, mouth curve, outline weight
    """

    params: Tuple[float, ...]

    def __post_init__(self):
        if len(self.params) != IDENTITY_DIM:
            raise InputError(f"An identity has {IDENTITY_DIM} parameters, got {len(self.params)}")
        if any(not 0.0 <= p <= 1.0 for p in self.params):
            raise InputError(f"Identity parameters must lie in [0, 1]: {self.params}")

    def __repr__(self) -> str:
        return "<ToyIdentity " + ",".join(f"{p:.3f}" for p in self.params) + ">"

    @property
    def hue(self) -> float:
        return self.params[0]

    @property
    def eye_spacing(self) -> float:
        return self.params[1]

    @property
    def face_aspect(self) -> float:
        return self.params[2]

    @property
    def skin_tone(self) -> float:
        return self.params[3]

    @property
    def hair_band(self) -> float:
        return self.params[4]

    @property
    def eye_size(self) -> float:
        return self.params[5]

    @property
    def mouth_curve(self) -> float:
        return self.params[6]

    @property
    def outline_weight(self) -> float:
        return self.params[7]

    def distance(self, other: "ToyIdentity") -> float:
        """Euclidean distance in parameter space."""
        return sum((a - b) ** 2 for a, b in zip(self.params, other.params)) ** 0.5


@dataclass(frozen=True)
class SceneSpec:
    """
    Layout and metadata of one rendered pair photograph.

    Anchor boxes are canvas pixels of the face tiles; subject 1 is the left
    anchor.
    """

    scene: str
    topic: str
    composition: str
    anchors: Tuple[BBox, BBox]
    genders: Tuple[str, str]
    verb: str
    garment: str
    colors: Tuple[str, str]

    def __post_init__(self):
        if self.topic not in TOPICS:
            raise InputError(f"Unknown topic: {self.topic}")
        if self.composition not in COMPOSITIONS:
            raise InputError(f"Unknown composition: {self.composition}")
        a, b = self.anchors
        overlap = a.iou(b)
        if overlap > 0.2:
            raise InputError(f"Anchor boxes overlap too much (IoU {overlap:.2f})")

    @property
    def caption(self) -> str:
        return CAPTION_TEMPLATE.format(
            g1=self.genders[0],
            g2=self.genders[1],
            verb=self.verb,
            scene=self.scene,
            color=self.colors[0],
            garment=self.garment,
        )
