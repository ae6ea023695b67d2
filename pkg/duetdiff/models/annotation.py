"""
Annotation records for the pair-photograph dataset.

Coordinates are source-image pixels with the origin at the top-left.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from duetdiff.models.mixins import SerializableMixin
from duetdiff.utils.constants import KEYPOINT_INDEX, KEYPOINT_NAMES, VISIBILITY_THRESHOLD, Split
from duetdiff.utils.exceptions import InputError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box [x0, y0, x1, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if min(self.x0, self.y0) < 0:
            raise InputError(f"Box has negative coordinates: {self.to_list()}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InputError(f"Degenerate box: {self.to_list()}")

    def __repr__(self) -> str:
        return f"<BBox [{self.x0:g}, {self.y0:g}, {self.x1:g}, {self.y1:g}]>"

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def to_list(self) -> List[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise InputError(f"A box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    def scaled(self, factor: float) -> "BBox":
        return BBox(self.x0 * factor, self.y0 * factor, self.x1 * factor, self.y1 * factor)

    def clipped(self, width: float, height: float) -> "BBox":
        """Clip to the image rectangle [0, width] x [0, height]."""
        return BBox(max(0.0, self.x0), max(0.0, self.y0), min(float(width), self.x1), min(float(height), self.y1))

    def contains(self, other: "BBox") -> bool:
        return self.x0 <= other.x0 and self.y0 <= other.y0 and other.x1 <= self.x1 and other.y1 <= self.y1

    def iou(self, other: "BBox") -> float:
        """Intersection over union; 0 for disjoint boxes."""
        iw = min(self.x1, other.x1) - max(self.x0, other.x0)
        ih = min(self.y1, other.y1) - max(self.y0, other.y0)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (self.area + other.area - inter)


@dataclass(frozen=True)
class PersonKeypoints:
    """17 named keypoints, each (x, y, confidence)."""

    points: Tuple[Tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.points) != len(KEYPOINT_NAMES):
            raise InputError(f"Expected {len(KEYPOINT_NAMES)} keypoints, got {len(self.points)}")
        for name, (_, _, conf) in zip(KEYPOINT_NAMES, self.points):
            if not 0.0 <= conf <= 1.0:
                raise InputError(f"Keypoint {name} confidence out of [0, 1]: {conf}")

    def __getitem__(self, name: str) -> Tuple[float, float, float]:
        return self.points[KEYPOINT_INDEX[name]]

    def visible(self, name: str, threshold: float = VISIBILITY_THRESHOLD) -> bool:
        return self[name][2] >= threshold

    def to_list(self) -> List[List[float]]:
        return [list(p) for p in self.points]

    @classmethod
    def from_list(cls, values: Sequence[Sequence[float]]) -> "PersonKeypoints":
        return cls(tuple((float(x), float(y), float(c)) for x, y, c in values))

    @classmethod
    def from_named(cls, named: Dict[str, Tuple[float, float, float]]) -> "PersonKeypoints":
        """Build from a name -> point mapping; missing names are (0, 0, 0)."""
        return cls(tuple(tuple(float(v) for v in named.get(name, (0.0, 0.0, 0.0))) for name in KEYPOINT_NAMES))


@dataclass(frozen=True)
class PersonAnnotation:
    """One person in a record."""

    bbox: BBox
    gender: Optional[str] = None
    age_group: Optional[str] = None
    attire_nouns: Tuple[str, ...] = ()
    attire_adjectives: Tuple[str, ...] = ()
    verbs: Tuple[str, ...] = ()
    keypoints: Optional[PersonKeypoints] = None
    face_bbox: Optional[BBox] = None
    caption_slot: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bbox": self.bbox.to_list(),
            "gender": self.gender,
            "age_group": self.age_group,
            "attire": {"nouns": list(self.attire_nouns), "adjectives": list(self.attire_adjectives)},
            "verbs": list(self.verbs),
            "keypoints": self.keypoints.to_list() if self.keypoints else None,
            "face_bbox": self.face_bbox.to_list() if self.face_bbox else None,
            "caption_slot": self.caption_slot,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PersonAnnotation":
        attire = data.get("attire") or {}
        keypoints = data.get("keypoints")
        face = data.get("face_bbox")
        slot = data.get("caption_slot")
        return cls(
            bbox=BBox.from_list(data["bbox"]),
            gender=data.get("gender"),
            age_group=data.get("age_group"),
            attire_nouns=tuple(attire.get("nouns") or ()),
            attire_adjectives=tuple(attire.get("adjectives") or ()),
            verbs=tuple(data.get("verbs") or ()),
            keypoints=PersonKeypoints.from_list(keypoints) if keypoints else None,
            face_bbox=BBox.from_list(face) if face else None,
            caption_slot=int(slot) if slot is not None else None,
        )


@dataclass(frozen=True)
class AnnotationRecord(SerializableMixin):
    """
    One image with its caption and two annotated persons.

    Raw records straight from collection may carry any number of persons;
    filter_records drops those without exactly two.

    Attributes:
        image_id: Unique image identifier
        caption: Free-text caption
        topic: One of the dataset topics
        scene: Single scene tag
        persons: Person annotations, subject order
        composition: Composition class or None before classification
        split: train / test / unassigned
        review_flag: Reason a human should look at the record, if any
    """

    image_id: str
    caption: str
    topic: str
    scene: str
    persons: Tuple[PersonAnnotation, ...]
    composition: Optional[str] = None
    split: str = Split.UNASSIGNED
    review_flag: Optional[str] = None
    width: int = 0
    height: int = 0
    content_hash: Optional[str] = None
    has_forbidden_text: bool = False
    image_path: Optional[str] = None
    identity_seeds: Optional[Tuple[int, int]] = None
    masks: Optional[Any] = None

    def __repr__(self) -> str:
        return f"<AnnotationRecord {self.image_id} {self.topic}/{self.composition}/{self.scene}>"

    @property
    def person_count(self) -> int:
        return len(self.persons)

    def with_changes(self, **changes: Any) -> "AnnotationRecord":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "image_id": self.image_id,
            "caption": self.caption,
            "topic": self.topic,
            "scene": self.scene,
            "persons": [p.to_dict() for p in self.persons],
            "composition": self.composition,
            "split": self.split,
            "review_flag": self.review_flag,
            "width": self.width,
            "height": self.height,
            "content_hash": self.content_hash,
            "has_forbidden_text": self.has_forbidden_text,
            "image_path": self.image_path,
        }
        if self.identity_seeds is not None:
            data["identity_seeds"] = list(self.identity_seeds)
        if self.masks is not None:
            data["masks"] = self.masks
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AnnotationRecord":
        seeds = data.get("identity_seeds")
        return cls(
            image_id=str(data["image_id"]),
            caption=data.get("caption", ""),
            topic=data.get("topic", ""),
            scene=data.get("scene", ""),
            persons=tuple(PersonAnnotation.from_dict(p) for p in data.get("persons", [])),
            composition=data.get("composition"),
            split=data.get("split") or Split.UNASSIGNED,
            review_flag=data.get("review_flag"),
            width=int(data.get("width") or 0),
            height=int(data.get("height") or 0),
            content_hash=data.get("content_hash"),
            has_forbidden_text=bool(data.get("has_forbidden_text", False)),
            image_path=data.get("image_path"),
            identity_seeds=(int(seeds[0]), int(seeds[1])) if seeds else None,
            masks=data.get("masks"),
        )


@dataclass(frozen=True)
class DetectionSet(SerializableMixin):
    """Person boxes from one detector for one image."""

    algorithm_id: str
    boxes: Tuple[BBox, ...]
    image_id: Optional[str] = None

    def __repr__(self) -> str:
        return f"<DetectionSet {self.algorithm_id} boxes={len(self.boxes)}>"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_id": self.image_id,
            "algorithm_id": self.algorithm_id,
            "boxes": [b.to_list() for b in self.boxes],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DetectionSet":
        return cls(
            algorithm_id=str(data["algorithm_id"]),
            boxes=tuple(BBox.from_list(b) for b in data.get("boxes", [])),
            image_id=data.get("image_id"),
        )


@dataclass(frozen=True)
class CalibrationResult(SerializableMixin):
    """
    Outcome of calibrating one image's person boxes.

    On a quorum failure ``boxes`` are the grounding boxes, flagged
    "quorum"; ``boxes`` is None only for duplicate grounding boxes.
    ``review_flag`` is the first of ``reasons``.
    """

    boxes: Optional[Tuple[BBox, BBox]]
    selected: Optional[Tuple[str, str]] = None
    chosen_from: Optional[Tuple[str, str]] = None
    reasons: Tuple[str, ...] = field(default_factory=tuple)
    image_id: Optional[str] = None

    @property
    def review_flag(self) -> Optional[str]:
        return self.reasons[0] if self.reasons else None

    @property
    def needs_review(self) -> bool:
        return bool(self.reasons)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_id": self.image_id,
            "boxes": [b.to_list() for b in self.boxes] if self.boxes else None,
            "selected": list(self.selected) if self.selected else None,
            "chosen_from": list(self.chosen_from) if self.chosen_from else None,
            "review_flag": self.review_flag,
            "reasons": list(self.reasons),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CalibrationResult":
        boxes = data.get("boxes")
        selected = data.get("selected")
        chosen = data.get("chosen_from")
        return cls(
            boxes=tuple(BBox.from_list(b) for b in boxes) if boxes else None,
            selected=tuple(selected) if selected else None,
            chosen_from=tuple(chosen) if chosen else None,
            reasons=tuple(data.get("reasons") or ()),
            image_id=data.get("image_id"),
        )
