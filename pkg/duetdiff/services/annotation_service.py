"""
Annotation service: rule-based record curation.

Covers filtering, caption-person matching, face boxes from keypoints,
composition classes and the stratified train/test split.
"""

import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from duetdiff.models.annotation import AnnotationRecord, BBox, PersonAnnotation, PersonKeypoints
from duetdiff.models.prompt import tokenize
from duetdiff.utils.constants import (
    GENDER_WORDS,
    GENERIC_DESCRIPTORS,
    MIN_IMAGE_DIM,
    OTHER_SCENE,
    RARE_SCENE_MIN,
    VISIBILITY_THRESHOLD,
    Composition,
    RejectReason,
    ReviewReason,
    Split,
)
from duetdiff.utils.exceptions import DerivationError, InputError

logger = logging.getLogger(__name__)

_DESCRIPTOR_PATTERNS = tuple(
    (re.compile(rf"\b{re.escape(generic)}\b", re.IGNORECASE), explicit) for generic, explicit in GENERIC_DESCRIPTORS
)

Rejection = Tuple[AnnotationRecord, str]


class AnnotationService:
    """Service for dataset annotation rules."""

    @staticmethod
    def rewrite_generic_descriptors(caption: str) -> str:
        """Replace pair descriptors such as "a couple" with two explicit mentions."""
        for pattern, explicit in _DESCRIPTOR_PATTERNS:
            caption = pattern.sub(explicit, caption)
        return caption

    @staticmethod
    def caption_mentions(caption: str) -> List[Tuple[int, str]]:
        """(token index, word) of every gender word in the caption."""
        return [(i, tok) for i, tok in enumerate(tokenize(caption)) if tok in GENDER_WORDS]

    @staticmethod
    def match_caption_persons(record: AnnotationRecord) -> AnnotationRecord:
        """
        Assign each person the caption token that mentions them.

        The caption is first rewritten to explicit mentions. With different
        genders the mentions are matched by gender; otherwise the first
        mention goes to the person whose box center is leftmost (then
        topmost).

        Returns:
            The record with the rewritten caption and caption_slot set per
            person, or flagged "unmatchable" when it cannot be matched
        """
        caption = AnnotationService.rewrite_generic_descriptors(record.caption)
        mentions = AnnotationService.caption_mentions(caption)
        persons = record.persons
        unmatched = record.with_changes(caption=caption, review_flag=ReviewReason.UNMATCHABLE)
        if len(mentions) < 2 or len(persons) != 2 or any(p.gender is None for p in persons):
            return unmatched

        (slot1, word1), (slot2, word2) = mentions[0], mentions[1]
        g1, g2 = GENDER_WORDS[word1][0], GENDER_WORDS[word2][0]
        if g1 != g2:
            first = next((i for i, p in enumerate(persons) if p.gender == g1), None)
            second = next((i for i, p in enumerate(persons) if p.gender == g2), None)
            if first is None or second is None:
                return unmatched
        else:
            order = sorted(range(2), key=lambda i: (persons[i].bbox.center[0], persons[i].bbox.center[1]))
            first, second = order
        slots = {first: slot1, second: slot2}
        updated = tuple(replace(p, caption_slot=slots[i]) for i, p in enumerate(persons))
        return record.with_changes(caption=caption, persons=updated)

    @staticmethod
    def face_bbox(
        keypoints: PersonKeypoints,
        width: Optional[float] = None,
        height: Optional[float] = None,
        threshold: float = VISIBILITY_THRESHOLD,
    ) -> BBox:
        """
        Square face box from eye and ear keypoints.

        Centered at the midpoint of the eyes, with side four times the
        largest distance from that midpoint to a visible ear; clipped to the
        image when its size is given.

        Raises:
            DerivationError: An eye is hidden or no ear is visible
        """
        if not (keypoints.visible("left_eye", threshold) and keypoints.visible("right_eye", threshold)):
            raise DerivationError("Both eyes must be visible to derive a face box")
        ears = [keypoints[e] for e in ("left_ear", "right_ear") if keypoints.visible(e, threshold)]
        if not ears:
            raise DerivationError("At least one ear must be visible to derive a face box")

        (lx, ly, _), (rx, ry, _) = keypoints["left_eye"], keypoints["right_eye"]
        cx, cy = (lx + rx) / 2.0, (ly + ry) / 2.0
        half = 2.0 * max(math.hypot(x - cx, y - cy) for x, y, _ in ears)
        if half <= 0:
            raise DerivationError("Ear and eye midpoint coincide")
        x0, y0, x1, y1 = cx - half, cy - half, cx + half, cy + half
        x0, y0 = max(0.0, x0), max(0.0, y0)
        if width is not None:
            x1 = min(float(width), x1)
        if height is not None:
            y1 = min(float(height), y1)
        if not (x0 < x1 and y0 < y1):
            raise DerivationError("Face box lies outside the image")
        return BBox(x0, y0, x1, y1)

    @staticmethod
    def classify_composition(keypoints: Sequence[PersonKeypoints], threshold: float = VISIBILITY_THRESHOLD) -> str:
        """
        Composition class from shoulder and knee visibility of both persons.

        full_body needs both shoulders and both knees of every person visible;
        half_body needs both shoulders; anything else is close_up.
        """
        if len(keypoints) != 2:
            raise InputError(f"Composition needs two persons, got {len(keypoints)}")

        def all_visible(*names: str) -> bool:
            return all(kp.visible(name, threshold) for kp in keypoints for name in names)

        if all_visible("left_shoulder", "right_shoulder", "left_knee", "right_knee"):
            return Composition.FULL_BODY
        if all_visible("left_shoulder", "right_shoulder"):
            return Composition.HALF_BODY
        return Composition.CLOSE_UP

    @staticmethod
    def derive_faces(record: AnnotationRecord) -> AnnotationRecord:
        """Face boxes from keypoints where derivable; existing boxes are kept otherwise."""
        persons = []
        for person in record.persons:
            face = person.face_bbox
            if person.keypoints is not None:
                try:
                    face = AnnotationService.face_bbox(person.keypoints, record.width or None, record.height or None)
                except DerivationError:
                    logger.debug(f"No face box derivable for a person of {record.image_id}")
            persons.append(replace(person, face_bbox=face))
        return record.with_changes(persons=tuple(persons))

    @staticmethod
    def annotate(record: AnnotationRecord) -> AnnotationRecord:
        """Caption matching, face boxes and composition for one two-person record."""
        record = AnnotationService.match_caption_persons(record)
        record = AnnotationService.derive_faces(record)
        keypoints = [p.keypoints for p in record.persons]
        if len(keypoints) == 2 and all(kp is not None for kp in keypoints):
            record = record.with_changes(composition=AnnotationService.classify_composition(keypoints))
        return record

    @staticmethod
    def filter_records(
        records: Sequence[AnnotationRecord], min_dim: int = MIN_IMAGE_DIM
    ) -> Tuple[List[AnnotationRecord], List[Rejection]]:
        """
        Drop duplicates, small images, non-pair images and images with forbidden text.

        A content hash seen before rejects the later record. The smaller image
        side must exceed ``min_dim``.

        Returns:
            Tuple of (kept records, (record, reason) rejections), both in input order
        """
        seen = set()
        kept: List[AnnotationRecord] = []
        rejected: List[Rejection] = []
        for record in records:
            reason = None
            if record.content_hash is not None and record.content_hash in seen:
                reason = RejectReason.DUPLICATE
            elif min(record.width, record.height) <= min_dim:
                reason = RejectReason.RESOLUTION
            elif record.person_count != 2:
                reason = RejectReason.PERSON_COUNT
            elif record.has_forbidden_text:
                reason = RejectReason.FORBIDDEN_TEXT
            if record.content_hash is not None:
                seen.add(record.content_hash)
            if reason is None:
                kept.append(record)
            else:
                rejected.append((record, reason))
        counts = Counter(reason for _, reason in rejected)
        logger.info(f"Filtered {len(records)} records: kept {len(kept)}, rejected {dict(counts)}")
        return kept, rejected

    @staticmethod
    def scene_strata(records: Sequence[AnnotationRecord], rare_scene_min: int = RARE_SCENE_MIN) -> List[str]:
        """Scene tag per record, with tags seen fewer than ``rare_scene_min`` times merged into "other"."""
        counts = Counter(r.scene for r in records)
        return [r.scene if counts[r.scene] >= rare_scene_min else OTHER_SCENE for r in records]

    @staticmethod
    def test_count(n: int, ratio: float) -> int:
        """Test records drawn from a stratum of n: max(1, round((1 - ratio) * n)) for n >= 2."""
        if n < 2:
            return 0
        return min(n, max(1, int(round((1.0 - ratio) * n))))

    @staticmethod
    def stratified_split(
        records: Sequence[AnnotationRecord],
        ratio: float = 0.9,
        seed: int = 0,
        rare_scene_min: int = RARE_SCENE_MIN,
    ) -> List[AnnotationRecord]:
        """
        Label records train or test, stratified by topic, composition and scene.

        Strata are visited in sorted key order, and each draws its test
        members by a seeded permutation.

        Returns:
            Records in input order with ``split`` set
        """
        if not 0.0 < ratio <= 1.0:
            raise InputError(f"Split ratio must lie in (0, 1], got {ratio}")
        scenes = AnnotationService.scene_strata(records, rare_scene_min)
        strata: Dict[Tuple[str, str, str], List[int]] = defaultdict(list)
        for i, (record, scene) in enumerate(zip(records, scenes)):
            strata[(record.topic, record.composition or "", scene)].append(i)

        rng = np.random.default_rng(int(seed))
        test = set()
        for key in sorted(strata):
            members = strata[key]
            count = AnnotationService.test_count(len(members), ratio)
            order = rng.permutation(len(members))
            test.update(members[j] for j in order[:count])

        labeled = [
            r.with_changes(split=Split.TEST if i in test else Split.TRAIN) for i, r in enumerate(records)
        ]
        logger.info(f"Split {len(records)} records into {len(records) - len(test)} train / {len(test)} test")
        return labeled
