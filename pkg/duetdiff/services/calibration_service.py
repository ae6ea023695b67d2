"""
Calibration service: consensus person boxes from several detectors.

Every detection set is first aligned to the grounding pair (the boxes a
vision-language model gave for subject 1 and subject 2). The two detectors
that agree most closely are selected, and for each person the one of their
two boxes nearest the grounding box is kept.
"""

import itertools
import logging
from typing import List, Optional, Sequence, Tuple

from duetdiff.models.annotation import BBox, CalibrationResult, DetectionSet
from duetdiff.utils.constants import DETECTOR_QUORUM, IOU_DUPLICATE, IOU_REVIEW, ReviewReason
from duetdiff.utils.exceptions import DuplicateDetectionError, InputError, QuorumError

logger = logging.getLogger(__name__)

Pair = Tuple[BBox, BBox]


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    return a.iou(b)


def mse_bbox(a: BBox, b: BBox) -> float:
    """Mean over the four coordinates of the squared difference."""
    return sum((p - q) ** 2 for p, q in zip(a.to_list(), b.to_list())) / 4.0


def _pair(boxes: Sequence[BBox], what: str) -> Pair:
    if len(boxes) != 2:
        raise InputError(f"{what} must hold exactly two boxes, got {len(boxes)}")
    return boxes[0], boxes[1]


class CalibrationService:
    """Service for detector calibration."""

    @staticmethod
    def match_pairs(det_a: Sequence[BBox], det_b: Sequence[BBox]) -> Tuple[int, int]:
        """
        Align two box pairs.

        The pair (i, j) with the lowest MSE is matched; the remaining boxes
        are matched to each other. Ties go to the first pair in row-major order.

        Args:
            det_a: Two boxes
            det_b: Two boxes

        Returns:
            (j0, j1): det_a[0] matches det_b[j0] and det_a[1] matches det_b[j1]

        Raises:
            InputError: Either side does not hold exactly two boxes
        """
        a, b = _pair(det_a, "det_a"), _pair(det_b, "det_b")
        best = min(itertools.product(range(2), range(2)), key=lambda ij: mse_bbox(a[ij[0]], b[ij[1]]))
        i, j = best
        return (j, 1 - j) if i == 0 else (1 - j, j)

    @staticmethod
    def align(reference: Sequence[BBox], detection: DetectionSet) -> DetectionSet:
        """Reorder a two-box detection set to the reference person order."""
        j0, j1 = CalibrationService.match_pairs(reference, detection.boxes)
        boxes = (detection.boxes[j0], detection.boxes[j1])
        return DetectionSet(algorithm_id=detection.algorithm_id, boxes=boxes, image_id=detection.image_id)

    @staticmethod
    def select_best_detectors(detections: Sequence[DetectionSet], quorum: int = 2) -> Tuple[str, str]:
        """
        The two detectors whose aligned boxes agree best.

        Args:
            detections: Aligned sets (same person order), each with two boxes
            quorum: Minimum number of qualifying sets

        Returns:
            (id, id) in sorted order, minimizing the mean over both persons of the pairwise MSE

        Raises:
            QuorumError: Fewer than ``quorum`` (or 2) qualifying sets
            InputError: Repeated algorithm ids
        """
        qualifying = sorted((d for d in detections if len(d.boxes) == 2), key=lambda d: d.algorithm_id)
        if len(qualifying) < max(2, quorum):
            raise QuorumError(f"{len(qualifying)} detection sets qualify, {max(2, quorum)} needed")
        ids = [d.algorithm_id for d in qualifying]
        if len(set(ids)) != len(ids):
            raise InputError(f"Repeated detector ids: {ids}")

        def score(pair: Tuple[DetectionSet, DetectionSet]) -> float:
            first, second = pair
            return sum(mse_bbox(p, q) for p, q in zip(first.boxes, second.boxes)) / 2.0

        first, second = min(itertools.combinations(qualifying, 2), key=score)
        return first.algorithm_id, second.algorithm_id

    @staticmethod
    def calibrate(
        llava_pair: Sequence[BBox],
        detections: Sequence[DetectionSet],
        iou_dup: float = IOU_DUPLICATE,
        iou_review: float = IOU_REVIEW,
        quorum: int = DETECTOR_QUORUM,
        per_person: bool = True,
        image_id: Optional[str] = None,
    ) -> CalibrationResult:
        """
        Calibrate one image's person boxes.

        Args:
            llava_pair: Grounding boxes of subject 1 and subject 2
            detections: Raw detector outputs (any box order)
            iou_dup: Grounding boxes at or above this IoU describe one person
            iou_review: Agreement below this IoU flags the result for review
            quorum: Sets with exactly two boxes required
            per_person: Choose the nearer detector per person; otherwise one detector for both
            image_id: Copied into the result

        Returns:
            CalibrationResult; when too few sets qualify the grounding boxes pass
            through unchanged, flagged "quorum"

        Raises:
            DuplicateDetectionError: The grounding boxes overlap at or above iou_dup
            InputError: llava_pair does not hold two boxes
        """
        llava = _pair(llava_pair, "llava_pair")
        overlap = iou(*llava)
        if overlap >= iou_dup:
            logger.warning(f"Duplicate grounding boxes for {image_id}: IoU {overlap:.3f}")
            raise DuplicateDetectionError(f"Grounding boxes overlap with IoU {overlap:.3f}", image_id=image_id)

        qualifying = [d for d in detections if len(d.boxes) == 2]
        try:
            aligned = [CalibrationService.align(llava, d) for d in qualifying]
            selected = CalibrationService.select_best_detectors(aligned, quorum)
        except QuorumError as e:
            logger.info(f"Calibration of {image_id} skipped: {e}")
            return CalibrationResult(boxes=llava, reasons=(ReviewReason.QUORUM,), image_id=image_id)

        by_id = {d.algorithm_id: d for d in aligned}
        options = [by_id[s] for s in selected]

        def distance(option: DetectionSet, person: int) -> float:
            return mse_bbox(option.boxes[person], llava[person])

        if per_person:
            chosen = [min(options, key=lambda o: distance(o, p)) for p in range(2)]
        else:
            best = min(options, key=lambda o: distance(o, 0) + distance(o, 1))
            chosen = [best, best]
        boxes = (chosen[0].boxes[0], chosen[1].boxes[1])

        reasons: List[str] = []
        if any(iou(options[0].boxes[p], options[1].boxes[p]) < iou_review for p in range(2)):
            reasons.append(ReviewReason.DETECTOR_DISAGREEMENT)
        if any(iou(boxes[p], llava[p]) < iou_review for p in range(2)):
            reasons.append(ReviewReason.LLAVA_MISMATCH)
        if reasons:
            logger.info(f"Calibration of {image_id} flagged for review: {', '.join(reasons)}")
        return CalibrationResult(
            boxes=boxes,
            selected=selected,
            chosen_from=(chosen[0].algorithm_id, chosen[1].algorithm_id),
            reasons=tuple(reasons),
            image_id=image_id,
        )
