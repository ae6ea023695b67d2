"""
Schema checks for JSON Lines inputs.

Each validator takes one decoded line and raises RecordValidationError with
the offending field; the line number is added by the reader.
"""

from numbers import Real
from typing import Any, Dict, Optional

from duetdiff.utils.constants import COMPOSITIONS, KEYPOINT_NAMES, SPLITS
from duetdiff.utils.exceptions import RecordValidationError


def _fail(message: str, field: str, line: Optional[int]) -> None:
    where = f" (line {line})" if line is not None else ""
    raise RecordValidationError(f"{message}{where}", field=field, line=line)


def _is_number(value: Any) -> bool:
    return isinstance(value, Real) and not isinstance(value, bool)


def _check_box(value: Any, field: str, line: Optional[int]) -> None:
    if not isinstance(value, list) or len(value) != 4 or not all(_is_number(v) for v in value):
        _fail(f"{field} must be a list of four numbers", field, line)
    x0, y0, x1, y1 = value
    if x1 < x0 or y1 < y0:
        _fail(f"{field} has inverted corners: {value}", field, line)


def _check_person(person: Any, index: int, line: Optional[int]) -> None:
    prefix = f"persons[{index}]"
    if not isinstance(person, dict):
        _fail(f"{prefix} must be an object", prefix, line)
    _check_box(person.get("bbox"), f"{prefix}.bbox", line)

    keypoints = person.get("keypoints")
    if keypoints is not None:
        if not isinstance(keypoints, list) or len(keypoints) != len(KEYPOINT_NAMES):
            _fail(f"{prefix}.keypoints must hold {len(KEYPOINT_NAMES)} entries", f"{prefix}.keypoints", line)
        for point in keypoints:
            if not isinstance(point, list) or len(point) != 3 or not all(_is_number(v) for v in point):
                _fail(f"{prefix}.keypoints entries must be [x, y, c]", f"{prefix}.keypoints", line)

    if person.get("face_bbox") is not None:
        _check_box(person["face_bbox"], f"{prefix}.face_bbox", line)

    attire = person.get("attire")
    if attire is not None:
        if not isinstance(attire, dict):
            _fail(f"{prefix}.attire must be an object", f"{prefix}.attire", line)
        for key in ("nouns", "adjectives"):
            values = attire.get(key, [])
            if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
                _fail(f"{prefix}.attire.{key} must be a list of strings", f"{prefix}.attire.{key}", line)

    slot = person.get("caption_slot")
    if slot is not None and (not isinstance(slot, int) or isinstance(slot, bool) or slot < 0):
        _fail(f"{prefix}.caption_slot must be a non-negative integer", f"{prefix}.caption_slot", line)


def validate_record(data: Any, line: Optional[int] = None) -> Dict[str, Any]:
    """
    Check one annotation record.

    Args:
        data: Decoded JSON value
        line: 1-based line number for messages

    Returns:
        The record, unchanged

    Raises:
        RecordValidationError: A required field is missing or malformed
    """
    if not isinstance(data, dict):
        _fail("Record must be a JSON object", "record", line)
    for key in ("image_id", "caption", "topic", "scene"):
        if not isinstance(data.get(key), str):
            _fail(f"{key} must be a string", key, line)
    persons = data.get("persons")
    if not isinstance(persons, list):
        _fail("persons must be a list", "persons", line)
    for i, person in enumerate(persons):
        _check_person(person, i, line)

    composition = data.get("composition")
    if composition is not None and composition not in COMPOSITIONS:
        _fail(f"Unknown composition: {composition}", "composition", line)
    split = data.get("split")
    if split is not None and split not in SPLITS:
        _fail(f"Unknown split: {split}", "split", line)
    for key in ("width", "height"):
        value = data.get(key)
        if value is not None and (not isinstance(value, int) or isinstance(value, bool) or value < 0):
            _fail(f"{key} must be a non-negative integer", key, line)
    return data


def validate_detection(data: Any, line: Optional[int] = None) -> Dict[str, Any]:
    """Check one detector output line: {image_id, algorithm_id, boxes}."""
    if not isinstance(data, dict):
        _fail("Detection must be a JSON object", "detection", line)
    for key in ("image_id", "algorithm_id"):
        if not isinstance(data.get(key), str):
            _fail(f"{key} must be a string", key, line)
    boxes = data.get("boxes")
    if not isinstance(boxes, list):
        _fail("boxes must be a list", "boxes", line)
    for i, box in enumerate(boxes):
        _check_box(box, f"boxes[{i}]", line)
    return data


def validate_grounding(data: Any, line: Optional[int] = None) -> Dict[str, Any]:
    """Check one grounding line: {image_id, boxes} with exactly two boxes."""
    if not isinstance(data, dict):
        _fail("Grounding entry must be a JSON object", "grounding", line)
    if not isinstance(data.get("image_id"), str):
        _fail("image_id must be a string", "image_id", line)
    boxes = data.get("boxes")
    if not isinstance(boxes, list) or len(boxes) != 2:
        _fail("boxes must hold exactly two boxes", "boxes", line)
    for i, box in enumerate(boxes):
        _check_box(box, f"boxes[{i}]", line)
    return data
