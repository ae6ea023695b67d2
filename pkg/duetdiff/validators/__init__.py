"""JSONL record validators."""

from duetdiff.validators.records import validate_detection, validate_grounding, validate_record

__all__ = ["validate_record", "validate_detection", "validate_grounding"]
