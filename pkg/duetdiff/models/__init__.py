"""
Domain types.

Import models from here for convenience:
    from duetdiff.models import AnnotationRecord, BBox, NoiseSchedule
"""

from duetdiff.models.annotation import (
    AnnotationRecord,
    BBox,
    CalibrationResult,
    DetectionSet,
    PersonAnnotation,
    PersonKeypoints,
)
from duetdiff.models.identity import SceneSpec, ToyIdentity
from duetdiff.models.prompt import ConditioningBundle, EncodedInputs, PromptSpec
from duetdiff.models.schedule import LatentCodec, LatentState, NoiseSchedule

__all__ = [
    "AnnotationRecord",
    "BBox",
    "CalibrationResult",
    "ConditioningBundle",
    "DetectionSet",
    "EncodedInputs",
    "LatentCodec",
    "LatentState",
    "NoiseSchedule",
    "PersonAnnotation",
    "PersonKeypoints",
    "PromptSpec",
    "SceneSpec",
    "ToyIdentity",
]
