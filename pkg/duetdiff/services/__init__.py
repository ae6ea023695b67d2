"""Business logic services."""

from duetdiff.services.annotation_service import AnnotationService
from duetdiff.services.artifact_service import ArtifactService
from duetdiff.services.calibration_service import CalibrationService
from duetdiff.services.checkpoint_service import CheckpointService
from duetdiff.services.conditioning_service import ConditioningService
from duetdiff.services.diffusion_service import DiffusionService
from duetdiff.services.encoder_service import EncoderService
from duetdiff.services.evaluation_service import EvaluationService
from duetdiff.services.sampler_service import SamplerService
from duetdiff.services.stats_service import StatsService
from duetdiff.services.synth_service import SynthService
from duetdiff.services.training_service import TrainingService

__all__ = [
    "AnnotationService",
    "ArtifactService",
    "CalibrationService",
    "CheckpointService",
    "ConditioningService",
    "DiffusionService",
    "EncoderService",
    "EvaluationService",
    "SamplerService",
    "StatsService",
    "SynthService",
    "TrainingService",
]
