"""
Application configuration.

Two layers live here:

* Environment configuration classes (development, testing, production),
  read from environment variables and the project's ``.env`` file.
* ``RunConfig``, the command-scoped settings every CLI command resolves from
  a plain-text ``key = value`` file plus flag overrides.
"""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

# Load environment variables from .env file before any config is read
from dotenv import dotenv_values, load_dotenv

from duetdiff.utils.exceptions import ConfigurationError

# Base directory of the project
BASE_DIR = Path(__file__).resolve().parent.parent

# Load .env from the project root
load_dotenv(BASE_DIR / ".env")


class Config:
    """Base configuration with default values."""

    DEBUG = False
    TESTING = False

    # Logging
    LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO")
    LOG_FILE = os.environ.get("LOG_FILE", "logs/duetdiff.log")

    # Torch runtime; a fixed thread count keeps reduction order, and artifact bytes, stable
    TORCH_NUM_THREADS = int(os.environ.get("TORCH_NUM_THREADS", 1))

    # Progress bars for long loops
    SHOW_PROGRESS = os.environ.get("SHOW_PROGRESS", "true").lower() == "true"

    # Sentry error monitoring
    SENTRY_DSN = os.environ.get("SENTRY_DSN")


class DevelopmentConfig(Config):
    """Development configuration with verbose console logging."""

    DEBUG = True
    LOG_LEVEL = "DEBUG"
    LOG_FILE = None


class TestingConfig(Config):
    """Testing configuration: quiet and without file output."""

    TESTING = True
    LOG_FILE = None
    SHOW_PROGRESS = False


class ProductionConfig(Config):
    """Production configuration for long unattended runs."""

    LOG_LEVEL = "WARNING"

    @classmethod
    def init_app(cls, app):
        """Production-specific initialization."""
        # Initialize Sentry if DSN is configured
        if cls.SENTRY_DSN:
            import sentry_sdk

            sentry_sdk.init(
                dsn=cls.SENTRY_DSN,
                traces_sample_rate=0.1,
                environment="production",
            )


# Configuration dictionary for easy access
config = {
    "development": DevelopmentConfig,
    "testing": TestingConfig,
    "production": ProductionConfig,
    "default": DevelopmentConfig,
}


def get_config():
    """Get configuration class based on environment."""
    env = os.environ.get("DUETDIFF_CONFIG", "development")
    return config.get(env, config["default"])


# =============================================================================
# Run configuration
# =============================================================================


def _parse_bool(value: Union[str, bool]) -> bool:
    if isinstance(value, bool):
        return value
    lowered = str(value).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_float_list(value: Union[str, Tuple[float, ...]]) -> Tuple[float, ...]:
    if isinstance(value, (tuple, list)):
        return tuple(float(v) for v in value)
    parts = [p.strip() for p in str(value).split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _parse_optional_float(value: Optional[Union[str, float]]) -> Optional[float]:
    if value is None or (isinstance(value, str) and not value.strip()):
        return None
    return float(value)


def _parse_optional_str(value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    text = str(value).strip()
    return text or None


@dataclass(frozen=True)
class Setting:
    """One documented run setting."""

    default: Any
    parse: Callable[[Any], Any]
    help: str


RUN_SETTINGS: Dict[str, Setting] = {
    # Global
    "seed": Setting(0, int, "Global seed; falls back to DUETDIFF_SEED"),
    "workers": Setting(1, int, "Thread workers for sample grids and sweeps"),
    # Dataset building
    "count": Setting(16, int, "Number of synthetic records to render"),
    "min_dim": Setting(400, int, "Images whose smaller side is at most this are rejected"),
    "iou_dup": Setting(0.8, float, "Grounding boxes at or above this IoU are duplicates"),
    "iou_review": Setting(0.6, float, "IoU below this flags a calibration for review"),
    "quorum": Setting(3, int, "Detection sets with two person boxes required for calibration"),
    "per_person": Setting(True, _parse_bool, "Choose the calibrated box per person instead of per pair"),
    "ratio": Setting(0.9, float, "Train share of the stratified split"),
    "rare_scene_min": Setting(10, int, "Scenes with fewer records are merged into 'other'"),
    "detector_jitter": Setting(12.0, float, "Std of simulated detector box noise (source pixels)"),
    # Model
    "image_size": Setting(32, int, "Latent side length"),
    "patch_size": Setting(8, int, "Patch side for the patch encoder"),
    "levels": Setting(2, int, "Resolution levels of the denoiser"),
    "base_channels": Setting(32, int, "Feature channels of the denoiser"),
    "attn_dim": Setting(32, int, "Attention width at every site"),
    "heads": Setting(1, int, "Attention heads"),
    "num_tokens": Setting(16, int, "Visual tokens per reference"),
    "d_small": Setting(32, int, "Small text encoder width"),
    "d_text": Setting(64, int, "Large text encoder width"),
    "d_patch": Setting(32, int, "Patch feature width"),
    "d_id": Setting(32, int, "Face identity vector width"),
    "shared_image_kv": Setting(False, _parse_bool, "Share one key/value pair between both references"),
    "use_subject_conditioning": Setting(True, _parse_bool, "Inject identity features at subject tokens"),
    "use_id_enhancement": Setting(True, _parse_bool, "Let the identity projector attend over patches"),
    "query_positions": Setting(True, _parse_bool, "Add a grid position encoding to attention queries"),
    # Schedule
    "train_timesteps": Setting(1000, int, "Diffusion timesteps T"),
    "beta_start": Setting(1e-4, float, "First beta of the linear ramp"),
    "beta_end": Setting(2e-2, float, "Last beta of the linear ramp"),
    # Training
    "train_steps": Setting(2000, int, "Adapter optimization steps"),
    "batch_size": Setting(8, int, "Training batch size"),
    "lr": Setting(1e-3, float, "Adapter learning rate"),
    "weight_decay": Setting(0.01, float, "Decoupled weight decay"),
    "adam_beta1": Setting(0.9, float, "First moment coefficient"),
    "adam_beta2": Setting(0.999, float, "Second moment coefficient"),
    "cond_drop_prob": Setting(0.1, float, "Probability of replacing a bundle with the null condition"),
    "base_steps": Setting(3000, int, "Backbone pretraining steps before the adapter stage"),
    "base_lr": Setting(1e-3, float, "Backbone pretraining learning rate"),
    "log_every": Setting(50, int, "Training steps between loss log lines"),
    # Sampling
    "steps": Setting(50, int, "Sampling iterations"),
    "guidance": Setting(7.5, float, "Classifier-free guidance scale"),
    "lambda": Setting(0.6, float, "Image-conditioning weight of the early stage"),
    "stage_split": Setting(0.2, float, "Fraction of iterations run as the early stage"),
    "m_recompute": Setting(True, _parse_bool, "Recompute the fusion map at every late-stage step"),
    "m_override": Setting(None, _parse_optional_float, "Force the fusion map to this constant"),
    "update": Setting("ddim", str, "Reverse rule: ddim or mean"),
    "clip_sample": Setting(True, _parse_bool, "Clamp the predicted clean latent in the ddim rule"),
    "prompt": Setting(None, _parse_optional_str, "Sampling prompt; a template prompt when unset"),
    "id1_seed": Setting(1, int, "Identity seed of the first reference"),
    "id2_seed": Setting(2, int, "Identity seed of the second reference"),
    "sweep_lambdas": Setting((0.3, 0.5, 0.7, 0.9), _parse_float_list, "Lambda values of a sweep"),
    "sweep_seeds": Setting(20, int, "Seeds per lambda value"),
    # Verification
    "gradcheck_h": Setting(1e-4, float, "Central difference step"),
    "gradcheck_tol": Setting(1e-3, float, "Relative error tolerance"),
    "gradcheck_max_coords": Setting(0, int, "Coordinates checked per group; 0 checks all"),
}

ENV_FALLBACKS = {"seed": "DUETDIFF_SEED"}


class RunConfig:
    """
    Resolved command settings.

    Resolution order is flag > config file > environment > default. Unknown
    keys in the file or in overrides are rejected.

    Usage:
        run_config = RunConfig.load("train.cfg", {"lr": 1e-4})
        run_config["lr"]
    """

    def __init__(self, values: Mapping[str, Any], sources: Mapping[str, str]):
        self._values = dict(values)
        self._sources = dict(sources)

    def __repr__(self) -> str:
        return f"<RunConfig {len(self._values)} settings>"

    def __getitem__(self, key: str) -> Any:
        if key not in self._values:
            raise ConfigurationError(f"Unknown setting: {key}")
        return self._values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self._values.get(key, default)

    def source(self, key: str) -> str:
        """Where a value came from: flag, file, env or default."""
        return self._sources[key]

    def to_dict(self) -> Dict[str, Any]:
        """Resolved values, lists as lists, ready for JSON."""
        out = {}
        for key in sorted(self._values):
            value = self._values[key]
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    @staticmethod
    def _coerce(key: str, value: Any) -> Any:
        if key not in RUN_SETTINGS:
            raise ConfigurationError(f"Unknown setting: {key}")
        try:
            return RUN_SETTINGS[key].parse(value)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid value for {key}: {value!r} ({e})")

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """
        Resolve settings from a config file and flag overrides.

        Args:
            path: Optional ``key = value`` file
            overrides: Flag values; ``None`` entries mean "flag not given"

        Returns:
            Resolved RunConfig

        Raises:
            ConfigurationError: Unknown key, unparsable value or missing file
        """
        file_values: Dict[str, Any] = {}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigurationError(f"Config file not found: {path}")
            file_values = {k.strip(): v for k, v in dotenv_values(path).items()}

        values: Dict[str, Any] = {}
        sources: Dict[str, str] = {}
        for key, setting in RUN_SETTINGS.items():
            values[key] = setting.default
            sources[key] = "default"
            env_name = ENV_FALLBACKS.get(key)
            if env_name and os.environ.get(env_name) not in (None, ""):
                values[key] = cls._coerce(key, os.environ[env_name])
                sources[key] = "env"

        for key, raw in file_values.items():
            values[key] = cls._coerce(key, raw)
            sources[key] = "file"

        for key, raw in (overrides or {}).items():
            if raw is None:
                continue
            values[key] = cls._coerce(key, raw)
            sources[key] = "flag"

        return cls(values, sources)
