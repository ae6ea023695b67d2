"""
Checkpoint service: safetensors archives of the model weights.

The archive header lists every tensor (name, dtype, shape, offsets); tensors
are stored as little-endian float32. A single metadata entry holds the
format tag with the model configuration and layer manifest as sorted JSON.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import torch
from safetensors import SafetensorError, safe_open
from safetensors.torch import save_file

from duetdiff.models.settings import ModelConfig
from duetdiff.nn.denoiser import DuetDiffModel, describe_architecture
from duetdiff.utils.constants import CHECKPOINT_FORMAT
from duetdiff.utils.exceptions import ArtifactIOError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
METADATA_KEY = "duetdiff"


class CheckpointService:
    """Service for saving and loading model checkpoints."""

    @staticmethod
    def state_tensors(model: DuetDiffModel) -> Dict[str, torch.Tensor]:
        """Named float32 copies of every parameter, in registration order."""
        return {name: param.detach().to(torch.float32).contiguous().clone() for name, param in model.named_parameters()}

    @staticmethod
    def save(model: DuetDiffModel, path: PathLike, extra: Optional[Mapping[str, Any]] = None) -> Path:
        """
        Write a checkpoint.

        Args:
            model: Model to save
            path: Target file
            extra: Additional JSON-serializable metadata (e.g. the resolved run config)

        Returns:
            The written path

        Raises:
            ArtifactIOError: The file cannot be written
        """
        path = Path(path)
        header = dict(extra or {})
        header.update(
            format=CHECKPOINT_FORMAT,
            model_config=model.config.to_dict(),
            manifest=describe_architecture(model).to_dict(),
        )
        metadata = {METADATA_KEY: json.dumps(header, sort_keys=True)}
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_file(CheckpointService.state_tensors(model), str(path), metadata=metadata)
        except OSError as e:
            raise ArtifactIOError(f"Cannot write checkpoint {path}: {e}", path=str(path))
        logger.info(f"Saved checkpoint to {path}")
        return path

    @staticmethod
    def read_metadata(path: PathLike) -> Dict[str, Any]:
        """Decoded checkpoint header; empty for archives written by other tools."""
        path = Path(path)
        if not path.is_file():
            raise ArtifactIOError(f"Checkpoint not found: {path}", path=str(path))
        try:
            with safe_open(str(path), framework="pt") as f:
                raw = dict(f.metadata() or {})
            return json.loads(raw[METADATA_KEY]) if METADATA_KEY in raw else {}
        except (OSError, ValueError, RuntimeError, SafetensorError) as e:
            raise ArtifactIOError(f"Unreadable checkpoint {path}: {e}", path=str(path))

    @staticmethod
    def load(path: PathLike) -> Tuple[DuetDiffModel, Dict[str, Any]]:
        """
        Rebuild a model from a checkpoint.

        Returns:
            Tuple of (model in eval mode, decoded metadata)

        Raises:
            ArtifactIOError: Missing, unreadable or foreign checkpoint
        """
        path = Path(path)
        metadata = CheckpointService.read_metadata(path)
        if metadata.get("format") != CHECKPOINT_FORMAT:
            raise ArtifactIOError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint", path=str(path))
        config = ModelConfig.from_dict(metadata["model_config"])

        with torch.random.fork_rng(devices=[]):
            model = DuetDiffModel(config)
        try:
            with safe_open(str(path), framework="pt") as f:
                state = {name: f.get_tensor(name) for name in f.keys()}
        except (OSError, RuntimeError, SafetensorError) as e:
            raise ArtifactIOError(f"Unreadable checkpoint {path}: {e}", path=str(path))
        missing = set(dict(model.named_parameters())) - set(state)
        if missing:
            raise ArtifactIOError(f"Checkpoint {path} lacks {len(missing)} tensors", missing=sorted(missing))
        model.load_state_dict(state, strict=True)
        model.eval()
        for param in model.parameters():
            param.requires_grad_(False)
        logger.info(f"Loaded checkpoint {path} ({len(state)} tensors)")
        return model, metadata
