"""
Unit tests for checkpoint archives.
"""

import pytest
import torch
from safetensors.torch import save_file

from duetdiff.services.checkpoint_service import CheckpointService
from duetdiff.utils.constants import CHECKPOINT_FORMAT
from duetdiff.utils.exceptions import ArtifactIOError


class TestCheckpointRoundTrip:
    """Tests for save and load."""

    def test_same_predictions(self, model, bundle, tmp_path):
        """Test a reloaded model predicts exactly like the saved one."""
        path = CheckpointService.save(model, tmp_path / "model.safetensors")
        loaded, _ = CheckpointService.load(path)
        z = torch.randn(1, *model.config.latent_shape, generator=torch.Generator().manual_seed(0))

        with torch.no_grad():
            assert torch.equal(model(z, 30, bundle, 0.6), loaded(z, 30, bundle, 0.6))

    def test_metadata(self, model, tmp_path):
        """Test the header holds the format, configuration, manifest and extras."""
        path = CheckpointService.save(model, tmp_path / "model.safetensors", extra={"seed": 7})

        metadata = CheckpointService.read_metadata(path)

        assert metadata["format"] == CHECKPOINT_FORMAT
        assert metadata["model_config"] == model.config.to_dict()
        assert metadata["manifest"]["sites"] == ["sites.0", "sites.1"]
        assert metadata["seed"] == 7

    def test_loaded_model_frozen(self, model, tmp_path):
        """Test a loaded model is in eval mode without gradients."""
        loaded, _ = CheckpointService.load(CheckpointService.save(model, tmp_path / "m.safetensors"))

        assert not loaded.training
        assert not any(p.requires_grad for p in loaded.parameters())

    def test_byte_identical(self, model, tmp_path):
        """Test saving the same model twice writes the same bytes."""
        a = CheckpointService.save(model, tmp_path / "a.safetensors")
        b = CheckpointService.save(model, tmp_path / "b.safetensors")

        assert a.read_bytes() == b.read_bytes()

    def test_creates_parent_directories(self, model, tmp_path):
        """Test missing output directories are created."""
        path = CheckpointService.save(model, tmp_path / "runs" / "one" / "model.safetensors")

        assert path.is_file()


class TestCheckpointErrors:
    """Tests for unreadable checkpoints."""

    def test_missing_file(self, tmp_path):
        """Test a missing checkpoint raises an IO error."""
        with pytest.raises(ArtifactIOError):
            CheckpointService.load(tmp_path / "absent.safetensors")

    def test_foreign_archive(self, tmp_path):
        """Test an archive without the format tag is refused."""
        path = tmp_path / "foreign.safetensors"
        save_file({"w": torch.zeros(2)}, str(path))

        with pytest.raises(ArtifactIOError):
            CheckpointService.load(path)

    def test_garbage_file(self, tmp_path):
        """Test a file that is not an archive raises an IO error."""
        path = tmp_path / "garbage.safetensors"
        path.write_bytes(b"not a checkpoint")

        with pytest.raises(ArtifactIOError):
            CheckpointService.read_metadata(path)
