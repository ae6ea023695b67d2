"""
Pytest configuration and fixtures.

Provides test fixtures for the entire test suite.
"""

import numpy as np
import pytest
from click.testing import CliRunner

from duetdiff import create_app
from duetdiff.models.prompt import PromptSpec
from duetdiff.models.settings import ModelConfig
from duetdiff.services.conditioning_service import ConditioningService
from duetdiff.services.diffusion_service import DiffusionService
from duetdiff.services.synth_service import SynthService
from duetdiff.services.training_service import build_model


@pytest.fixture
def app():
    """Create application for testing."""
    return create_app("testing")


@pytest.fixture
def runner():
    """CLI test runner."""
    return CliRunner()


@pytest.fixture
def invoke(app, runner):
    """Invoke the root command group with the app as context object."""

    def _invoke(*args):
        return runner.invoke(app.cli, [str(a) for a in args], obj=app)

    return _invoke


@pytest.fixture
def tiny_config():
    """Two-level model small enough for fast CPU tests."""
    return ModelConfig(
        image_size=8,
        levels=2,
        base_channels=8,
        groups=4,
        attn_dim=8,
        num_tokens=4,
        d_small=8,
        d_text=16,
        d_patch=8,
        d_id=8,
        patch_size=8,
        reference_size=32,
        ff_mult=2,
        time_dim=8,
    )


@pytest.fixture
def model(tiny_config):
    """Freshly initialized tiny model in eval mode."""
    return build_model(tiny_config, seed=0).eval()


@pytest.fixture
def schedule():
    """Short linear schedule."""
    return DiffusionService.make_schedule(100, 1e-4, 2e-2)


@pytest.fixture
def identities():
    """Two distinct toy identities."""
    return SynthService.make_identity(1), SynthService.make_identity(2)


@pytest.fixture
def references(identities):
    """Reference images of the two identities."""
    return tuple(SynthService.render_reference(identity) for identity in identities)


@pytest.fixture
def prompt():
    """Prompt naming two subjects at tokens 1 and 4."""
    return PromptSpec.from_caption("a man and a woman posing in park")


@pytest.fixture
def bundle(prompt, references, model):
    """Conditioning bundle of the prompt and references under the tiny model."""
    return ConditioningService.build_bundle(prompt, references[0], references[1], model)


@pytest.fixture
def scene():
    """Deterministic half-body scene."""
    return SynthService.make_scene(4, np.random.default_rng(0))


@pytest.fixture
def corpus():
    """Small rendered corpus."""
    return SynthService.make_dataset(8, seed=0)
