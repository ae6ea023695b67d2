"""
Unit tests for configuration resolution.
"""

import pytest

from duetdiff.config import RUN_SETTINGS, RunConfig, get_config
from duetdiff.config import config as environments
from duetdiff.utils.exceptions import ConfigurationError


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv("DUETDIFF_SEED", raising=False)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# training run\nlr=1e-4\nsteps = 12\nseed=9\n")
    return path


class TestEnvironmentConfig:
    """Tests for environment configuration classes."""

    def test_selected_by_variable(self, monkeypatch):
        """Test DUETDIFF_CONFIG picks the configuration class."""
        monkeypatch.setenv("DUETDIFF_CONFIG", "testing")

        assert get_config() is environments["testing"]

    def test_unknown_falls_back(self, monkeypatch):
        """Test an unknown name gives the default configuration."""
        monkeypatch.setenv("DUETDIFF_CONFIG", "staging")

        assert get_config() is environments["default"]


class TestRunConfig:
    """Tests for command settings resolution."""

    def test_defaults(self):
        """Test every setting resolves to its default without inputs."""
        run_config = RunConfig.load()

        assert run_config["lambda"] == 0.6
        assert run_config["sweep_lambdas"] == (0.3, 0.5, 0.7, 0.9)
        assert run_config["m_override"] is None
        assert all(run_config.source(key) == "default" for key in RUN_SETTINGS)

    def test_file_values(self, config_file):
        """Test file values are parsed to the setting's type."""
        run_config = RunConfig.load(config_file)

        assert run_config["lr"] == 1e-4
        assert run_config["steps"] == 12
        assert run_config.source("steps") == "file"

    def test_precedence(self, config_file, monkeypatch):
        """Test flag beats file, file beats environment, environment beats default."""
        monkeypatch.setenv("DUETDIFF_SEED", "4")

        assert RunConfig.load()["seed"] == 4
        assert RunConfig.load().source("seed") == "env"
        assert RunConfig.load(config_file)["seed"] == 9
        resolved = RunConfig.load(config_file, {"seed": 21, "steps": None})
        assert resolved["seed"] == 21
        assert resolved.source("seed") == "flag"
        assert resolved["steps"] == 12

    def test_booleans_and_lists(self):
        """Test boolean and list settings accept their text forms."""
        run_config = RunConfig.load(overrides={"shared_image_kv": "yes", "sweep_lambdas": "0.1, 0.2"})

        assert run_config["shared_image_kv"] is True
        assert run_config["sweep_lambdas"] == (0.1, 0.2)

    def test_to_dict(self):
        """Test the resolved dictionary is sorted and JSON-ready."""
        data = RunConfig.load().to_dict()

        assert list(data) == sorted(RUN_SETTINGS)
        assert data["sweep_lambdas"] == [0.3, 0.5, 0.7, 0.9]

    def test_unknown_file_key(self, tmp_path):
        """Test unknown keys in a file are rejected."""
        path = tmp_path / "bad.cfg"
        path.write_text("learning_rate=0.1\n")

        with pytest.raises(ConfigurationError):
            RunConfig.load(path)

    def test_unknown_override(self):
        """Test unknown override keys are rejected."""
        with pytest.raises(ConfigurationError):
            RunConfig.load(overrides={"nonsense": 1})

    @pytest.mark.parametrize("key,value", [("steps", "many"), ("shared_image_kv", "maybe"), ("sweep_lambdas", "")])
    def test_bad_values(self, key, value):
        """Test unparsable values are rejected."""
        with pytest.raises(ConfigurationError):
            RunConfig.load(overrides={key: value})

    def test_missing_file(self, tmp_path):
        """Test a missing config file is rejected."""
        with pytest.raises(ConfigurationError):
            RunConfig.load(tmp_path / "absent.cfg")

    def test_bad_environment_seed(self, monkeypatch):
        """Test an unparsable seed variable is rejected."""
        monkeypatch.setenv("DUETDIFF_SEED", "abc")

        with pytest.raises(ConfigurationError):
            RunConfig.load()

    def test_unknown_lookup(self):
        """Test reading an unknown setting is a configuration error."""
        with pytest.raises(ConfigurationError):
            RunConfig.load()["nonsense"]
