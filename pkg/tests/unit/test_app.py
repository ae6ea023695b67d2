"""
Unit tests for the application factory and its command group.
"""

import click
from flask import Flask, current_app
from flask.cli import AppGroup

from duetdiff import DuetDiffApp, create_app
from duetdiff.utils.constants import ExitCode
from duetdiff.utils.exceptions import ArtifactIOError, ConfigurationError


class TestCreateApp:
    """Tests for the application factory."""

    def test_flask_app(self, app):
        """Test the factory builds a Flask app configured from the testing class."""
        assert isinstance(app, Flask)
        assert isinstance(app, DuetDiffApp)
        assert app.testing
        assert app.config["ENV_NAME"] == "testing"
        assert app.config["SHOW_PROGRESS"] is False

    def test_development_config(self):
        """Test another environment loads its own values."""
        app = create_app("development")

        assert app.debug
        assert app.config["LOG_LEVEL"] == "DEBUG"

    def test_handlers_registered(self, app):
        """Test package errors are registered through Flask's error handler table."""
        handlers = app.error_handler_spec[None][None]

        assert ConfigurationError in handlers
        assert Exception in handlers


class TestCommandGroup:
    """Tests for the root command group."""

    def test_app_group(self, app):
        """Test the root and dataset groups are Flask command groups."""
        assert isinstance(app.cli, AppGroup)
        assert isinstance(app.cli.commands["dataset"], AppGroup)
        assert {"dataset", "train", "sample", "sweep", "saliency", "gradcheck"} <= set(app.cli.commands)

    def test_commands_see_current_app(self, app, invoke):
        """Test commands run inside the app context."""

        @app.cli.command("whoami")
        def whoami():
            click.echo(current_app.config["ENV_NAME"])

        result = invoke("whoami")

        assert result.exit_code == ExitCode.OK
        assert result.output.strip() == "testing"

    def test_handled_error_exit_code(self, app, invoke):
        """Test a package error raised in a command exits with its handler's code."""
        from duetdiff.middleware.error_handlers import cli_errors

        @app.cli.command("broken")
        @cli_errors
        def broken():
            raise ArtifactIOError("gone", path="x")

        result = invoke("broken")

        assert result.exit_code == ExitCode.IO
        assert "Error: gone" in result.output

    def test_main_exit_code(self, app):
        """Test the root group returns usage errors as exit code 64 outside standalone mode."""
        code = app.cli.main(args=["dataset", "filter"], prog_name="duetdiff", obj=app, standalone_mode=False)

        assert code == ExitCode.USAGE
