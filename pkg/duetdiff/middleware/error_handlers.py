"""
Global error handlers.

Maps package exceptions to logged messages and process exit codes for all
CLI commands.
"""

import functools
from typing import Callable

import click
import sentry_sdk
from flask import current_app, has_app_context

from duetdiff.utils.constants import ExitCode
from duetdiff.utils.exceptions import (
    ArtifactIOError,
    ConfigurationError,
    DuetDiffError,
    InputError,
    NumericFailure,
    RecordValidationError,
)


def _report(error: Exception) -> None:
    click.echo(f"Error: {error}", err=True)


def handle_configuration_error(error: ConfigurationError, app) -> int:
    """Handle invalid settings and flag combinations."""
    app.logger.warning(f"Configuration error: {error}")
    _report(error)
    return ExitCode.USAGE


def handle_input_error(error: InputError, app) -> int:
    """Handle invalid inputs to an operation."""
    app.logger.warning(f"Validation error: {error} {error.details or ''}".rstrip())
    _report(error)
    return ExitCode.VALIDATION


def handle_record_error(error: RecordValidationError, app) -> int:
    """Handle malformed JSONL records."""
    app.logger.warning(f"Record error: {error}")
    _report(error)
    return ExitCode.VALIDATION


def handle_numeric_failure(error: NumericFailure, app) -> int:
    """Handle non-finite values during training or sampling."""
    app.logger.error(f"Numeric failure at step {error.step}: {error} {error.details}")
    _report(error)
    return ExitCode.VALIDATION


def handle_artifact_error(error: ArtifactIOError, app) -> int:
    """Handle unreadable or unwritable artifacts."""
    app.logger.error(f"I/O error: {error}")
    _report(error)
    return ExitCode.IO


def handle_unexpected_error(error: Exception, app) -> int:
    """Handle anything not raised on purpose."""
    app.logger.error(f"Unexpected error: {error}", exc_info=True)
    sentry_sdk.capture_exception(error)
    _report(error)
    return ExitCode.VALIDATION


def register_error_handlers(app):
    """Register all error handlers with the app."""
    app.register_error_handler(ConfigurationError, handle_configuration_error)
    app.register_error_handler(RecordValidationError, handle_record_error)
    app.register_error_handler(InputError, handle_input_error)
    app.register_error_handler(NumericFailure, handle_numeric_failure)
    app.register_error_handler(ArtifactIOError, handle_artifact_error)
    app.register_error_handler(DuetDiffError, handle_input_error)
    app.register_error_handler(Exception, handle_unexpected_error)


def cli_errors(f: Callable) -> Callable:
    """
    Run a command under the app's error handlers.

    A handled error ends the command with the handler's exit code.
    """

    @functools.wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except Exception as e:
            if not has_app_context():
                raise
            click.get_current_context().exit(current_app.handle_exception(e))

    return decorated_function
