"""
Unit tests for exception-to-exit-code handling.
"""

import pytest

from duetdiff.config import config as environments
from duetdiff.utils.constants import ExitCode
from duetdiff.utils.exceptions import (
    ArtifactIOError,
    ConfigurationError,
    DuplicateDetectionError,
    NumericFailure,
    RecordValidationError,
    ShapeMismatchError,
)


class TestHandleException:
    """Tests for the app's error handler registry."""

    @pytest.mark.parametrize(
        "error,code",
        [
            (ConfigurationError("bad key"), ExitCode.USAGE),
            (ArtifactIOError("missing", path="x"), ExitCode.IO),
            (RecordValidationError("line 3", line=3), ExitCode.VALIDATION),
            (ShapeMismatchError("widths"), ExitCode.VALIDATION),
            (DuplicateDetectionError("same person"), ExitCode.VALIDATION),
            (NumericFailure("nan", step=4), ExitCode.VALIDATION),
        ],
    )
    def test_package_errors(self, app, error, code):
        """Test package errors map to their exit codes."""
        assert app.handle_exception(error) == code

    def test_exit_code_attributes(self):
        """Test error classes carry the code their handler returns."""
        assert ConfigurationError.exit_code == ExitCode.USAGE
        assert ArtifactIOError.exit_code == ExitCode.IO
        assert ShapeMismatchError.exit_code == ExitCode.VALIDATION

    def test_unexpected_error_reported(self, app, mocker):
        """Test unexpected errors are sent to error monitoring."""
        capture = mocker.patch("duetdiff.middleware.error_handlers.sentry_sdk.capture_exception")
        error = RuntimeError("boom")

        assert app.handle_exception(error) == ExitCode.VALIDATION
        capture.assert_called_once_with(error)

    def test_package_errors_not_reported(self, app, mocker):
        """Test deliberate errors are not sent to error monitoring."""
        capture = mocker.patch("duetdiff.middleware.error_handlers.sentry_sdk.capture_exception")

        app.handle_exception(ConfigurationError("bad key"))

        capture.assert_not_called()

    def test_error_details(self):
        """Test keyword details are kept on the error."""
        error = NumericFailure("nan latent", step=7, t=120)

        assert error.step == 7
        assert error.details == {"t": 120}
        assert str(error) == "nan latent"


class TestProductionInit:
    """Tests for production-only initialization."""

    def test_sentry_initialized_with_dsn(self, app, mocker):
        """Test error monitoring starts when a DSN is configured."""
        production = environments["production"]
        mocker.patch.object(production, "SENTRY_DSN", "https://key@example.invalid/1")
        init = mocker.patch("sentry_sdk.init")

        production.init_app(app)

        init.assert_called_once()
        assert init.call_args.kwargs["environment"] == "production"

    def test_no_dsn_no_sentry(self, app, mocker):
        """Test error monitoring stays off without a DSN."""
        production = environments["production"]
        mocker.patch.object(production, "SENTRY_DSN", None)
        init = mocker.patch("sentry_sdk.init")

        production.init_app(app)

        init.assert_not_called()
