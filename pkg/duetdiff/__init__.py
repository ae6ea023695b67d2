"""
DuetDiff: dual-subject conditional diffusion at desk scale.

A toy two-identity image generator with separate image cross-attention
branches per reference, subject-augmented text conditioning and two-stage
sampling, plus the annotation pipeline that builds its paired dataset.
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from flask import Flask
from flask.logging import default_handler

from duetdiff.config import config

__version__ = "0.1.0"


class DuetDiffApp(Flask):
    """
    Flask application shared by every command.

    There are no routes; the app carries the environment configuration, the
    package logger, the error handler registry and the ``flask.cli`` command
    group. ``handle_exception`` turns an error into a process exit code.
    """

    def handle_exception(self, e: Exception) -> int:  # type: ignore[override]
        """Exit code from the most specific registered handler; re-raises unhandled errors."""
        handlers = self.error_handler_spec[None][None]
        for klass in type(e).__mro__:
            handler = handlers.get(klass)
            if handler is not None:
                return handler(e, self)
        raise e


def create_app(config_name: Optional[str] = None) -> DuetDiffApp:
    """
    Application factory.

    Args:
        config_name: 'development', 'testing' or 'production'.
                    If None, reads DUETDIFF_CONFIG.

    Returns:
        Configured application with its command group.
    """
    if config_name is None:
        config_name = os.environ.get("DUETDIFF_CONFIG", "development")
    config_class = config.get(config_name, config["default"])

    app = DuetDiffApp("duetdiff")
    app.config.from_object(config_class)
    app.config["ENV_NAME"] = config_name

    configure_torch(app)
    register_error_handlers(app)
    register_cli_commands(app)
    configure_logging(app)

    if hasattr(config_class, "init_app"):
        config_class.init_app(app)

    return app


def configure_torch(app: Flask) -> None:
    """Apply the torch runtime settings."""
    import torch

    torch.set_num_threads(int(app.config.get("TORCH_NUM_THREADS", 1)))


def register_error_handlers(app: Flask) -> None:
    from duetdiff.middleware.error_handlers import register_error_handlers as register

    register(app)


def register_cli_commands(app: Flask) -> None:
    """Build the root command group and attach the command groups."""
    from duetdiff.cli import DuetDiffGroup, dataset_commands, model_commands

    app.cli = DuetDiffGroup(name=app.name, help="Dual-subject diffusion toolkit.")
    app.cli.add_command(dataset_commands.dataset_cli)
    for command in model_commands.COMMANDS:
        app.cli.add_command(command)


def configure_logging(app: Flask) -> None:
    """Configure package logging."""
    if app.testing:
        return

    log_level = getattr(logging, app.config.get("LOG_LEVEL", "INFO"))
    log_file = app.config.get("LOG_FILE")

    if log_file:
        log_dir = Path(log_file).parent
        log_dir.mkdir(parents=True, exist_ok=True)
        handler = RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=10)  # 10MB
    else:
        handler = logging.StreamHandler()

    handler.setLevel(log_level)
    formatter = logging.Formatter("%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]")
    handler.setFormatter(formatter)

    app.logger.removeHandler(default_handler)

    # Repeated factory calls in one process must not stack handlers
    for existing in list(app.logger.handlers):
        if getattr(existing, "_duetdiff", False):
            app.logger.removeHandler(existing)
    handler._duetdiff = True
    app.logger.addHandler(handler)
    app.logger.setLevel(log_level)

    app.logger.debug("Application startup")
