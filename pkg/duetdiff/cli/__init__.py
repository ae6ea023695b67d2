"""
Command line interface.

``duetdiff dataset ...`` builds and curates the paired dataset; ``train``,
``sample``, ``sweep``, ``saliency`` and ``gradcheck`` work with the model.
Every command resolves its settings into a RunConfig (flag > config file >
environment > default) and writes them next to its artifacts.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import click
from flask import Flask, has_app_context
from flask.cli import AppGroup

from duetdiff.config import RunConfig
from duetdiff.utils.constants import RESOLVED_CONFIG_FILE, ExitCode

logger = logging.getLogger(__name__)


class DuetDiffGroup(AppGroup):
    """
    Root group; usage errors exit with 64 instead of click's 2.

    Commands run inside the application context of the app passed as
    ``obj``, so ``current_app`` resolves in every command.
    """

    def invoke(self, ctx: click.Context) -> Any:
        app = ctx.obj
        if isinstance(app, Flask) and not has_app_context():
            with app.app_context():
                return super().invoke(ctx)
        return super().invoke(ctx)

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
            code = rv if isinstance(rv, int) else ExitCode.OK
        except click.UsageError as e:
            e.show()
            code = ExitCode.USAGE
        except click.ClickException as e:
            e.show()
            code = e.exit_code
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            code = ExitCode.VALIDATION
        if standalone_mode:
            sys.exit(code)
        return code


config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Run config file of key = value lines.",
)


def resolve_run_config(config_path: Optional[Path], flags: Mapping[str, Any]) -> RunConfig:
    """RunConfig from a config file plus the flags that were given."""
    run_config = RunConfig.load(config_path, flags)
    overridden = sorted(k for k, v in flags.items() if v is not None)
    logger.debug(f"Resolved run config; flags given for {overridden}")
    return run_config


def write_resolved_config(out_dir: Path, run_config: RunConfig, command: str) -> Path:
    from duetdiff.services.artifact_service import ArtifactService

    resolved = {"command": command, "settings": run_config.to_dict()}
    return ArtifactService.write_json(resolved, out_dir / RESOLVED_CONFIG_FILE)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console entry point."""
    from duetdiff import create_app

    app = create_app()
    args = list(argv) if argv is not None else None
    return app.cli.main(args=args, prog_name="duetdiff", obj=app)
