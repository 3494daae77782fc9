"""The ``runner`` command line: one subcommand per stage."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import RunnerConfig, RunnerConfigError
from .stages import StageError, run_stage


@click.group()
def main() -> None:
    """Run a model stage (or its deterministic mock) against the
    filesystem contracts consumed by the forge pipeline."""


def _run(stage: str, config_path: Path, mock: bool) -> None:
    try:
        config = RunnerConfig.from_file(config_path).stage(stage)
        report = run_stage(config, mock=mock)
    except RunnerConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    except StageError as exc:
        click.echo(json.dumps({"stage": stage, "error": str(exc)}, sort_keys=True), err=True)
        raise click.exceptions.Exit(1)
    click.echo(
        f"{stage}: processed {report.processed}, skipped {report.skipped}, "
        f"outputs {report.outputs}"
    )


def _stage_command(stage: str, help_text: str):
    @main.command(name=stage, help=help_text)
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True, dir_okay=False, path_type=Path))
    @click.option("--mock", is_flag=True, help="Force the deterministic mock adapter.")
    def command(config_path: Path, mock: bool) -> None:
        _run(stage, config_path, mock)

    return command


_stage_command("segment", "Write per-image candidate manifests and mask PNGs.")
_stage_command("refine", "Refine mask PNGs (mock: identity copy).")
_stage_command("inpaint", "Produce target images from source images and masks.")
_stage_command("clip", "Write similarity and classification sample files.")


if __name__ == "__main__":
    sys.exit(main())
