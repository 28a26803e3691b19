"""Command-line front end for the experiment harness.

    regnoise-lab run --config cfg.json [--threads N] [--out DIR]
    regnoise-lab validate --config cfg.json
    regnoise-lab list

Exit codes from `run`: 0 thresholds met, 2 ran but a threshold was missed,
1 invalid config or operational error.  The REGNOISE_SEED environment
variable overrides the master seed.
"""

from __future__ import annotations

import sys

import click

from . import lab


@click.group()
def main() -> None:
    """A numerical laboratory for regularisation by noise."""


@main.command("run")
@click.option("--config", "config_path", required=True,
              type=click.Path(), help="JSON experiment configuration.")
@click.option("--threads", default=1, show_default=True,
              help="Replica worker threads; outputs are identical for any N.")
@click.option("--out", "out_dir", default=None,
              help="Override the config's output directory.")
def run_command(config_path: str, threads: int, out_dir: str | None) -> None:
    """Execute an experiment and write its run directory."""
    try:
        doc = lab.load_config_document(config_path)
        diags = lab.validate(doc)
        if diags:
            for line in diags:
                click.echo(f"invalid: {line}", err=True)
            sys.exit(1)
        config = lab.ExperimentConfig.from_dict(doc)
        manifest = lab.run(config, threads=threads, out_dir=out_dir)
    except lab.LabError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    for fname, digest in sorted(manifest.outputs.items()):
        click.echo(f"{fname}  {digest}")
    click.echo(f"wall time: {manifest.wall_time_s:.2f}s")
    if manifest.passed:
        click.echo("thresholds: PASS")
        sys.exit(0)
    click.echo("thresholds: MISSED")
    sys.exit(2)


@main.command("validate")
@click.option("--config", "config_path", required=True, type=click.Path())
def validate_command(config_path: str) -> None:
    """Check a config's schema and physics without running anything."""
    try:
        doc = lab.load_config_document(config_path)
    except lab.LabError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    diags = lab.validate(doc)
    if diags:
        for line in diags:
            click.echo(f"invalid: {line}", err=True)
        sys.exit(1)
    click.echo("config OK")


@main.command("list")
def list_command() -> None:
    """Show the experiment registry with parameter documentation."""
    for name, (doc, params) in lab.experiment_registry().items():
        click.echo(f"{name}: {doc}")
        for spec in params:
            click.echo(f"    {spec.name} ({spec.kind}, "
                       f"default {spec.default!r}): {spec.doc}")


if __name__ == "__main__":
    main()
