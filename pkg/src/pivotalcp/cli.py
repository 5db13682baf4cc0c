"""Command-line experiment runner.

Each subcommand runs one desk-scale study and writes plot-ready CSV
files plus a ``manifest.json`` into the output directory.  Exit codes:
0 on success, 2 on configuration errors, 3 on numerical failures.
"""

from __future__ import annotations

import logging
import sys

import click

from .errors import NumericalError, PivotalError, ValidationError
from .experiments import (
    ExperimentConfig,
    make_config,
    parse_config_file,
    run_convergence,
    run_experiment,
    run_illustration_ks,
    run_marginal_check,
    run_toy,
)

__all__ = [
    "ExperimentConfig",
    "main",
    "run_convergence",
    "run_experiment",
    "run_illustration_ks",
    "run_marginal_check",
    "run_toy",
]

EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


@click.group()
@click.option("--verbose", is_flag=True, help="Enable info-level logging.")
def main(verbose: bool) -> None:
    """Conformal prediction with a conditional-CDF score correction."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _run(experiment: str, config_path, seed, out) -> None:
    try:
        raw = parse_config_file(config_path) if config_path else {}
        raw["experiment"] = experiment
        config = make_config(raw, seed=seed, out=out)
        files = run_experiment(config)
    except (ValidationError, ValueError, TypeError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except (NumericalError, FloatingPointError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL_ERROR)
    except PivotalError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    for path in files:
        click.echo(str(path))


def _experiment_command(name: str, experiment: str, help_text: str):
    @main.command(name, help=help_text)
    @click.option("--config", "config_path", type=click.Path(), default=None,
                  help="Flat key=value configuration file.")
    @click.option("--seed", type=int, default=None,
                  help="Override the configured seed.")
    @click.option("--out", type=click.Path(), default=None,
                  help="Override the output directory.")
    def command(config_path, seed, out):
        _run(experiment, config_path, seed, out)

    return command


toy = _experiment_command(
    "toy", "toy",
    "Compare base and corrected regions on the three toy score/level pairs.",
)
convergence = _experiment_command(
    "convergence", "convergence",
    "L1 conditional coverage gap as a function of the training-set size.",
)
illustration_ks = _experiment_command(
    "illustration-ks", "illustration_ks",
    "Conditional CDF curves, KS distances and the coverage-gap bound.",
)
marginal_check = _experiment_command(
    "marginal-check", "marginal_check",
    "Empirical marginal coverage versus the finite-sample bracket.",
)


if __name__ == "__main__":
    main()
