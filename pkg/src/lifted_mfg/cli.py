"""Command-line entry point.

Exit status: 0 when every selected check passes, 1 when some check fails
(the failure list is printed to stderr as JSON), 2 on configuration errors.
Every flag can also be set through a ``LIFTED_MFG_<FLAG>`` environment variable.
"""

from __future__ import annotations

import ast
import json
import sys

import click

from .config import load_config
from .errors import ConfigError, LiftedMFGError
from .runner import COMMANDS, RunResult, run_evaluate

ENV_PREFIX = "LIFTED_MFG"


def _common(fn):
    opts = [
        click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                     envvar=f"{ENV_PREFIX}_CONFIG", help="Run configuration file."),
        click.option("--out", type=click.Path(file_okay=False), envvar=f"{ENV_PREFIX}_OUT",
                     help="Output directory (default: the config's out, else ./out)."),
        click.option("--seed", type=click.IntRange(min=0), envvar=f"{ENV_PREFIX}_SEED"),
        click.option("--particles", type=int, envvar=f"{ENV_PREFIX}_PARTICLES"),
        click.option("--steps", type=int, envvar=f"{ENV_PREFIX}_STEPS"),
        click.option("--tol", type=float, envvar=f"{ENV_PREFIX}_TOL"),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _load(config_path, seed, particles, steps, tol):
    cfg = load_config(config_path)
    return cfg.with_overrides(seed=seed, particles=particles, steps=steps, tol=tol)


def _report(result: RunResult) -> None:
    for c in result.checks:
        status = "PASS" if c.passed else "FAIL"
        rel = "<=" if c.kind == "max" else ">="
        click.echo(f"{status} {c.name}: {c.value:.6g} {rel} {c.threshold:.6g}")
    if result.failures:
        payload = {"command": result.command, "failures": [c.as_dict() for c in result.failures]}
        click.echo(json.dumps(payload, sort_keys=True), err=True)


def _execute(action) -> None:
    try:
        result = action()
    except ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(2)
    except (LiftedMFGError, ValueError) as err:
        click.echo(json.dumps({"error": type(err).__name__, "message": str(err)}), err=True)
        sys.exit(1)
    _report(result)
    sys.exit(0 if result.ok else 1)


@click.group()
@click.version_option(package_name="artifact")
def main() -> None:
    """Solve and verify LQ mean field games with common noise."""


def _make(name: str, help_text: str):
    @_common
    def command(config_path, out, seed, particles, steps, tol):
        def action():
            cfg = _load(config_path, seed, particles, steps, tol)
            return COMMANDS[name](cfg, out or cfg.out or "out")

        _execute(action)

    command.__doc__ = help_text
    main.command(name=name)(command)


_make("solve", "Integrate the coefficient ODEs and write trajectories.csv.")
_make("simulate", "Run the Monte Carlo checks and write simulation.csv.")
_make("verify", "Residual battery and problem-specific identities; writes residuals.csv.")
_make("compensator-check", "Prototype-oracle and heat-equation compensator battery.")
_make("separation-check", "Partial-observation identities against the full-observation solve.")


def _vector(text: str | None):
    if text is None:
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise click.BadParameter(f"not a number or list: {text!r}") from None


@main.command(name="evaluate")
@_common
@click.option("--t", "t", type=float, default=0.0, show_default=True)
@click.option("--x", "x", default="0", show_default=True, help="State (number or list).")
@click.option("--y", "y", default="0", show_default=True, help="Present common-noise value.")
@click.option("--z", "z", default=None, help="Present observation value (Problem 4).")
@click.option("--path-seed", type=click.IntRange(min=0), default=None,
              help="Use a sampled Brownian history instead of the zero path.")
def evaluate(config_path, out, seed, particles, steps, tol, t, x, y, z, path_seed):
    """Value and feedback at a single point; writes summary.json."""

    def action():
        cfg = _load(config_path, seed, particles, steps, tol)
        result = run_evaluate(cfg, out or cfg.out or "out", t, _vector(x), _vector(y), _vector(z), path_seed)
        click.echo(json.dumps({k: v for k, v in json.loads(result.to_json())["summary"].items()}, sort_keys=True))
        return result

    _execute(action)


if __name__ == "__main__":  # pragma: no cover
    main()
