import functools
from pathlib import Path
from typing import Callable

import click

from ..config import get_settings, load_run_config
from ..services.metric_loss import LossKind


def run_options(command: Callable) -> Callable:
    """
    Shared run flags for every stage command. The wrapped command receives the validated
    RunConfig and the environment Settings in place of the raw flag values.
    """

    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="Sectioned key = value run config; defaults apply when omitted.")
    @click.option("--seed", type=int, default=None, help="Overrides [run] seed.")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                  help="Overrides [paths] out_dir.")
    @click.option("--loss", type=click.Choice([kind.value for kind in LossKind]), default=None,
                  help="Overrides [train] loss.")
    @functools.wraps(command)
    def wrapper(config_path, seed, out_dir, loss, **kwargs):
        config = load_run_config(config_path, seed=seed, out_dir=out_dir, loss=loss)
        return command(config, get_settings(), **kwargs)

    return wrapper


def echo_outputs(outputs: list[Path]):
    for path in outputs:
        click.echo(str(path))
