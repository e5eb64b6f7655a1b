import logging

import click

from .commands import analysis, data, model
from .config import get_settings
from .utils.error_handlers import handle_errors

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@click.group(help="Triplet-embedding pipeline for health-record cohorts.")
@click.version_option("1.0.0", prog_name="tricohort")
@handle_errors
def cli():
    settings = get_settings()
    logging.basicConfig(level=settings.log_level, format=LOG_FORMAT)


for module in (data, model, analysis):
    for command in module.commands:
        cli.add_command(command)


if __name__ == "__main__":
    cli()
