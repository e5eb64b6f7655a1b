import click

from ..services.pipeline_service import PipelineService
from ..utils.error_handlers import handle_errors
from .options import echo_outputs, run_options


@click.command("train")
@handle_errors
@run_options
def train(config, settings):
    """Train the embedding network on the prepared triplets."""
    echo_outputs(PipelineService.run_stage("train", config, settings.threads))


@click.command("embed")
@handle_errors
@run_options
def embed(config, settings):
    """Export embedding coordinates for every preprocessed participant."""
    echo_outputs(PipelineService.run_stage("embed", config, settings.threads))


commands = [train, embed]
