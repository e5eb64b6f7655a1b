import click

from ..services.pipeline_service import PipelineService
from ..utils.error_handlers import handle_errors
from .options import echo_outputs, run_options


@click.command("gen")
@handle_errors
@run_options
def gen(config, settings):
    """Generate a synthetic cohort, its follow-up visits and the ground truth."""
    echo_outputs(PipelineService.run_stage("gen", config, settings.threads))


@click.command("prep")
@handle_errors
@run_options
def prep(config, settings):
    """Filter, label, split and normalize the cohort; sample triplets."""
    echo_outputs(PipelineService.run_stage("prep", config, settings.threads))


commands = [gen, prep]
