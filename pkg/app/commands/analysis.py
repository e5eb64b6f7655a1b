import click

from ..services.pipeline_service import PipelineService
from ..utils.error_handlers import handle_errors
from .options import echo_outputs, run_options


@click.command("stats")
@handle_errors
@run_options
def stats(config, settings):
    """Lifestyle significance report with per-family FDR control."""
    echo_outputs(PipelineService.run_stage("stats", config, settings.threads))


@click.command("eval")
@handle_errors
@run_options
def evaluate(config, settings):
    """Classifier F1 on raw inputs, PCA and embeddings."""
    echo_outputs(PipelineService.run_stage("eval", config, settings.threads))


@click.command("predict")
@handle_errors
@run_options
def predict(config, settings):
    """Cross-validated next-visit prediction of the selected markers."""
    echo_outputs(PipelineService.run_stage("predict", config, settings.threads))


@click.command("pipeline")
@click.option("--gen/--no-gen", "generate", default=True, help="Start by generating a synthetic cohort.")
@handle_errors
@run_options
def pipeline(config, settings, generate):
    """Run every stage in order."""
    outputs = PipelineService.run_pipeline(config, settings.threads, generate=generate)
    click.echo(f"{len(outputs)} outputs written under {config.paths.out_dir}")


commands = [stats, evaluate, predict, pipeline]
