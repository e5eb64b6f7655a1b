import configparser
import logging
import os
from pathlib import Path
from typing import Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from .schemas.config_schemas import (
    DownstreamConfig,
    GeneratorSettings,
    PathsConfig,
    PrepConfig,
    RunConfig,
    RunSection,
    StatsConfig,
    TrainConfig,
)
from .services.metric_loss import LossKind
from .utils.error_handlers import config_error_from_validation
from .utils.errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

SECTIONS = {
    "run": RunSection,
    "paths": PathsConfig,
    "generator": GeneratorSettings,
    "prep": PrepConfig,
    "train": TrainConfig,
    "stats": StatsConfig,
    "downstream": DownstreamConfig,
}
_NO_DEFAULTS = "__no_defaults__"


class Settings(BaseModel):
    threads: int = Field(1, ge=1)
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"


def get_settings() -> Settings:
    """Process-level settings from the environment (`.env` honoured)."""
    try:
        return Settings(
            threads=os.getenv("TC_THREADS", "1"),
            log_level=os.getenv("TC_LOG_LEVEL", "INFO").strip().upper(),
        )
    except ValidationError as exc:
        raise config_error_from_validation(exc, "environment")


def _read_sections(path: Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, default_section=_NO_DEFAULTS)
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"Cannot parse config file {path}: {exc}")
    unknown = [name for name in parser.sections() if name not in SECTIONS]
    if unknown:
        raise ConfigError(f"Unknown config sections {unknown}; expected a subset of {list(SECTIONS)}")
    return {name: dict(parser.items(name)) for name in parser.sections()}


def _resolve(value: str, base: Path) -> str:
    path = Path(value).expanduser()
    return str(path if path.is_absolute() else (base / path).resolve())


def load_run_config(
    path: Optional[str | Path] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str | Path] = None,
    loss: Optional[str] = None,
) -> RunConfig:
    """
    Validates a sectioned key = value config file into a RunConfig.
    Without a file every block takes its defaults. Relative paths resolve against the
    config file's directory (the working directory without a file); flags override the file.
    """
    base = Path.cwd()
    sections: dict[str, dict[str, str]] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        sections = _read_sections(path)
        base = path.resolve().parent
        logger.info(f"Read config sections {list(sections)} from {path}")

    blocks = {}
    for name, model in SECTIONS.items():
        try:
            blocks[name] = model.model_validate(sections.get(name, {}))
        except ValidationError as exc:
            raise config_error_from_validation(exc, name)

    paths = blocks["paths"]
    blocks["paths"] = paths.model_copy(
        update={field: _resolve(getattr(paths, field), base) for field in PathsConfig.model_fields}
    )
    if out_dir is not None:
        blocks["paths"] = blocks["paths"].model_copy(update={"out_dir": _resolve(str(out_dir), Path.cwd())})
    if seed is not None:
        blocks["run"] = blocks["run"].model_copy(update={"seed": seed})
    if loss is not None:
        try:
            blocks["train"] = blocks["train"].model_copy(update={"loss": LossKind(loss)})
        except ValueError:
            raise ConfigError(f"Unknown loss '{loss}'; choose one of {[k.value for k in LossKind]}")
    return RunConfig(**blocks)
