import functools
import logging
from typing import Callable

import click
from pydantic import ValidationError

from .errors import ConfigError, TricohortError

logger = logging.getLogger(__name__)


def friendly_validation_errors(exc: ValidationError, section: str | None = None) -> list[dict]:
    """
    Converts pydantic validation errors into user-friendly messages.
    Each entry names the offending config key and what was wrong with it.
    """
    errors = []

    for error in exc.errors():
        field_name = ".".join(str(loc) for loc in error["loc"])
        if section:
            field_name = f"{section}.{field_name}" if field_name else section
        error_type = error["type"]
        error_msg = error["msg"]
        input_value = error.get("input", "")

        if error_type in ("int_parsing", "int_from_float"):
            friendly_msg = f"Key '{field_name}' must be a valid integer, received: '{input_value}'"
        elif error_type == "float_parsing":
            friendly_msg = f"Key '{field_name}' must be a valid number, received: '{input_value}'"
        elif error_type == "bool_parsing":
            friendly_msg = f"Key '{field_name}' must be true or false, received: '{input_value}'"
        elif error_type == "extra_forbidden":
            friendly_msg = f"Key '{field_name}' is not a recognised setting"
        elif error_type == "missing":
            friendly_msg = f"Key '{field_name}' is required but was not provided"
        elif error_type == "literal_error" or error_type == "enum":
            friendly_msg = f"Key '{field_name}' has an unsupported value: {error_msg}"
        elif error_type == "value_error":
            friendly_msg = f"Key '{field_name}' has invalid value: {error_msg}"
        elif error_type in ("greater_than", "greater_than_equal"):
            friendly_msg = f"Key '{field_name}' is below the minimum allowed value"
        elif error_type in ("less_than", "less_than_equal"):
            friendly_msg = f"Key '{field_name}' is above the maximum allowed value"
        else:
            friendly_msg = f"Key '{field_name}': {error_msg}"

        errors.append({
            "field": field_name,
            "message": friendly_msg,
            "received_value": str(input_value) if input_value != "" else None,
        })

    return errors


def config_error_from_validation(exc: ValidationError, section: str | None = None) -> ConfigError:
    details = friendly_validation_errors(exc, section)
    logger.warning(f"Configuration validation failed: {details}")
    message = "; ".join(detail["message"] for detail in details)
    error = ConfigError(f"The configuration contains invalid values. {message}")
    error.details = details
    return error


def handle_errors(command: Callable) -> Callable:
    """
    Decorator for click commands.
    Logs pipeline failures with a consistent format and exits with the mapped code.
    """

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ValidationError as exc:
            error = config_error_from_validation(exc)
            logger.warning(f"{error.title}: {error}")
            click.echo(f"{error.title}: {error}", err=True)
            raise SystemExit(error.exit_code)
        except TricohortError as exc:
            logger.warning(f"{exc.title} ({type(exc).__name__}): {exc}")
            click.echo(f"{exc.title}: {exc}", err=True)
            raise SystemExit(exc.exit_code)

    return wrapper


def get_error_name(exit_code: int) -> str:
    """Get user-friendly error name based on process exit code."""
    error_names = {
        0: "Success",
        2: "Configuration Error",
        3: "Data Error",
        4: "Numeric Failure",
    }
    return error_names.get(exit_code, "Error")
