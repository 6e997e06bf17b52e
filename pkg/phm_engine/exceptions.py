import typer
from rich.console import Console

error_console = Console(stderr=True)


class GeneralException(Exception):
    pass


class InsufficientSamplesError(GeneralException):
    pass


class ShapeMismatchError(GeneralException):
    pass


class DegenerateSnrError(GeneralException):
    pass


class UndefinedWeightsError(GeneralException):
    pass


class NoPhaseErrorToImprove(GeneralException):
    pass


class NoFullSegmentError(GeneralException):
    pass


class MissingComponentError(GeneralException):
    pass


class ZeroReferenceError(GeneralException):
    pass


class WeightFileError(GeneralException):
    pass


class AudioFormatError(GeneralException):
    pass


class ConfigError(GeneralException):
    pass


class UsageError(GeneralException):
    pass


def handle_bad_request_exception(exception: Exception):
    """Exits with code 1"""

    error_console.print(f"[bold red]error:[/] {exception}")
    raise typer.Exit(code=1) from exception


def handle_usage_exception(exception: Exception):
    """Exits with code 2"""

    error_console.print(f"[bold red]usage error:[/] {exception}")
    raise typer.Exit(code=2) from exception


def handle_io_exception(exception: Exception):
    """Exits with code 3"""

    error_console.print(f"[bold red]I/O error:[/] {exception}")
    raise typer.Exit(code=3) from exception

