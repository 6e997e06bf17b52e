from functools import lru_cache
from typing import Callable, Generic, Optional, Sequence, Tuple, Type, TypeVar

from pydantic import BaseModel, ValidationError

from phm_engine.config import Settings
from phm_engine.exceptions import (
    AudioFormatError,
    ConfigError,
    UsageError,
    WeightFileError,
    handle_bad_request_exception,
    handle_io_exception,
    handle_usage_exception,
)

_T = TypeVar("_T")

# first match wins; anything unlisted is a processing failure
_EXIT_HANDLERS: Sequence[Tuple[Tuple[Type[BaseException], ...], Callable[[Exception], None]]] = (
    ((UsageError, ConfigError, ValidationError), handle_usage_exception),
    ((OSError, AudioFormatError, WeightFileError), handle_io_exception),
)


@lru_cache()
def get_settings() -> Settings:
    return Settings()


class AppResponseModel(BaseModel):
    detail: str


class ServiceResult(Generic[_T]):
    """Outcome of one EngineService call: a payload or the exception that stopped it."""

    def __init__(self, data: Optional[_T], exception: Optional[Exception] = None) -> None:
        self.data = data
        self.exception = exception

    @property
    def success(self) -> bool:
        return self.exception is None

    def __repr__(self) -> str:
        if self.success:
            return f"ServiceResult(ok, {type(self.data).__name__})"
        return f"ServiceResult(failed, {self.exception!r})"


def success_service_result(data: _T) -> ServiceResult[_T]:
    return ServiceResult(data=data)


def failed_service_result(exception: Exception) -> ServiceResult:
    return ServiceResult(data=None, exception=exception)


def handle_result(result: ServiceResult, expected_schema: Optional[Type[BaseModel]] = None):
    """Validate a successful payload for the CLI, or exit with the code matching the failure."""

    if result.success:
        try:
            if expected_schema is None:
                return AppResponseModel(detail=str(result.data))
            return expected_schema.model_validate(result.data)
        except Exception as raised_exception:
            handle_bad_request_exception(raised_exception)

    for families, handler in _EXIT_HANDLERS:
        if isinstance(result.exception, families):
            handler(result.exception)
    handle_bad_request_exception(result.exception)
