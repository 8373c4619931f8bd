"""Exception hierarchy shared by the library, CLI and HTTP service.

Every error carries a stable ``code`` so the service can map it to an
ApiError payload and the CLI to an exit status:

    validation    -> HTTP 422, exit 2
    not_found     -> HTTP 404, exit 3
    stage_failure -> HTTP 500, exit 4
    model_error   -> HTTP 500, exit 4
"""

from __future__ import annotations


class MaskEditError(Exception):
    """Base class; ``code`` identifies the ApiError category."""

    code = "model_error"

    def __init__(self, message: str, *, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def to_api_error(self) -> dict:
        payload = {"code": self.code, "message": str(self)}
        if self.stage is not None:
            payload["stage"] = self.stage
        return payload


class ValidationError(MaskEditError):
    code = "validation"


class ShapeError(ValidationError):
    """Array shapes incompatible with the operation's contract."""


class ConfigurationError(ValidationError):
    """Invalid schedule, sampler or training configuration."""


class OrderingError(ValidationError):
    """Timestep ordering violated (t_prev must be < t)."""


class DimensionError(ValidationError):
    """Resampling asked to enlarge, or degenerate target dimensions."""


class ParameterError(ValidationError):
    """Out-of-range or infeasible generation parameters."""


class NotFoundError(MaskEditError):
    code = "not_found"


class StageError(MaskEditError):
    """A pipeline stage failed; ``stage`` names the failing step."""

    code = "stage_failure"


class ModelError(MaskEditError):
    code = "model_error"


class ClientError(MaskEditError):
    """A remote MLLM/detector call failed.

    Carries retry metadata so callers can decide whether to retry or to
    surface the failure.
    """

    code = "stage_failure"

    def __init__(self, message: str, *, attempts: int = 1, retryable: bool = False,
                 stage: str | None = None):
        super().__init__(message, stage=stage)
        self.attempts = attempts
        self.retryable = retryable


class GenerationError(ModelError):
    """Data generation exhausted its resample budget."""


class TrainingDivergedError(ModelError):
    """Loss became non-finite; training aborted."""

    def __init__(self, message: str, *, step: int, loss: float):
        super().__init__(message)
        self.step = step
        self.loss = loss


EXIT_CODES = {"validation": 2, "not_found": 3, "stage_failure": 4, "model_error": 4}


def exit_code_for(err: MaskEditError) -> int:
    return EXIT_CODES.get(err.code, 4)
