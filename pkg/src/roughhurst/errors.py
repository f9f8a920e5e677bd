"""Exception hierarchy shared by the estimation pipeline and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class RoughHurstError(Exception):
    exit_code = 1


class DataError(RoughHurstError, ValueError):
    """Input data cannot support the requested statistic."""

    exit_code = 2


class RangeError(DataError):
    """A window or index range does not fit inside the series."""


class DegenerateDataError(DataError):
    """A statistic needed as a denominator vanished."""


class NumericError(RoughHurstError, ArithmeticError):
    """A numerical procedure failed or produced an unusable value."""

    exit_code = 3


class ConfigError(RoughHurstError, ValueError):
    exit_code = 4


class DomainError(RoughHurstError, ValueError):
    """An argument lies outside the mathematical domain of a function."""

    exit_code = 4


class PipelineError(RoughHurstError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: RoughHurstError):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code


class StudyError(RoughHurstError):
    """Too many Monte Carlo replicates failed for the study to be meaningful."""

    exit_code = 3
