"""
Exception hierarchy shared by every module.

Each error carries the process exit code the command line reports for it,
the same way HTTP errors carry a status code.
"""


class CaptionError(Exception):
    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ShapeError(CaptionError):
    """Tensor extents do not agree with what an operation needs."""


class ConfigError(CaptionError):
    """Invalid or unknown configuration value."""


class ContractViolation(CaptionError):
    """A caller broke an operation's precondition."""


class PreconditionError(CaptionError):
    """A required artifact (cache, checkpoint field) is missing."""


class UsageError(CaptionError):
    pass


class DataError(CaptionError):
    """Malformed manifest, vocabulary, history or caption data."""

    exit_code = 2


class TrainingError(CaptionError):
    """Divergence or non-finite values during optimisation."""

    exit_code = 3


class NumericError(CaptionError):
    exit_code = 3


class FeatureIOError(CaptionError):
    """Missing, unreadable or malformed binary file."""

    exit_code = 4
