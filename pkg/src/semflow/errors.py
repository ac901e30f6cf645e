"""Error taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
missing run dependencies exit 3, numeric failures exit 4.
"""


class SemflowError(Exception):
    """Base class for all package errors."""


class ConfigError(SemflowError):
    """Invalid configuration, bad argument values, or contract violations."""


class DimensionError(ConfigError):
    """Shape mismatch between tensors or grids; message names both shapes."""


class InternalError(SemflowError):
    """Broken internal invariant (a bug, not a user mistake)."""


class DependencyError(SemflowError):
    """A required artifact (checkpoint, corpus, run) is missing."""


class NumericError(SemflowError):
    """Non-finite values or numerically invalid state."""


class TrainingDivergedError(NumericError):
    """Training loss or gradients became non-finite; carries the step index."""

    def __init__(self, message: str, step: int | None = None, param: str | None = None):
        super().__init__(message)
        self.step = step
        self.param = param


class SamplingError(NumericError):
    """Sampler state became non-finite mid-trajectory; carries the step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
