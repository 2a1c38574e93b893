"""Exception hierarchy shared across the package.

CLI exit codes map onto these: usage errors exit 1, data errors exit 2,
runtime failures exit 3.
"""


class RdFewShotError(Exception):
    """Base class for all package errors."""


class ConfigError(RdFewShotError, ValueError):
    """Inconsistent or out-of-range configuration (radar params, shapes, k > pool)."""


class DegenerateInputError(RdFewShotError, ValueError):
    """Input is legal in type but carries no usable signal (e.g. all-zero magnitude)."""


class FormatError(RdFewShotError, ValueError):
    """On-disk artifact does not match its declared format (bad magic, truncation)."""


class StateError(RdFewShotError, RuntimeError):
    """Operation invoked in the wrong order (e.g. backward before forward)."""


class SamplingError(RdFewShotError, ValueError):
    """Episode sampling preconditions violated (too few classes or samples)."""


class TrainingDivergedError(RdFewShotError, RuntimeError):
    """Loss became non-finite during training."""
