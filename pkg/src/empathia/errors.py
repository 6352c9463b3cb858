"""Exception types used across the package."""


class EmpathiaError(Exception):
    """Base class for all package errors."""


class CorpusFormatError(EmpathiaError):
    """The corpus file is malformed (missing columns, bad rows)."""


class UnknownLabelError(EmpathiaError):
    """An emotion name outside the training label set was encountered."""


class EmptyCorpusError(EmpathiaError):
    """The corpus file holds no usable rows."""


class ConfigError(EmpathiaError):
    """Invalid configuration value or unknown config key."""


class InputError(EmpathiaError):
    """Invalid runtime input to a model operation."""


class NumericError(EmpathiaError):
    """Non-finite values where finite ones are required."""


class CheckpointError(EmpathiaError):
    """A checkpoint directory is missing files or inconsistent."""
