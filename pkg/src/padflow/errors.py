"""Shared exception types."""


class PadflowError(Exception):
    """Base class for all package errors."""


class DimensionError(PadflowError):
    """Array shapes or dimensions disagree."""


class NumericError(PadflowError):
    """A non-finite value appeared where finiteness is required."""


class UsageError(PadflowError):
    """An operation was called with invalid arguments or in an invalid order."""


class StateError(PadflowError):
    """An object was used before it was ready (e.g. uninitialized ActNorm)."""


class ConfigError(PadflowError):
    """Experiment configuration failed validation."""


class FormatError(PadflowError):
    """A file could not be parsed."""
