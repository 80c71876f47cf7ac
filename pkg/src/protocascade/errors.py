"""Exception types shared across the package."""

from __future__ import annotations


class UndefinedValueError(ValueError):
    """A statistic was requested on an input where it has no defined value."""


class CorruptLogError(ValueError):
    """An event log violates the causal ordering the tree builder relies on."""


class CalibrationError(RuntimeError):
    """The reproduction-number search could not bracket or reach its target."""


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``field`` is the dotted path of the offending key.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class InsufficientDataError(ValueError):
    """A task or estimator received too few rows, or only one class."""
